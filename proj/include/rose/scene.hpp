#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "rose/grid.hpp"
#include "rose/mask.hpp"

namespace rose::synth {

// Scene images are (L*L) x channels matrices, one pixel per row in
// row-major order, values in [0, 1].
using Image = Eigen::MatrixXf;

struct GeneratorConfig {
    int image_side = 96;
    // Thing categories must be drawn from the supported shape names:
    // circle, square, triangle, cross, ring.
    std::vector<std::string> thing_categories{"circle", "square", "triangle", "cross", "ring"};
    // Stuff categories become horizontal bands, top to bottom.
    std::vector<std::string> stuff_categories{"sky", "ground"};
    int min_things = 1;
    int max_things = 8;
    double pixel_noise = 0.02;

    int category_count() const {
        return static_cast<int>(thing_categories.size() + stuff_categories.size());
    }
    // Things first, then stuff, in config order.
    std::vector<std::string> all_categories() const;
    int category_id(const std::string& name) const;
};

struct Scene {
    uint64_t seed = 0;
    int side = 0;
    Image image;  // (side*side) x 3
    std::vector<grid::Target> targets;
    std::vector<std::pair<std::string, int>> referring;  // phrase, target index
    std::string counting_sentence;
};

// Deterministic under (config, seed). Thing masks are pairwise disjoint and
// together with the stuff bands cover every pixel exactly once.
Scene generate_scene(const GeneratorConfig& config, uint64_t seed);

// Rebuilds the counting text from the targets: thing categories in
// ascending category id, e.g. "There are 2 circle, 1 square in this image."
std::string build_counting_sentence(const std::vector<grid::Target>& targets,
                                    const GeneratorConfig& config);

// Per-pixel ground-truth class ids (every pixel belongs to exactly one target).
std::vector<int> semantic_label_map(const Scene& scene);

// Color names the generator can use in referring phrases.
std::vector<std::string> palette_color_names();

enum class CorruptionMode { HolesPatches, ShrinkStretch };

struct CorruptionRecipe {
    CorruptionMode mode = CorruptionMode::HolesPatches;
    double magnitude = 0.5;  // in (0, 1]
    uint64_t seed = 0;
};

// Produces a degraded binary mask that differs from the input. A corruption
// that would empty the mask is retried with halved magnitude up to 3 times;
// after that the least-destructive attempt is returned.
Mask corrupt_mask(const Mask& m, const CorruptionRecipe& recipe);

}  // namespace rose::synth
