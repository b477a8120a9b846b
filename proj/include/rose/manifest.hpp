#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rose/scene.hpp"

namespace rose::synth {

// On-disk split: one JSON manifest plus one raw float32 image file per
// scene (planar, channel after channel, Eigen column order).
struct DatasetSplit {
    std::filesystem::path root;
    std::string split;
    int image_side = 0;
    std::vector<std::string> categories;
    std::string config_hash;
    std::vector<Scene> scenes;              // images left empty; load on demand
    std::vector<std::string> image_paths;   // relative to root

    Image load_image(size_t index) const;
    size_t size() const { return scenes.size(); }
};

void write_image_f32(const std::filesystem::path& path, const Image& image);
Image read_image_f32(const std::filesystem::path& path, int side);

// Writes <dir>/<split>.json and <dir>/images/<split>_<id>.f32 files.
// Scenes must carry their images.
void write_split(const std::filesystem::path& dir, const std::string& split,
                 const GeneratorConfig& config, const std::string& config_hash,
                 const std::vector<Scene>& scenes);

DatasetSplit read_split(const std::filesystem::path& dir, const std::string& split);

}  // namespace rose::synth
