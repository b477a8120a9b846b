#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "rose/grid.hpp"
#include "rose/losses.hpp"
#include "rose/net.hpp"
#include "rose/scene.hpp"

namespace rose::run {

// Named sub-streams of the run seed so data generation, model init, the
// frozen text embedder, and per-step batch sampling never share an RNG.
enum SeedStream : uint64_t {
    kStreamTrainData = 11,
    kStreamValData = 12,
    kStreamModelInit = 13,
    kStreamEmbedder = 14,
    kStreamBatch = 15,
    kStreamEval = 16,
    kStreamRefine = 17,
};

// Relative weights for sampling the training task of each batch item.
struct TaskMix {
    double semantic = 1.0;
    double instance = 1.0;
    double referring = 1.0;
    double refinement = 1.0;
};

struct OptimizerConfig {
    double lr = 3e-4;
    int warmup_steps = 150;
    int total_steps = 2000;
    int batch_size = 8;
    int accumulation = 1;
    int checkpoint_every = 500;
};

// Inference-time knobs shared by evaluation and refinement.
struct InferenceConfig {
    int top_n = 16;
    double score_threshold = 0.5;
    double nms_iou = 0.7;
    double non_object_bias = 0.5;
};

// One experiment, fully specified: everything that affects the numbers is
// hashed; the three directory fields are pure locations and are not.
struct RunConfig {
    uint64_t seed = 42;
    synth::GeneratorConfig data;
    int train_scenes = 2000;
    int val_scenes = 100;
    net::ModelConfig model;
    grid::RoleThresholds roles;
    double neg_ratio = 1.0;
    losses::LossWeights loss;
    OptimizerConfig optim;
    InferenceConfig infer;
    TaskMix mix;

    std::string out_dir = "runs/default";
    std::string data_dir = "data/default";
    std::string assets_dir;  // defaults to the source tree's assets/

    // Deterministic YAML holding every hashed field, in fixed order with
    // %.17g doubles, so equal configs always serialize identically.
    std::string canonical() const;
    // The data-generation subset (seed + dataset section); splits embed its
    // hash so a run with a different optimizer can still reuse them.
    std::string canonical_data() const;
    // canonical() plus the location fields; this is what checkpoints embed.
    std::string serialized() const;

    uint64_t hash() const;
    uint64_t data_hash() const;
    std::string hash_hex() const;
    std::string data_hash_hex() const;

    void validate() const;
};

// Parses a run config from YAML text; omitted fields keep their defaults.
RunConfig parse_run_config(const std::string& yaml_text);

// Loads a config file and applies the ROSE_LAB_SEED environment override
// (the variable, when set, must parse as a non-negative integer).
RunConfig load_run_config(const std::filesystem::path& path);

uint64_t seed_from_env(uint64_t fallback);

}  // namespace rose::run
