#pragma once

#include <filesystem>
#include <iosfwd>

#include "rose/checkpoint.hpp"
#include "rose/harness.hpp"

namespace rose::run {

// One assembled training example, independent of any tape. `pairs` drives
// the mask, category, and signature streams; `plan` drives objectness.
// The vanilla baseline instead hangs mask supervision off its <SEG> token
// rows and leaves the patch-head fields empty.
struct TrainExample {
    std::string task;
    net::SequenceLayout layout;
    bool has_channel = false;
    Mask channel;

    std::vector<grid::Target> sup_targets;        // targets the plan refers to
    std::vector<std::pair<int, int>> pairs;       // (patch, index into sup_targets)
    grid::SupervisionPlan plan;

    std::vector<int> seg_tokens;                  // token indices of <SEG>
    std::vector<Mask> seg_masks;
};

TrainExample build_semantic_example(const Session& s, const synth::Scene& scene, Rng& rng);
TrainExample build_instance_example(const Session& s, const synth::Scene& scene, Rng& rng);
TrainExample build_referring_example(const Session& s, const synth::Scene& scene, Rng& rng);
TrainExample build_refinement_example(const Session& s, const synth::Scene& scene, Rng& rng);
TrainExample build_vanilla_example(const Session& s, const synth::Scene& scene, Rng& rng);

// Samples the task from the config's mix weights (always vanilla when the
// model arch is "vanilla") and dispatches to the builder above.
TrainExample build_example(const Session& s, const synth::Scene& scene, Rng& rng);

// Records the full loss of one example on `tape` (to which the model must
// already be bound) and returns the unscaled scalar loss node.
int example_loss(net::Model<float>& model, ad::Tape<float>& tape, const Session& s,
                 const synth::Image& image, const TrainExample& ex);

// Linear warmup to optim.lr, then linear decay toward zero over the
// remaining updates. `update_index` is 0-based.
double lr_at(const OptimizerConfig& o, long update_index);

struct TrainResult {
    std::filesystem::path final_checkpoint;
    std::filesystem::path loss_csv;
    long steps_run = 0;
    double early_window_loss = 0.0;  // mean loss over steps 41..60
    double final_window_loss = 0.0;  // mean loss over the last 20 steps
};

// Runs (or resumes) one training run. Requires the train split manifest to
// exist under cfg.data_dir. Writes loss.csv, periodic checkpoints, and
// final.ckpt under cfg.out_dir; a non-finite batch loss aborts with a
// diagnostic naming the step and batch seed. `deterministic` fixes the
// BLAS-visible thread count so loss logs are bitwise reproducible.
TrainResult train_run(const RunConfig& cfg, const std::filesystem::path& resume,
                      bool deterministic, std::ostream& progress);

}  // namespace rose::run
