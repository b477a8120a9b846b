#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <utility>

#include "rose/harness.hpp"
#include "rose/postprocess.hpp"
#include "rose/trainer.hpp"

namespace rose::run {

// The evaluable task names, in the order error messages list them.
const std::vector<std::string>& eval_tasks();

// Decoded predictions for one scene. For semantic and instance these are
// the top-N patches before any stacking or NMS; for referring there is one
// prediction per referring phrase, aligned with `ref_targets`.
struct ScenePredictions {
    int scene_index = 0;
    uint64_t scene_seed = 0;
    std::vector<decode::Prediction> preds;
    std::vector<int> ref_targets;
};

ScenePredictions decode_scene(net::Model<float>& model, const Session& s,
                              const synth::DatasetSplit& split, size_t index,
                              const std::string& task);

// Category-generation accuracy on the scene's positive patches, returned
// as (correct, total).
std::pair<long, long> category_accuracy_scene(net::Model<float>& model, const Session& s,
                                              const synth::DatasetSplit& split, size_t index);

struct EvalResult {
    nlohmann::json report;
    std::filesystem::path report_path;
    std::filesystem::path dump_path;
};

// Runs the task's full pipeline over a split: decodes every scene, writes
// the prediction dump and the schema-validated metrics report into
// `out_dir`, and optionally renders PNG overlays.
EvalResult evaluate_run(net::Model<float>& model, const Session& s, const std::string& split_name,
                        const std::string& task, const std::filesystem::path& out_dir,
                        const std::filesystem::path& overlays_dir = {});

// Checks `report` against the versioned schema file; throws ConfigError
// naming the first violated field.
void validate_report(const nlohmann::json& report, const std::filesystem::path& schema_path);

// Renders the scene image with prediction masks tinted and category labels
// drawn at each mask's corner.
void render_overlay(const synth::Image& image, int side,
                    const std::vector<decode::Prediction>& preds,
                    const std::vector<std::string>& class_names,
                    const std::filesystem::path& path);

}  // namespace rose::run
