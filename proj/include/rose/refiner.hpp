#pragma once

#include <filesystem>

#include "rose/evaluator.hpp"
#include "rose/refine.hpp"

namespace rose::run {

// One refinement episode: which scene, what was wrong, and the mask IoU /
// category before and after the conversational repair.
struct RefinementRecord {
    int scene_index = 0;
    refine::Situation situation = refine::Situation::Mask;
    double iou_before = 0.0;
    double iou_after = 0.0;
    std::string category_before;
    std::string category_after;
};

// Runs the model on an assembled case (refinement prompt plus mask channel)
// and decodes the repaired prediction from the top-objectness patch.
decode::Prediction refine_pass(net::Model<float>& model, const Session& s,
                               const synth::Image& image, const refine::RefinementCase& rcase);

struct RefineResult {
    std::filesystem::path report_path;  // JSON-lines episode records
    std::filesystem::path dump_path;    // refined prediction dump
    std::vector<RefinementRecord> records;
    std::string task;
};

// Refines a prediction dump in place: selects the worst predictions per the
// dump's task, judges each situation, builds the conversational case, runs
// the repair pass, and writes the refined dump plus the episode report.
// Rejects dumps whose config hash, split, or scenes do not match.
RefineResult refine_run(net::Model<float>& model, const Session& s,
                        const std::filesystem::path& dump_path, const std::string& split_name,
                        const std::filesystem::path& out_dir);

}  // namespace rose::run
