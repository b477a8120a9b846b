#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "rose/grid.hpp"
#include "rose/mask.hpp"
#include "rose/postprocess.hpp"
#include "rose/vocab.hpp"

namespace rose::refine {

// How a bad prediction should be repaired, which decides both the prompt
// bank and what goes into the extra input channel.
enum class Situation { Mask, Category, Missed };

const char* situation_name(Situation s);

// Count of semantic classes skipped during target selection because they
// had no ground-truth pixels at all.
long& skipped_empty_gt_warnings();

// Union-minus-intersection for class c of a (C+1)x(C+1) confusion matrix:
// the number of pixels on which prediction and ground truth disagree about
// the class, i.e. how much refining it could possibly help.
double umi(const Eigen::MatrixXd& confusion, int c);

// The (up to) `k` real classes with the highest UmI, descending, ties
// toward the lower class index. Classes with no ground-truth pixels are
// skipped with a warning; classes with UmI == 0 need no refinement.
std::vector<int> select_semantic_targets(const Eigen::MatrixXd& confusion, int k = 5);

// Decides the repair mode for class `idx` from its confusion column:
//   recall >= 0.2                -> Mask (the object is found but ragged)
//   else if some real-class row
//        captures > 0.5 of it    -> Category (found but mislabeled)
//   else                         -> Missed (not found at all)
// The non-object row is excluded from the "captured by another class"
// check; the class's own row is not. Throws if the class has no
// ground-truth pixels.
Situation judge_situation(const Eigen::MatrixXd& confusion, int idx);

// Instance-task selection: predictions whose best ground-truth IoU falls
// below 0.5, in descending objectness order, capped at `k`. A prediction
// whose decoded category already matches its best ground-truth target only
// needs its mask repaired; otherwise the category is the problem.
struct InstanceTarget {
    int pred_index = -1;
    int matched_gt = -1;  // -1 when the scene has no thing targets
    Situation situation = Situation::Mask;
};

std::vector<InstanceTarget> select_instance_targets(const std::vector<decode::Prediction>& preds,
                                                    const std::vector<grid::Target>& targets,
                                                    int k = 10);

// A fully assembled refinement example: the filled prompt and the mask for
// the extra input channel (all zeros for Missed, where the model only gets
// the bbox as a hint).
struct RefinementCase {
    Situation situation = Situation::Mask;
    std::string prompt;
    Mask channel;
};

// Formats an inclusive bbox as "[r0, c0, r1, c1]"; an empty region formats
// as "[0, 0, 0, 0]".
std::string bbox_string(const Mask& region);

// Draws one of the ten templates of the situation's bank (seeded, uniform)
// and substitutes {bbox} from `region` and, for Category, {category} with
// the wrongly predicted name. The channel carries `region` for Mask and
// Category cases and stays empty for Missed.
RefinementCase build_case(Situation situation, const Mask& region,
                          const std::string& wrong_category, const text::PromptBanks& banks,
                          uint64_t seed);

}  // namespace rose::refine
