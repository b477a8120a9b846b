#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "rose/mask.hpp"

namespace rose::decode {

// One decoded patch: the objectness score, the generated category name, the
// soft mask probabilities, and the binarized mask. `patch` records which
// grid cell produced it so refinement can trace predictions back.
struct Prediction {
    int patch = -1;
    double score = 0.0;
    std::string category;
    Eigen::VectorXf soft;  // L*L sigmoid probabilities
    Mask mask;             // soft > 0.5
};

Prediction make_prediction(int patch, double score, std::string category,
                           const Eigen::VectorXf& soft, int side);

// Indices of the N highest-scoring patches, ordered by descending score
// with ties broken toward the lower index. N larger than the patch count
// returns every index; N <= 0 returns none.
std::vector<int> filter_topn(const std::vector<double>& scores, int n);

// Index of the single best patch (referring selection).
int select_referring(const std::vector<double>& scores);

// Per-pixel fusion of instance predictions into a semantic labeling. Each
// class channel holds the pixelwise maximum of score * soft over the
// predictions decoded to that class; the extra non-object channel starts at
// the constant beta and also absorbs predictions whose decoded name is not
// in `class_names`. Labels are the per-pixel argmax (ties toward the lower
// channel), with the non-object channel at index class_names.size().
struct SemanticMap {
    int side = 0;
    int classes = 0;
    Eigen::MatrixXf score;   // (side*side) x (classes + 1)
    std::vector<int> labels; // side*side entries in [0, classes]
};

SemanticMap stack_semantic(const std::vector<Prediction>& preds,
                           const std::vector<std::string>& class_names, int side,
                           double beta = 0.5);

// Instance filtering: drops predictions scoring below `score_threshold`,
// then greedy mask-IoU NMS per category in descending score order. Returns
// the survivors sorted by descending score (ties toward the lower input
// index).
std::vector<Prediction> postprocess_instances(const std::vector<Prediction>& preds,
                                              double score_threshold = 0.5,
                                              double nms_iou = 0.7);

}  // namespace rose::decode
