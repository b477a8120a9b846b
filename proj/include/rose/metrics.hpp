#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "rose/mask.hpp"

namespace rose::metrics {

// Pixel confusion over C classes plus the non-object slot at index C:
// conf(m, n) counts pixels whose true class is n and predicted class is m.
// Both label vectors use values in [0, C]. Counts are additive, so partition
// matrices can simply be summed.
Eigen::MatrixXd confusion_matrix(const std::vector<int>& predicted,
                                 const std::vector<int>& actual, int classes);

// Mean IoU over the real classes (the non-object row/column is excluded).
// Classes that appear in neither prediction nor ground truth are skipped;
// returns 0 when no class is eligible.
double miou(const Eigen::MatrixXd& confusion);

// Instance-level inputs for detection metrics. `image` scopes matching:
// predictions only ever match ground truth from the same image.
struct EvalInstance {
    Mask mask;
    std::string category;
    double score = 0.0;
    int image = 0;
};

struct GtInstance {
    Mask mask;
    std::string category;
    int image = 0;
};

struct CocoResult {
    double map = 0.0;   // mean over categories and IoU 0.50:0.05:0.95
    double ap50 = 0.0;
    double ap75 = 0.0;
};

// COCO-style average precision: greedy score-descending matching per
// category and IoU threshold, 101-point interpolated precision envelope,
// averaged over the ten thresholds 0.50:0.05:0.95. Categories without any
// ground-truth instance are excluded from every mean.
CocoResult coco_map(const std::vector<EvalInstance>& predictions,
                    const std::vector<GtInstance>& ground_truth);

// Cumulative IoU over aligned (prediction, ground truth) mask pairs:
// sum of intersections divided by sum of unions.
double ciou(const std::vector<Mask>& predictions, const std::vector<Mask>& ground_truth);

}  // namespace rose::metrics
