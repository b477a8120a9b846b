#include "rose/metrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

namespace rose::metrics {

Eigen::MatrixXd confusion_matrix(const std::vector<int>& predicted,
                                 const std::vector<int>& actual, int classes) {
    if (classes < 0) throw std::logic_error("confusion_matrix: negative class count");
    if (predicted.size() != actual.size())
        throw std::logic_error("confusion_matrix: label vectors differ in length");
    Eigen::MatrixXd conf = Eigen::MatrixXd::Zero(classes + 1, classes + 1);
    for (size_t i = 0; i < predicted.size(); ++i) {
        const int m = predicted[i], n = actual[i];
        if (m < 0 || m > classes || n < 0 || n > classes)
            throw std::logic_error("confusion_matrix: label out of range");
        conf(m, n) += 1.0;
    }
    return conf;
}

double miou(const Eigen::MatrixXd& confusion) {
    if (confusion.rows() != confusion.cols() || confusion.rows() < 1)
        throw std::logic_error("miou: confusion matrix must be square");
    const int classes = static_cast<int>(confusion.rows()) - 1;
    double total = 0.0;
    int eligible = 0;
    for (int c = 0; c < classes; ++c) {
        const double inter = confusion(c, c);
        const double uni = confusion.row(c).sum() + confusion.col(c).sum() - inter;
        if (uni <= 0.0) continue;
        total += inter / uni;
        ++eligible;
    }
    return eligible == 0 ? 0.0 : total / eligible;
}

namespace {

// 101-point interpolated AP for one (category, threshold) pair, given the
// rank-ordered hit flags and the number of ground-truth instances.
double ap_101(const std::vector<int>& hits, int gt_count) {
    std::vector<double> precision, recall;
    int tp = 0;
    for (size_t k = 0; k < hits.size(); ++k) {
        tp += hits[k];
        precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
        recall.push_back(static_cast<double>(tp) / gt_count);
    }
    double sum = 0.0;
    for (int s = 0; s <= 100; ++s) {
        const double r = s / 100.0;
        double best = 0.0;
        for (size_t k = 0; k < hits.size(); ++k)
            if (recall[k] >= r) best = std::max(best, precision[k]);
        sum += best;
    }
    return sum / 101.0;
}

}  // namespace

CocoResult coco_map(const std::vector<EvalInstance>& predictions,
                    const std::vector<GtInstance>& ground_truth) {
    std::set<std::string> categories;
    for (const auto& g : ground_truth) categories.insert(g.category);

    std::vector<double> thresholds;
    for (int i = 0; i < 10; ++i) thresholds.push_back(0.5 + 0.05 * i);

    CocoResult out;
    if (categories.empty()) return out;

    double map_sum = 0.0, ap50_sum = 0.0, ap75_sum = 0.0;
    for (const auto& cat : categories) {
        std::vector<int> gt_idx;
        for (int i = 0; i < static_cast<int>(ground_truth.size()); ++i)
            if (ground_truth[static_cast<size_t>(i)].category == cat) gt_idx.push_back(i);

        std::vector<int> pred_idx;
        for (int i = 0; i < static_cast<int>(predictions.size()); ++i)
            if (predictions[static_cast<size_t>(i)].category == cat) pred_idx.push_back(i);
        std::stable_sort(pred_idx.begin(), pred_idx.end(), [&](int a, int b) {
            return predictions[static_cast<size_t>(a)].score >
                   predictions[static_cast<size_t>(b)].score;
        });

        // IoU of every (prediction, gt) pair within the same image.
        Eigen::MatrixXd iou = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(pred_idx.size()),
                                                    static_cast<Eigen::Index>(gt_idx.size()));
        for (size_t p = 0; p < pred_idx.size(); ++p)
            for (size_t g = 0; g < gt_idx.size(); ++g) {
                const auto& pr = predictions[static_cast<size_t>(pred_idx[p])];
                const auto& gt = ground_truth[static_cast<size_t>(gt_idx[g])];
                if (pr.image == gt.image)
                    iou(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(g)) =
                        mask_iou(pr.mask, gt.mask);
            }

        for (size_t t = 0; t < thresholds.size(); ++t) {
            std::vector<bool> taken(gt_idx.size(), false);
            std::vector<int> hits;
            for (size_t p = 0; p < pred_idx.size(); ++p) {
                int best_g = -1;
                double best_iou = 0.0;
                for (size_t g = 0; g < gt_idx.size(); ++g) {
                    if (taken[g]) continue;
                    const double v = iou(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(g));
                    if (v < thresholds[t]) continue;
                    if (best_g < 0 || v > best_iou) {
                        best_iou = v;
                        best_g = static_cast<int>(g);
                    }
                }
                if (best_g >= 0) {
                    taken[static_cast<size_t>(best_g)] = true;
                    hits.push_back(1);
                } else {
                    hits.push_back(0);
                }
            }
            const double ap = ap_101(hits, static_cast<int>(gt_idx.size()));
            map_sum += ap;
            if (t == 0) ap50_sum += ap;
            if (thresholds[t] == 0.75) ap75_sum += ap;
        }
    }
    const double cats = static_cast<double>(categories.size());
    out.map = map_sum / (cats * static_cast<double>(thresholds.size()));
    out.ap50 = ap50_sum / cats;
    out.ap75 = ap75_sum / cats;
    return out;
}

double ciou(const std::vector<Mask>& predictions, const std::vector<Mask>& ground_truth) {
    if (predictions.size() != ground_truth.size())
        throw std::logic_error("ciou: prediction and ground-truth counts differ");
    long inter = 0, uni = 0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        inter += mask_intersection(predictions[i], ground_truth[i]);
        uni += mask_union(predictions[i], ground_truth[i]);
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace rose::metrics
