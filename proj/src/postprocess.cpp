#include "rose/postprocess.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace rose::decode {

Prediction make_prediction(int patch, double score, std::string category,
                           const Eigen::VectorXf& soft, int side) {
    if (static_cast<int>(soft.size()) != side * side)
        throw std::logic_error("make_prediction: soft mask size must be side*side");
    Prediction p;
    p.patch = patch;
    p.score = score;
    p.category = std::move(category);
    p.soft = soft;
    p.mask = Mask(side, side);
    for (int i = 0; i < side * side; ++i) p.mask.data[static_cast<size_t>(i)] = soft[i] > 0.5f;
    return p;
}

std::vector<int> filter_topn(const std::vector<double>& scores, int n) {
    if (n <= 0) return {};
    std::vector<int> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)]; });
    if (n < static_cast<int>(idx.size())) idx.resize(static_cast<size_t>(n));
    return idx;
}

int select_referring(const std::vector<double>& scores) {
    if (scores.empty()) throw std::logic_error("select_referring: no patches");
    return filter_topn(scores, 1)[0];
}

SemanticMap stack_semantic(const std::vector<Prediction>& preds,
                           const std::vector<std::string>& class_names, int side, double beta) {
    const int pixels = side * side;
    const int c = static_cast<int>(class_names.size());
    SemanticMap out;
    out.side = side;
    out.classes = c;
    out.score = Eigen::MatrixXf::Zero(pixels, c + 1);
    out.score.col(c).setConstant(static_cast<float>(beta));

    std::unordered_map<std::string, int> channel;
    for (int i = 0; i < c; ++i) channel[class_names[static_cast<size_t>(i)]] = i;

    for (const auto& p : preds) {
        if (static_cast<int>(p.soft.size()) != pixels)
            throw std::logic_error("stack_semantic: prediction mask size mismatch");
        auto it = channel.find(p.category);
        const int ch = it == channel.end() ? c : it->second;
        out.score.col(ch) =
            out.score.col(ch).cwiseMax(static_cast<float>(p.score) * p.soft);
    }

    out.labels.resize(static_cast<size_t>(pixels));
    for (int i = 0; i < pixels; ++i) {
        Eigen::Index best = 0;
        out.score.row(i).maxCoeff(&best);
        out.labels[static_cast<size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

std::vector<Prediction> postprocess_instances(const std::vector<Prediction>& preds,
                                              double score_threshold, double nms_iou) {
    std::vector<int> order;
    for (int i = 0; i < static_cast<int>(preds.size()); ++i)
        if (preds[static_cast<size_t>(i)].score >= score_threshold) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return preds[static_cast<size_t>(a)].score > preds[static_cast<size_t>(b)].score;
    });

    std::vector<int> kept;
    for (int i : order) {
        bool drop = false;
        for (int j : kept) {
            if (preds[static_cast<size_t>(j)].category != preds[static_cast<size_t>(i)].category)
                continue;
            if (mask_iou(preds[static_cast<size_t>(j)].mask, preds[static_cast<size_t>(i)].mask) >
                nms_iou) {
                drop = true;
                break;
            }
        }
        if (!drop) kept.push_back(i);
    }

    std::vector<Prediction> out;
    out.reserve(kept.size());
    for (int i : kept) out.push_back(preds[static_cast<size_t>(i)]);
    return out;
}

}  // namespace rose::decode
