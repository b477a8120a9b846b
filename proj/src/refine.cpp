#include "rose/refine.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "rose/common.hpp"

namespace rose::refine {

const char* situation_name(Situation s) {
    switch (s) {
        case Situation::Mask: return "mask";
        case Situation::Category: return "category";
        case Situation::Missed: return "missed";
    }
    return "unknown";
}

long& skipped_empty_gt_warnings() {
    static long count = 0;
    return count;
}

double umi(const Eigen::MatrixXd& confusion, int c) {
    if (confusion.rows() != confusion.cols() || c < 0 || c >= confusion.rows())
        throw std::logic_error("umi: class index out of range");
    const double inter = confusion(c, c);
    const double uni = confusion.row(c).sum() + confusion.col(c).sum() - inter;
    return uni - inter;
}

std::vector<int> select_semantic_targets(const Eigen::MatrixXd& confusion, int k) {
    if (confusion.rows() != confusion.cols() || confusion.rows() < 1)
        throw std::logic_error("select_semantic_targets: confusion matrix must be square");
    const int classes = static_cast<int>(confusion.rows()) - 1;
    std::vector<int> eligible;
    for (int c = 0; c < classes; ++c) {
        if (confusion.col(c).sum() <= 0.0) {
            if (confusion.row(c).sum() > 0.0) ++skipped_empty_gt_warnings();
            continue;  // nothing of this class exists in the scene
        }
        if (umi(confusion, c) > 0.0) eligible.push_back(c);
    }
    std::stable_sort(eligible.begin(), eligible.end(),
                     [&](int a, int b) { return umi(confusion, a) > umi(confusion, b); });
    if (k >= 0 && static_cast<int>(eligible.size()) > k) eligible.resize(static_cast<size_t>(k));
    return eligible;
}

Situation judge_situation(const Eigen::MatrixXd& confusion, int idx) {
    if (confusion.rows() != confusion.cols() || idx < 0 || idx >= confusion.rows() - 1)
        throw std::logic_error("judge_situation: class index out of range");
    const double gt_pixels = confusion.col(idx).sum();
    if (gt_pixels <= 0.0)
        throw std::logic_error("judge_situation: class has no ground-truth pixels");

    const double recall = confusion(idx, idx) / gt_pixels;
    if (recall >= 0.2) return Situation::Mask;

    const int non_object = static_cast<int>(confusion.rows()) - 1;
    double other_cat_iou = 0.0;
    for (int m = 0; m < non_object; ++m)
        other_cat_iou = std::max(other_cat_iou, confusion(m, idx) / gt_pixels);
    return other_cat_iou > 0.5 ? Situation::Category : Situation::Missed;
}

std::vector<InstanceTarget> select_instance_targets(const std::vector<decode::Prediction>& preds,
                                                    const std::vector<grid::Target>& targets,
                                                    int k) {
    std::vector<int> things;
    for (int i = 0; i < static_cast<int>(targets.size()); ++i)
        if (targets[static_cast<size_t>(i)].is_thing) things.push_back(i);

    std::vector<int> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return preds[static_cast<size_t>(a)].score > preds[static_cast<size_t>(b)].score;
    });

    std::vector<InstanceTarget> out;
    for (int i : order) {
        if (static_cast<int>(out.size()) >= k) break;
        const auto& pred = preds[static_cast<size_t>(i)];
        int best_gt = -1;
        double best_iou = 0.0;
        for (int g : things) {
            const double v = mask_iou(pred.mask, targets[static_cast<size_t>(g)].mask);
            if (best_gt < 0 || v > best_iou) {
                best_iou = v;
                best_gt = g;
            }
        }
        if (best_gt >= 0 && best_iou >= 0.5) continue;  // already a good detection

        InstanceTarget t;
        t.pred_index = i;
        t.matched_gt = best_gt;
        t.situation = (best_gt >= 0 &&
                       pred.category != targets[static_cast<size_t>(best_gt)].category_name)
                          ? Situation::Category
                          : Situation::Mask;
        out.push_back(t);
    }
    return out;
}

std::string bbox_string(const Mask& region) {
    if (region.popcount() == 0) return "[0, 0, 0, 0]";
    const auto box = mask_bbox(region);
    char buf[80];
    std::snprintf(buf, sizeof(buf), "[%d, %d, %d, %d]", box[0], box[1], box[2], box[3]);
    return buf;
}

namespace {

std::string fill(std::string text, const std::string& key, const std::string& value) {
    for (size_t at = text.find(key); at != std::string::npos; at = text.find(key, at))
        text.replace(at, key.size(), value);
    return text;
}

}  // namespace

RefinementCase build_case(Situation situation, const Mask& region,
                          const std::string& wrong_category, const text::PromptBanks& banks,
                          uint64_t seed) {
    const std::vector<std::string>* bank = nullptr;
    switch (situation) {
        case Situation::Mask: bank = &banks.refine_mask; break;
        case Situation::Category: bank = &banks.refine_category; break;
        case Situation::Missed: bank = &banks.refine_missed; break;
    }
    if (!bank || bank->empty()) throw std::logic_error("build_case: empty prompt bank");

    Rng rng(seed);
    std::string prompt = (*bank)[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(bank->size()) - 1))];
    prompt = fill(prompt, "{bbox}", bbox_string(region));
    if (situation == Situation::Category) {
        if (wrong_category.empty())
            throw std::logic_error("build_case: category situation needs the wrong name");
        prompt = fill(prompt, "{category}", wrong_category);
    }

    RefinementCase out;
    out.situation = situation;
    out.prompt = std::move(prompt);
    out.channel = situation == Situation::Missed ? Mask(region.h, region.w) : region;
    return out;
}

}  // namespace rose::refine
