#include "doctest.h"

#include <algorithm>
#include <map>
#include <set>

#include "rose/common.hpp"
#include "rose/metrics.hpp"

using namespace rose;

namespace {

Mask random_mask8(Rng& rng, double density = 0.4) {
    Mask m(8, 8);
    for (auto& b : m.data) b = rng.coin(density) ? 1 : 0;
    return m;
}

// Independent mIoU oracle working from raw labels, not the confusion matrix.
double miou_oracle(const std::vector<int>& pred, const std::vector<int>& act, int classes) {
    double total = 0.0;
    int eligible = 0;
    for (int c = 0; c < classes; ++c) {
        long inter = 0, uni = 0;
        for (size_t i = 0; i < pred.size(); ++i) {
            const bool p = pred[i] == c, a = act[i] == c;
            inter += p && a;
            uni += p || a;
        }
        if (uni == 0) continue;
        total += static_cast<double>(inter) / static_cast<double>(uni);
        ++eligible;
    }
    return eligible == 0 ? 0.0 : total / eligible;
}

// Independent COCO oracle: same matching rules, but the precision envelope
// is materialized right-to-left before sampling.
metrics::CocoResult coco_oracle(const std::vector<metrics::EvalInstance>& preds,
                                const std::vector<metrics::GtInstance>& gts) {
    std::set<std::string> cats;
    for (const auto& g : gts) cats.insert(g.category);
    metrics::CocoResult out;
    if (cats.empty()) return out;

    double map_sum = 0.0, ap50_sum = 0.0, ap75_sum = 0.0;
    for (const auto& cat : cats) {
        std::vector<std::pair<double, int>> order;
        for (int i = 0; i < static_cast<int>(preds.size()); ++i)
            if (preds[static_cast<size_t>(i)].category == cat)
                order.emplace_back(-preds[static_cast<size_t>(i)].score, i);
        std::sort(order.begin(), order.end());
        std::vector<int> gidx;
        for (int i = 0; i < static_cast<int>(gts.size()); ++i)
            if (gts[static_cast<size_t>(i)].category == cat) gidx.push_back(i);

        for (int t = 0; t < 10; ++t) {
            const double thr = 0.5 + 0.05 * t;
            std::vector<bool> used(gidx.size(), false);
            std::vector<double> precision, recall;
            int tp = 0, seen = 0;
            for (const auto& [negscore, pi] : order) {
                ++seen;
                int best = -1;
                double best_v = 0.0;
                for (size_t g = 0; g < gidx.size(); ++g) {
                    if (used[g]) continue;
                    const auto& gt = gts[static_cast<size_t>(gidx[g])];
                    if (gt.image != preds[static_cast<size_t>(pi)].image) continue;
                    const double v = mask_iou(preds[static_cast<size_t>(pi)].mask, gt.mask);
                    if (v >= thr && v > best_v) {
                        best_v = v;
                        best = static_cast<int>(g);
                    }
                }
                if (best >= 0) {
                    used[static_cast<size_t>(best)] = true;
                    ++tp;
                }
                precision.push_back(static_cast<double>(tp) / seen);
                recall.push_back(static_cast<double>(tp) / static_cast<double>(gidx.size()));
            }
            std::vector<double> envelope = precision;
            for (int k = static_cast<int>(envelope.size()) - 2; k >= 0; --k)
                envelope[static_cast<size_t>(k)] =
                    std::max(envelope[static_cast<size_t>(k)], envelope[static_cast<size_t>(k + 1)]);
            double ap = 0.0;
            for (int s = 0; s <= 100; ++s) {
                const double r = s / 100.0;
                double p = 0.0;
                for (size_t k = 0; k < recall.size(); ++k)
                    if (recall[k] >= r) {
                        p = envelope[k];
                        break;
                    }
                ap += p;
            }
            ap /= 101.0;
            map_sum += ap;
            if (t == 0) ap50_sum += ap;
            if (t == 5) ap75_sum += ap;
        }
    }
    const double c = static_cast<double>(cats.size());
    out.map = map_sum / (c * 10.0);
    out.ap50 = ap50_sum / c;
    out.ap75 = ap75_sum / c;
    return out;
}

Mask from_bits(const std::vector<int>& on) {
    Mask m(8, 8);
    for (int i : on) m.data[static_cast<size_t>(i)] = 1;
    return m;
}

}  // namespace

TEST_CASE("confusion_matrix matches a naive count and is additive") {
    Rng rng(1);
    for (int rep = 0; rep < 50; ++rep) {
        const int classes = static_cast<int>(rng.uniform_int(1, 5));
        const int n = static_cast<int>(rng.uniform_int(1, 200));
        std::vector<int> pred, act;
        for (int i = 0; i < n; ++i) {
            pred.push_back(static_cast<int>(rng.uniform_int(0, classes)));
            act.push_back(static_cast<int>(rng.uniform_int(0, classes)));
        }
        auto conf = metrics::confusion_matrix(pred, act, classes);
        Eigen::MatrixXd naive = Eigen::MatrixXd::Zero(classes + 1, classes + 1);
        for (int i = 0; i < n; ++i)
            naive(pred[static_cast<size_t>(i)], act[static_cast<size_t>(i)]) += 1.0;
        CHECK_EQ((conf - naive).cwiseAbs().maxCoeff(), 0.0);
        CHECK_EQ(conf.sum(), static_cast<double>(n));

        // Additivity over partitions.
        const size_t cut = static_cast<size_t>(n) / 2;
        auto a = metrics::confusion_matrix({pred.begin(), pred.begin() + cut},
                                           {act.begin(), act.begin() + cut}, classes);
        auto b = metrics::confusion_matrix({pred.begin() + cut, pred.end()},
                                           {act.begin() + cut, act.end()}, classes);
        CHECK_EQ(((a + b) - conf).cwiseAbs().maxCoeff(), 0.0);
    }

    CHECK_THROWS_AS(metrics::confusion_matrix({0, 1}, {0}, 2), std::logic_error);
    CHECK_THROWS_AS(metrics::confusion_matrix({0, 3}, {0, 0}, 2), std::logic_error);
    CHECK_THROWS_AS(metrics::confusion_matrix({-1}, {0}, 2), std::logic_error);
}

TEST_CASE("miou matches the label-level oracle and skips empty classes") {
    Rng rng(2);
    for (int rep = 0; rep < 60; ++rep) {
        const int classes = static_cast<int>(rng.uniform_int(1, 4));
        const int n = static_cast<int>(rng.uniform_int(1, 300));
        std::vector<int> pred, act;
        for (int i = 0; i < n; ++i) {
            // Bias away from some classes so zero-union cases actually occur.
            pred.push_back(static_cast<int>(rng.uniform_int(0, classes)) % (classes + 1));
            act.push_back(static_cast<int>(rng.uniform_int(0, 1)) == 0
                              ? 0
                              : static_cast<int>(rng.uniform_int(0, classes)));
        }
        auto conf = metrics::confusion_matrix(pred, act, classes);
        CHECK_EQ(metrics::miou(conf), doctest::Approx(miou_oracle(pred, act, classes)).epsilon(1e-12));
    }

    // Perfect labeling scores 1, and untouched classes do not dilute it.
    auto perfect = metrics::confusion_matrix({0, 2, 2, 3}, {0, 2, 2, 3}, 3);
    CHECK_EQ(metrics::miou(perfect), doctest::Approx(1.0));

    // Non-object pixels are excluded: predicting everything as non-object
    // gives IoU 0 for every real class that appears.
    auto all_bg = metrics::confusion_matrix({2, 2, 2}, {0, 1, 1}, 2);
    CHECK_EQ(metrics::miou(all_bg), doctest::Approx(0.0));

    CHECK_EQ(metrics::miou(Eigen::MatrixXd::Zero(3, 3)), 0.0);
    CHECK_THROWS_AS(metrics::miou(Eigen::MatrixXd::Zero(2, 3)), std::logic_error);
}

TEST_CASE("coco_map: hand-evaluated AP50 scenario") {
    Mask gt1 = from_bits({0, 1, 2, 3});
    Mask gt2 = from_bits({40, 41, 42, 43});
    Mask far = from_bits({60, 61});

    std::vector<metrics::GtInstance> gts{{gt1, "circle", 0}, {gt2, "circle", 0}};
    std::vector<metrics::EvalInstance> preds{
        {gt1, "circle", 0.9, 0},  // exact hit
        {far, "circle", 0.8, 0},  // false positive between the hits
        {gt2, "circle", 0.7, 0},  // exact hit
    };

    // Ranks: TP, FP, TP -> precision 1, 1/2, 2/3 at recall .5, .5, 1.
    // 101-point AP = (51 * 1 + 50 * 2/3) / 101 = 253/303.
    auto r = metrics::coco_map(preds, gts);
    CHECK_EQ(r.ap50, doctest::Approx(253.0 / 303.0).epsilon(1e-12));
    // Exact masks either hit at every threshold or never, so all three
    // aggregates coincide here.
    CHECK_EQ(r.map, doctest::Approx(253.0 / 303.0).epsilon(1e-12));
    CHECK_EQ(r.ap75, doctest::Approx(253.0 / 303.0).epsilon(1e-12));

    // A trailing false positive can only lower or keep the score.
    auto with_fp = preds;
    with_fp.push_back({far, "circle", 0.1, 0});
    CHECK_LE(metrics::coco_map(with_fp, gts).ap50, r.ap50);

    // Perfect predictions reach 1.0 across the board.
    std::vector<metrics::EvalInstance> perfect{{gt1, "circle", 0.9, 0}, {gt2, "circle", 0.8, 0}};
    auto pr = metrics::coco_map(perfect, gts);
    CHECK_EQ(pr.map, doctest::Approx(1.0));
    CHECK_EQ(pr.ap50, doctest::Approx(1.0));

    // Matching is scoped to the image: the same mask in another image is FP.
    std::vector<metrics::EvalInstance> misplaced{{gt1, "circle", 0.9, 1},
                                                 {gt2, "circle", 0.8, 1}};
    CHECK_EQ(metrics::coco_map(misplaced, gts).map, doctest::Approx(0.0));

    // Categories without ground truth are excluded, not scored as zero.
    auto with_ghost = preds;
    with_ghost.push_back({far, "ghost", 0.95, 0});
    CHECK_EQ(metrics::coco_map(with_ghost, gts).ap50, doctest::Approx(r.ap50).epsilon(1e-12));

    // No ground truth at all: every aggregate is zero.
    auto empty = metrics::coco_map(preds, {});
    CHECK_EQ(empty.map, 0.0);
    CHECK_EQ(empty.ap50, 0.0);
}

TEST_CASE("coco_map matches the independent oracle on random cases") {
    Rng rng(3);
    const std::vector<std::string> cats{"circle", "square"};
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<metrics::GtInstance> gts;
        const int ng = static_cast<int>(rng.uniform_int(0, 4));
        for (int i = 0; i < ng; ++i)
            gts.push_back({random_mask8(rng),
                           cats[static_cast<size_t>(rng.uniform_int(0, 1))],
                           static_cast<int>(rng.uniform_int(0, 1))});
        std::vector<metrics::EvalInstance> preds;
        const int np = static_cast<int>(rng.uniform_int(0, 6));
        for (int i = 0; i < np; ++i) {
            // Sometimes reuse a gt mask so high-IoU matches occur.
            Mask m = (!gts.empty() && rng.coin(0.5))
                         ? gts[static_cast<size_t>(rng.uniform_int(0, ng - 1))].mask
                         : random_mask8(rng);
            preds.push_back({m, cats[static_cast<size_t>(rng.uniform_int(0, 1))], rng.uniform(),
                             static_cast<int>(rng.uniform_int(0, 1))});
        }
        auto got = metrics::coco_map(preds, gts);
        auto want = coco_oracle(preds, gts);
        CHECK_EQ(got.map, doctest::Approx(want.map).epsilon(1e-12));
        CHECK_EQ(got.ap50, doctest::Approx(want.ap50).epsilon(1e-12));
        CHECK_EQ(got.ap75, doctest::Approx(want.ap75).epsilon(1e-12));
        CHECK_LE(got.map, got.ap50 + 1e-12);
    }
}

TEST_CASE("ciou is a cumulative ratio, not a mean of per-pair IoUs") {
    Mask a = from_bits({0, 1, 2, 3});
    Mask b = from_bits({2, 3, 4, 5});  // inter 2, union 6
    Mask c = from_bits({10});
    Mask d = from_bits({20});          // inter 0, union 2

    CHECK_EQ(metrics::ciou({a, c}, {a, c}), doctest::Approx(1.0));
    CHECK_EQ(metrics::ciou({c}, {d}), doctest::Approx(0.0));
    // (2 + 0) / (6 + 2) = 0.25, whereas the mean of per-pair IoUs would be
    // (1/3 + 0) / 2 = 1/6.
    CHECK_EQ(metrics::ciou({a, c}, {b, d}), doctest::Approx(0.25));
    CHECK_EQ(metrics::ciou({}, {}), 0.0);
    CHECK_THROWS_AS(metrics::ciou({a}, {}), std::logic_error);

    Rng rng(4);
    for (int rep = 0; rep < 40; ++rep) {
        std::vector<Mask> ps, gs;
        long inter = 0, uni = 0;
        for (int i = 0; i < 5; ++i) {
            ps.push_back(random_mask8(rng));
            gs.push_back(random_mask8(rng));
            inter += mask_intersection(ps.back(), gs.back());
            uni += mask_union(ps.back(), gs.back());
        }
        const double want = uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
        CHECK_EQ(metrics::ciou(ps, gs), doctest::Approx(want).epsilon(1e-12));
    }
}
