#include "doctest.h"

#include <filesystem>
#include <set>

#include "rose/refine.hpp"

using namespace rose;

namespace {

const text::PromptBanks& banks() {
    static text::PromptBanks b =
        text::load_prompt_banks(std::filesystem::path(ROSELAB_SOURCE_DIR) / "assets");
    return b;
}

Mask from_bits(const std::vector<int>& on) {
    Mask m(16, 16);
    for (int i : on) m.data[static_cast<size_t>(i)] = 1;
    return m;
}

Eigen::VectorXf soft_of(const Mask& m) {
    Eigen::VectorXf soft = Eigen::VectorXf::Zero(16 * 16);
    for (int i = 0; i < 16 * 16; ++i) soft[i] = m.data[static_cast<size_t>(i)] ? 1.0f : 0.0f;
    return soft;
}

std::vector<int> range_bits(int from, int count) {
    std::vector<int> out;
    for (int i = 0; i < count; ++i) out.push_back(from + i);
    return out;
}

grid::Target thing(const Mask& m, int id, const std::string& name) {
    grid::Target t = grid::make_target(m, id, name, true);
    return t;
}

}  // namespace

TEST_CASE("umi counts the disagreeing pixels of one class") {
    // Class 0: 80 gt pixels (60 correct, 15 stolen by class 1, 5 dropped to
    // non-object); 100 predicted pixels (60 correct, 30 poached from class
    // 1, 10 from non-object). Union 120, intersection 60.
    Eigen::MatrixXd conf = Eigen::MatrixXd::Zero(3, 3);
    conf(0, 0) = 60;
    conf(1, 0) = 15;
    conf(2, 0) = 5;
    conf(0, 1) = 30;
    conf(0, 2) = 10;
    CHECK_EQ(refine::umi(conf, 0), doctest::Approx(60.0));
    CHECK_THROWS_AS(refine::umi(conf, 5), std::logic_error);

    // A perfectly segmented class has nothing left to refine.
    Eigen::MatrixXd clean = Eigen::MatrixXd::Zero(3, 3);
    clean(1, 1) = 40;
    CHECK_EQ(refine::umi(clean, 1), 0.0);
}

TEST_CASE("select_semantic_targets ranks by UmI with ties toward lower classes") {
    // With conf(c,c) = 1 and conf(C,c) = err, UmI(c) == err exactly.
    const int classes = 8;
    Eigen::MatrixXd conf = Eigen::MatrixXd::Zero(classes + 1, classes + 1);
    const std::vector<double> err{10, 50, 50, 0, 30, 20, 5, 0};
    for (int c = 0; c < classes; ++c) {
        conf(c, c) = 1;
        conf(classes, c) = err[static_cast<size_t>(c)];
    }
    CHECK_EQ(refine::select_semantic_targets(conf, 5), std::vector<int>{1, 2, 4, 5, 0});
    CHECK_EQ(refine::select_semantic_targets(conf, 99), std::vector<int>{1, 2, 4, 5, 0, 6});

    // Fewer eligible classes than requested: return them all.
    Eigen::MatrixXd small = Eigen::MatrixXd::Zero(4, 4);
    small(0, 0) = 1;
    small(3, 0) = 2;
    small(1, 1) = 1;
    small(3, 1) = 7;
    CHECK_EQ(refine::select_semantic_targets(small, 5), std::vector<int>{1, 0});

    // A class with predictions but zero ground-truth pixels is skipped with
    // a warning rather than judged.
    long before = refine::skipped_empty_gt_warnings();
    Eigen::MatrixXd ghost = Eigen::MatrixXd::Zero(3, 3);
    ghost(0, 1) = 5;  // predicts class 0 where truth is class 1; class 0 has no gt
    ghost(1, 1) = 1;
    ghost(2, 1) = 9;
    auto sel = refine::select_semantic_targets(ghost, 5);
    CHECK_EQ(sel, std::vector<int>{1});
    CHECK_EQ(refine::skipped_empty_gt_warnings(), before + 1);
}

TEST_CASE("judge_situation: branch structure and exact boundaries") {
    const int C = 3;  // classes; row/col 3 is non-object
    auto conf_col = [&](double diag, double other1, double other2, double bg) {
        Eigen::MatrixXd conf = Eigen::MatrixXd::Zero(C + 1, C + 1);
        conf(0, 0) = diag;
        conf(1, 0) = other1;
        conf(2, 0) = other2;
        conf(3, 0) = bg;
        return conf;
    };

    // recall 0.2 exactly: the mask route wins on the closed boundary.
    CHECK_EQ(refine::judge_situation(conf_col(2, 0, 0, 8), 0), refine::Situation::Mask);
    CHECK_EQ(refine::judge_situation(conf_col(9, 1, 0, 0), 0), refine::Situation::Mask);

    // recall below 0.2 with a dominating foreign class: category repair.
    CHECK_EQ(refine::judge_situation(conf_col(19, 51, 10, 20), 0), refine::Situation::Category);

    // other_cat_iou exactly 0.5 is not enough: missed.
    CHECK_EQ(refine::judge_situation(conf_col(10, 50, 0, 40), 0), refine::Situation::Missed);

    // The non-object row never counts as "another category".
    CHECK_EQ(refine::judge_situation(conf_col(0, 10, 0, 90), 0), refine::Situation::Missed);

    // The class's own row participates in the max but cannot cross 0.5
    // while recall is below 0.2.
    CHECK_EQ(refine::judge_situation(conf_col(19, 5, 3, 73), 0), refine::Situation::Missed);

    CHECK_THROWS_AS(refine::judge_situation(conf_col(1, 0, 0, 0), 3), std::logic_error);
    Eigen::MatrixXd empty = Eigen::MatrixXd::Zero(C + 1, C + 1);
    CHECK_THROWS_AS(refine::judge_situation(empty, 0), std::logic_error);
}

TEST_CASE("select_instance_targets picks bad detections in score order") {
    Mask gt_a = from_bits(range_bits(0, 10));     // circle
    Mask gt_b = from_bits(range_bits(100, 10));   // square
    Mask stuff_mask = from_bits(range_bits(0, 200));
    std::vector<grid::Target> targets{thing(gt_a, 0, "circle"), thing(gt_b, 1, "square"),
                                      grid::make_target(stuff_mask, 2, "sky", false)};

    auto pred = [&](int patch, double score, const std::string& cat, const Mask& m) {
        return decode::make_prediction(patch, score, cat, soft_of(m), 16);
    };
    Mask near_a = from_bits([] {
        auto v = range_bits(0, 5);
        auto tail = range_bits(20, 5);
        v.insert(v.end(), tail.begin(), tail.end());
        return v;
    }());  // IoU 1/3 with gt_a
    Mask near_b = from_bits([] {
        auto v = range_bits(100, 2);
        auto tail = range_bits(200, 8);
        v.insert(v.end(), tail.begin(), tail.end());
        return v;
    }());  // IoU 1/9 with gt_b
    Mask lost = from_bits({250});

    std::vector<decode::Prediction> preds{
        pred(0, 0.95, "circle", gt_a),   // perfect: skipped
        pred(1, 0.90, "circle", near_a), // bad mask, right name -> Mask
        pred(2, 0.80, "circle", near_b), // overlaps square most -> Category
        pred(3, 0.70, "circle", lost),   // matches gt_a best (IoU 0) -> Mask
    };

    auto sel = refine::select_instance_targets(preds, targets);
    REQUIRE_EQ(sel.size(), 3u);
    CHECK_EQ(sel[0].pred_index, 1);
    CHECK_EQ(sel[0].situation, refine::Situation::Mask);
    CHECK_EQ(sel[0].matched_gt, 0);
    CHECK_EQ(sel[1].pred_index, 2);
    CHECK_EQ(sel[1].situation, refine::Situation::Category);
    CHECK_EQ(sel[1].matched_gt, 1);
    CHECK_EQ(sel[2].pred_index, 3);
    CHECK_EQ(sel[2].situation, refine::Situation::Mask);

    // The cap keeps only the highest-scoring offenders.
    auto capped = refine::select_instance_targets(preds, targets, 2);
    REQUIRE_EQ(capped.size(), 2u);
    CHECK_EQ(capped[0].pred_index, 1);
    CHECK_EQ(capped[1].pred_index, 2);

    // Boundary: IoU exactly 0.5 counts as good enough.
    Mask half = from_bits([] {
        auto v = range_bits(0, 5);
        auto tail = range_bits(30, 0);
        v.insert(v.end(), tail.begin(), tail.end());
        return v;
    }());  // subset of gt_a: inter 5, union 10 -> IoU 0.5
    auto border = refine::select_instance_targets({pred(0, 0.9, "circle", half)}, targets);
    CHECK(border.empty());

    // No thing targets at all: every prediction is a mask case.
    auto orphan = refine::select_instance_targets({pred(0, 0.9, "circle", lost)},
                                                  {targets[2]});
    REQUIRE_EQ(orphan.size(), 1u);
    CHECK_EQ(orphan[0].matched_gt, -1);
    CHECK_EQ(orphan[0].situation, refine::Situation::Mask);
}

TEST_CASE("bbox_string formats inclusive bounds") {
    Mask m(16, 16);
    m.at(2, 3) = 1;
    m.at(8, 9) = 1;
    CHECK_EQ(refine::bbox_string(m), "[2, 3, 8, 9]");
    CHECK_EQ(refine::bbox_string(Mask(16, 16)), "[0, 0, 0, 0]");
}

TEST_CASE("build_case fills templates deterministically per situation") {
    Mask region(16, 16);
    region.at(2, 3) = 1;
    region.at(8, 9) = 1;
    const std::string bbox = "[2, 3, 8, 9]";

    auto a = refine::build_case(refine::Situation::Mask, region, "", banks(), 7);
    auto b = refine::build_case(refine::Situation::Mask, region, "", banks(), 7);
    CHECK_EQ(a.prompt, b.prompt);
    CHECK_EQ(a.channel, region);
    CHECK_NE(a.prompt.find(bbox), std::string::npos);

    // The prompt is one of the bank's templates with the bbox substituted.
    std::set<std::string> filled;
    for (const auto& t : banks().refine_mask) {
        std::string s = t;
        for (size_t at = s.find("{bbox}"); at != std::string::npos; at = s.find("{bbox}"))
            s.replace(at, 6, bbox);
        filled.insert(s);
    }
    CHECK(filled.count(a.prompt) == 1);

    // Different seeds eventually draw different templates.
    std::set<std::string> seen;
    for (uint64_t seed = 0; seed < 30; ++seed)
        seen.insert(refine::build_case(refine::Situation::Mask, region, "", banks(), seed).prompt);
    CHECK_GT(seen.size(), 1u);

    // Category cases embed the wrong name verbatim and keep the channel.
    auto cat = refine::build_case(refine::Situation::Category, region, "square", banks(), 3);
    CHECK_NE(cat.prompt.find("square"), std::string::npos);
    CHECK_NE(cat.prompt.find(bbox), std::string::npos);
    CHECK_EQ(cat.channel, region);
    CHECK_THROWS_AS(refine::build_case(refine::Situation::Category, region, "", banks(), 3),
                    std::logic_error);

    // Missed cases carry the bbox but an empty channel.
    auto missed = refine::build_case(refine::Situation::Missed, region, "", banks(), 5);
    CHECK_NE(missed.prompt.find(bbox), std::string::npos);
    CHECK_EQ(missed.channel.popcount(), 0);
    CHECK_EQ(missed.channel.h, 16);
}
