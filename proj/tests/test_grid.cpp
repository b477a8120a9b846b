#include "doctest.h"

#include <map>
#include <set>

#include "rose/common.hpp"
#include "rose/grid.hpp"

using namespace rose;
using namespace rose::grid;

namespace {

Mask disc_mask(int side, int cr, int cc, int radius) {
    Mask m(side, side);
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c)
            if ((r - cr) * (r - cr) + (c - cc) * (c - cc) <= radius * radius) m.at(r, c) = 1;
    return m;
}

// Brute-force re-derivation of the positive set: enumerate every patch and
// test the assignment rule directly, then resolve conflicts the same way
// the contract states (smallest area, then lowest index). Negatives are not
// re-derived (they are random); the oracle checks their disjointness.
std::vector<std::pair<int, int>> oracle_positives(const std::vector<Target>& targets,
                                                  const PatchGrid& g,
                                                  const SuperPatchLayout* layout,
                                                  const RoleThresholds& th) {
    std::map<int, std::vector<int>> claims;
    for (int p = 0; p < g.patch_count(); ++p) {
        int ph = p / g.grid_side, pw = p % g.grid_side;
        for (size_t ti = 0; ti < targets.size(); ++ti) {
            const Target& t = targets[ti];
            int ch = t.center_row / g.patch_side;
            int cw = t.center_col / g.patch_side;
            bool claimed = false;
            if (layout == nullptr) {
                claimed = std::abs(ph - ch) <= 1 && std::abs(pw - cw) <= 1;
            } else {
                bool same_super = (ph / 3 == ch / 3) && (pw / 3 == cw / 3);
                claimed = same_super && layout->role_at(ph, pw) == classify_target_role(t, g, th);
            }
            if (claimed) claims[p].push_back(static_cast<int>(ti));
        }
    }
    std::vector<std::pair<int, int>> out;
    for (auto& [p, cs] : claims) {
        int best = cs[0];
        for (int ti : cs)
            if (targets[ti].area < targets[best].area ||
                (targets[ti].area == targets[best].area && ti < best))
                best = ti;
        out.emplace_back(p, best);
    }
    return out;
}

std::vector<Target> random_targets(Rng& rng, int image_side, int max_targets) {
    int n = static_cast<int>(rng.uniform_int(0, max_targets));
    std::vector<Target> ts;
    for (int i = 0; i < n; ++i) {
        int radius = static_cast<int>(rng.uniform_int(1, 20));
        int cr = static_cast<int>(rng.uniform_int(0, image_side - 1));
        int cc = static_cast<int>(rng.uniform_int(0, image_side - 1));
        Mask m = disc_mask(image_side, cr, cc, radius);
        if (m.popcount() == 0) continue;
        Target t = make_target(std::move(m), static_cast<int>(i % 5), "cat", rng.coin(0.8));
        ts.push_back(std::move(t));
    }
    return ts;
}

}  // namespace

TEST_CASE("make_grid follows the floor rule and rejects non-tileable sizes") {
    CHECK(make_grid(672, 14).grid_side == 48);
    CHECK(make_grid(96, 8).grid_side == 12);
    CHECK_THROWS_AS(make_grid(100, 14), ConfigError);  // floor = 7
    CHECK_THROWS_AS(make_grid(16, 8), ConfigError);    // floor = 2 < 3
    CHECK_THROWS_AS(make_grid(0, 8), ConfigError);
}

TEST_CASE("patch pixel coverage is half-open and exact") {
    PatchGrid g = make_grid(96, 8);
    CHECK(g.patch_row_of(0) == 0);
    CHECK(g.patch_row_of(7) == 0);
    CHECK(g.patch_row_of(8) == 1);
    CHECK(g.patch_row_of(95) == 11);
}

TEST_CASE("stencil counts and tiling") {
    PatchGrid g = make_grid(96, 8);
    SuperPatchLayout layout = make_layout(g);

    for (int a = 0; a < layout.super_side; ++a)
        for (int b = 0; b < layout.super_side; ++b) {
            std::map<PatchRole, int> counts;
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) counts[layout.role_at(3 * a + i, 3 * b + j)]++;
            CHECK(counts[PatchRole::Small] == 4);
            CHECK(counts[PatchRole::Medium] == 3);
            CHECK(counts[PatchRole::Large] == 1);
            CHECK(counts[PatchRole::Stuff] == 1);
        }

    // role_map[(3a+i, 3b+j)] == stencil[(i, j)] for all a, b
    for (int h = 0; h < g.grid_side; ++h)
        for (int w = 0; w < g.grid_side; ++w)
            CHECK(layout.role_at(h, w) == layout.role_at(h % 3, w % 3));
}

TEST_CASE("classify_target_role thresholds") {
    PatchGrid g = make_grid(96, 8);
    RoleThresholds th;
    double image_area = 96.0 * 96.0;

    Mask stuff_mask(96, 96, 1);
    Target stuff = make_target(stuff_mask, 0, "sky", false);
    CHECK(classify_target_role(stuff, g, th) == PatchRole::Stuff);

    auto with_area = [&](double frac) {
        Mask m(96, 96);
        int64_t pixels = static_cast<int64_t>(frac * image_area);
        for (int64_t i = 0; i < pixels; ++i) m.data[i] = 1;
        return make_target(m, 0, "thing", true);
    };
    CHECK(classify_target_role(with_area(0.005), g, th) == PatchRole::Small);
    CHECK(classify_target_role(with_area(0.05), g, th) == PatchRole::Medium);
    CHECK(classify_target_role(with_area(0.30), g, th) == PatchRole::Large);
}

TEST_CASE("single centered target gets its 3x3 block without layout") {
    PatchGrid g = make_grid(96, 8);
    Mask m = disc_mask(96, 50, 50, 5);
    Target t = make_target(m, 0, "circle", true);
    CHECK(t.center_row == 50);
    CHECK(t.center_col == 50);

    auto plan = assign_supervision({t}, g, nullptr, 1.0, 1);
    CHECK(plan.positive.size() == 9);
    std::set<int> got;
    for (auto& [p, ti] : plan.positive) {
        got.insert(p);
        CHECK(ti == 0);
    }
    for (int h = 5; h <= 7; ++h)
        for (int w = 5; w <= 7; ++w) CHECK(got.count(g.patch_index(h, w)) == 1);
}

TEST_CASE("stuff target in layout mode gets exactly one positive patch") {
    PatchGrid g = make_grid(96, 8);
    SuperPatchLayout layout = make_layout(g);
    Mask band(96, 96);
    for (int r = 0; r < 20; ++r)
        for (int c = 0; c < 96; ++c) band.at(r, c) = 1;
    Target t = make_target(band, 5, "sky", false);

    auto plan = assign_supervision({t}, g, &layout, 1.0, 1);
    REQUIRE(plan.positive.size() == 1);
    auto [p, ti] = plan.positive[0];
    CHECK(layout.role_at(p / g.grid_side, p % g.grid_side) == PatchRole::Stuff);
    // the single stuff patch of the super-patch containing the center
    CHECK((p / g.grid_side) / 3 == (t.center_row / 8) / 3);
    CHECK((p % g.grid_side) / 3 == (t.center_col / 8) / 3);
}

TEST_CASE("zero targets produce an empty plan") {
    PatchGrid g = make_grid(96, 8);
    auto plan = assign_supervision({}, g, nullptr, 1.0, 1);
    CHECK(plan.positive.empty());
    CHECK(plan.negative.empty());
    CHECK(plan.dropped.empty());
}

TEST_CASE("conflicts resolve to the smaller target, ties to the lower index") {
    PatchGrid g = make_grid(96, 8);
    // Two targets whose centers land in the same patch: the small one wins it.
    Mask big = disc_mask(96, 50, 50, 15);
    Mask small = disc_mask(96, 52, 52, 3);
    Target t_big = make_target(big, 0, "big", true);
    Target t_small = make_target(small, 1, "small", true);

    auto plan = assign_supervision({t_big, t_small}, g, nullptr, 1.0, 1);
    std::map<int, int> owner;
    for (auto& [p, ti] : plan.positive) owner[p] = ti;
    // both centers fall in patch (6,6); the contested 3x3 block belongs to target 1
    for (int h = 5; h <= 7; ++h)
        for (int w = 5; w <= 7; ++w) CHECK(owner[g.patch_index(h, w)] == 1);
    CHECK(plan.dropped == std::vector<int>{0});

    // Same-area tie goes to the lower target index.
    Target a = make_target(disc_mask(96, 50, 50, 4), 0, "a", true);
    Target b = make_target(disc_mask(96, 52, 52, 4), 1, "b", true);
    auto plan2 = assign_supervision({a, b}, g, nullptr, 1.0, 1);
    std::map<int, int> owner2;
    for (auto& [p, ti] : plan2.positive) owner2[p] = ti;
    CHECK(owner2[g.patch_index(6, 6)] == 0);
}

TEST_CASE("negatives are disjoint from positives and sized by neg_ratio") {
    PatchGrid g = make_grid(96, 8);
    Mask m = disc_mask(96, 50, 50, 5);
    Target t = make_target(m, 0, "circle", true);

    auto plan = assign_supervision({t}, g, nullptr, 1.0, 42);
    CHECK(plan.negative.size() == 9);  // matches |positives| at ratio 1.0
    std::set<int> pos;
    for (auto& [p, ti] : plan.positive) pos.insert(p);
    for (int n : plan.negative) CHECK(pos.count(n) == 0);

    // floor of min(8, unsupervised) even at tiny ratio
    auto plan_low = assign_supervision({t}, g, nullptr, 0.0, 42);
    CHECK(plan_low.negative.size() == 8);
}

TEST_CASE("determinism: same targets and seed give identical plans") {
    PatchGrid g = make_grid(96, 8);
    SuperPatchLayout layout = make_layout(g);
    Rng rng(7);
    for (int it = 0; it < 50; ++it) {
        auto ts = random_targets(rng, 96, 6);
        uint64_t seed = rng.next_u64();
        auto p1 = assign_supervision(ts, g, &layout, 1.0, seed);
        auto p2 = assign_supervision(ts, g, &layout, 1.0, seed);
        CHECK(p1.positive == p2.positive);
        CHECK(p1.negative == p2.negative);
        CHECK(p1.dropped == p2.dropped);
    }
}

TEST_CASE("oracle equivalence over 1000 random scenes, both modes") {
    PatchGrid g = make_grid(96, 8);
    SuperPatchLayout layout = make_layout(g);
    RoleThresholds th;
    Rng rng(1234);
    for (int it = 0; it < 1000; ++it) {
        auto ts = random_targets(rng, 96, 8);
        const SuperPatchLayout* use = (it % 2 == 0) ? nullptr : &layout;
        auto plan = assign_supervision(ts, g, use, 1.0, rng.next_u64(), th);
        auto expect = oracle_positives(ts, g, use, th);
        REQUIRE(plan.positive == expect);

        // every positive patch either contains the center or is 8-adjacent
        // to the containing patch (no-layout mode)
        std::set<int> pos;
        for (auto& [p, ti] : plan.positive) {
            pos.insert(p);
            const Target& t = ts[ti];
            int ph = p / g.grid_side, pw = p % g.grid_side;
            int ch = t.center_row / g.patch_side, cw = t.center_col / g.patch_side;
            if (use == nullptr) {
                CHECK(std::abs(ph - ch) <= 1);
                CHECK(std::abs(pw - cw) <= 1);
            } else {
                CHECK(ph / 3 == ch / 3);
                CHECK(pw / 3 == cw / 3);
            }
        }
        for (int n : plan.negative) CHECK(pos.count(n) == 0);
    }
}
