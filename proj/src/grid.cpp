#include "rose/grid.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "rose/common.hpp"

namespace rose::grid {

const char* role_name(PatchRole r) {
    switch (r) {
        case PatchRole::Small: return "small";
        case PatchRole::Medium: return "medium";
        case PatchRole::Large: return "large";
        case PatchRole::Stuff: return "stuff";
    }
    return "?";
}

PatchGrid make_grid(int image_side, int patch_side) {
    if (image_side <= 0 || patch_side <= 0)
        throw ConfigError("make_grid: sides must be positive");
    int s = image_side / patch_side;
    if (s < 3)
        throw ConfigError("make_grid: grid side " + std::to_string(s) + " < 3");
    if (s % 3 != 0)
        throw ConfigError("make_grid: grid side " + std::to_string(s) + " not divisible by 3");
    return PatchGrid{image_side, patch_side, s};
}

namespace {

// Corners small, top/left/right edges medium, center large, bottom edge
// stuff. Counts per super-patch: 4 small, 3 medium, 1 large, 1 stuff.
constexpr PatchRole kStencil[3][3] = {
    {PatchRole::Small, PatchRole::Medium, PatchRole::Small},
    {PatchRole::Medium, PatchRole::Large, PatchRole::Medium},
    {PatchRole::Small, PatchRole::Stuff, PatchRole::Small},
};

}  // namespace

SuperPatchLayout make_layout(const PatchGrid& grid) {
    SuperPatchLayout layout;
    layout.super_side = grid.grid_side / 3;
    layout.grid_side = grid.grid_side;
    layout.role_map.resize(static_cast<size_t>(grid.grid_side) * grid.grid_side);
    for (int h = 0; h < grid.grid_side; ++h)
        for (int w = 0; w < grid.grid_side; ++w)
            layout.role_map[static_cast<size_t>(h) * grid.grid_side + w] = kStencil[h % 3][w % 3];
    return layout;
}

Target make_target(Mask mask, int category_id, std::string category_name, bool is_thing) {
    Target t;
    t.area = mask.popcount();
    if (t.area <= 0) throw std::invalid_argument("make_target: empty mask");
    auto [cr, cc] = mask_center(mask);
    t.center_row = cr;
    t.center_col = cc;
    t.mask = std::move(mask);
    t.category_id = category_id;
    t.category_name = std::move(category_name);
    t.is_thing = is_thing;
    return t;
}

PatchRole classify_target_role(const Target& t, const PatchGrid& grid, const RoleThresholds& th) {
    if (!t.is_thing) return PatchRole::Stuff;
    double image_area = static_cast<double>(grid.image_side) * grid.image_side;
    double frac = static_cast<double>(t.area) / image_area;
    if (frac < th.small_frac) return PatchRole::Small;
    if (frac < th.medium_frac) return PatchRole::Medium;
    return PatchRole::Large;
}

SupervisionPlan assign_supervision(const std::vector<Target>& targets,
                                   const PatchGrid& grid,
                                   const SuperPatchLayout* layout,
                                   double neg_ratio,
                                   uint64_t seed,
                                   const RoleThresholds& thresholds) {
    const int s = grid.grid_side;
    for (const auto& t : targets) {
        if (t.center_row < 0 || t.center_row >= grid.image_side || t.center_col < 0 ||
            t.center_col >= grid.image_side)
            throw std::invalid_argument("assign_supervision: target center outside image");
    }

    // Claims per patch; resolved to the smallest-area target afterwards.
    std::map<int, std::vector<int>> claims;
    for (size_t ti = 0; ti < targets.size(); ++ti) {
        const Target& t = targets[ti];
        int ph = grid.patch_row_of(t.center_row);
        int pw = grid.patch_col_of(t.center_col);
        if (layout == nullptr) {
            for (int dh = -1; dh <= 1; ++dh)
                for (int dw = -1; dw <= 1; ++dw) {
                    int h = ph + dh, w = pw + dw;
                    if (h < 0 || h >= s || w < 0 || w >= s) continue;
                    claims[grid.patch_index(h, w)].push_back(static_cast<int>(ti));
                }
        } else {
            PatchRole want = classify_target_role(t, grid, thresholds);
            int sh = ph / 3, sw = pw / 3;
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    int h = sh * 3 + i, w = sw * 3 + j;
                    if (layout->role_at(h, w) == want)
                        claims[grid.patch_index(h, w)].push_back(static_cast<int>(ti));
                }
        }
    }

    SupervisionPlan plan;
    std::vector<int> patches_won(targets.size(), 0);
    for (auto& [patch, claimants] : claims) {
        int best = claimants[0];
        for (int ti : claimants) {
            if (targets[ti].area < targets[best].area ||
                (targets[ti].area == targets[best].area && ti < best))
                best = ti;
        }
        plan.positive.emplace_back(patch, best);
        ++patches_won[best];
    }
    for (size_t ti = 0; ti < targets.size(); ++ti)
        if (patches_won[ti] == 0 && !targets.empty()) plan.dropped.push_back(static_cast<int>(ti));

    if (!plan.positive.empty()) {
        std::vector<uint8_t> is_positive(static_cast<size_t>(s) * s, 0);
        for (auto& [patch, ti] : plan.positive) is_positive[patch] = 1;
        std::vector<int> unsupervised;
        for (int p = 0; p < s * s; ++p)
            if (!is_positive[p]) unsupervised.push_back(p);

        int floor_count = std::min<int>(8, static_cast<int>(unsupervised.size()));
        int want = std::max<int>(
            static_cast<int>(std::llround(neg_ratio * static_cast<double>(plan.positive.size()))),
            floor_count);
        want = std::min<int>(want, static_cast<int>(unsupervised.size()));

        Rng rng(seed);
        auto picks = rng.sample_without_replacement(static_cast<int>(unsupervised.size()), want);
        plan.negative.reserve(picks.size());
        for (int k : picks) plan.negative.push_back(unsupervised[k]);
        std::sort(plan.negative.begin(), plan.negative.end());
    }
    return plan;
}

}  // namespace rose::grid
