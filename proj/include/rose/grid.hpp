#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rose/mask.hpp"

namespace rose::grid {

// Geometry of the S x S prediction grid over an L x L image. Patch (h, w)
// covers pixel rows [h*p, (h+1)*p) and columns [w*p, (w+1)*p).
struct PatchGrid {
    int image_side = 0;  // L, pixels
    int patch_side = 0;  // p, pixels
    int grid_side = 0;   // S, patches per side

    int patch_count() const { return grid_side * grid_side; }
    int patch_index(int h, int w) const { return h * grid_side + w; }
    int patch_row_of(int pixel_row) const { return pixel_row / patch_side; }
    int patch_col_of(int pixel_col) const { return pixel_col / patch_side; }
};

enum class PatchRole : uint8_t { Small, Medium, Large, Stuff };

const char* role_name(PatchRole r);

// Fixed 3x3 stencil tiled across the grid. Each super-patch holds four
// small-role patches, three medium, one large, one stuff.
struct SuperPatchLayout {
    int super_side = 0;                // S/3 super-patches per side
    int grid_side = 0;                 // S
    std::vector<PatchRole> role_map;   // S*S entries, row-major

    PatchRole role_at(int h, int w) const { return role_map[static_cast<size_t>(h) * grid_side + w]; }
};

// Ground-truth unit: one segment with its mask, category, and precomputed
// center / area, which the caller keeps consistent with the mask.
struct Target {
    Mask mask;
    int category_id = 0;
    std::string category_name;
    bool is_thing = true;
    int center_row = 0;
    int center_col = 0;
    int64_t area = 0;
};

// Recomputes center and area from the mask.
Target make_target(Mask mask, int category_id, std::string category_name, bool is_thing);

// Area-fraction thresholds splitting thing targets into small / medium /
// large roles (fraction of L^2).
struct RoleThresholds {
    double small_frac = 0.02;
    double medium_frac = 0.10;
};

struct SupervisionPlan {
    // (patch_index, target_index), patch indices pairwise distinct.
    std::vector<std::pair<int, int>> positive;
    std::vector<int> negative;  // sampled unsupervised patches, ascending
    std::vector<int> dropped;   // targets left with zero positive patches
};

// make_grid rejects non-tileable (L, p): requires floor(L/p) >= 3 and
// divisible by 3 so super-patches tile exactly.
PatchGrid make_grid(int image_side, int patch_side);

SuperPatchLayout make_layout(const PatchGrid& grid);

PatchRole classify_target_role(const Target& t, const PatchGrid& grid, const RoleThresholds& thresholds);

// Assigns targets to supervising patches and samples negatives.
//
// Without a layout, the patch containing the target center plus its
// 8-neighborhood (clipped to the grid) is positive. With a layout, the
// patches of the center's super-patch whose role matches the target's
// role are positive. A patch claimed by several targets goes to the one
// with the smallest area (tie: lowest target index). Targets that lose
// all their patches are reported in `dropped`.
SupervisionPlan assign_supervision(const std::vector<Target>& targets,
                                   const PatchGrid& grid,
                                   const SuperPatchLayout* layout,
                                   double neg_ratio,
                                   uint64_t seed,
                                   const RoleThresholds& thresholds = {});

}  // namespace rose::grid
