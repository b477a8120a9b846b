#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <utility>
#include <vector>

namespace rose {

// Binary bitmap, row-major, one byte per pixel (0 or 1).
struct Mask {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> data;

    Mask() = default;
    Mask(int h_, int w_, uint8_t fill = 0) : h(h_), w(w_), data(static_cast<size_t>(h_) * w_, fill) {}

    uint8_t& at(int r, int c) { return data[static_cast<size_t>(r) * w + c]; }
    uint8_t at(int r, int c) const { return data[static_cast<size_t>(r) * w + c]; }
    size_t size() const { return data.size(); }

    int64_t popcount() const {
        int64_t n = 0;
        for (uint8_t v : data) n += (v != 0);
        return n;
    }

    bool operator==(const Mask& o) const { return h == o.h && w == o.w && data == o.data; }
};

inline int64_t mask_intersection(const Mask& a, const Mask& b) {
    int64_t n = 0;
    for (size_t i = 0; i < a.data.size(); ++i) n += (a.data[i] && b.data[i]);
    return n;
}

inline int64_t mask_union(const Mask& a, const Mask& b) {
    int64_t n = 0;
    for (size_t i = 0; i < a.data.size(); ++i) n += (a.data[i] || b.data[i]);
    return n;
}

inline double mask_iou(const Mask& a, const Mask& b) {
    int64_t u = mask_union(a, b);
    if (u == 0) return 0.0;
    return static_cast<double>(mask_intersection(a, b)) / static_cast<double>(u);
}

// Centroid of foreground pixels, rounded to nearest integer (row, col).
// Mask must be non-empty.
inline std::pair<int, int> mask_center(const Mask& m) {
    int64_t sr = 0, sc = 0, n = 0;
    for (int r = 0; r < m.h; ++r)
        for (int c = 0; c < m.w; ++c)
            if (m.at(r, c)) {
                sr += r;
                sc += c;
                ++n;
            }
    double fr = static_cast<double>(sr) / n;
    double fc = static_cast<double>(sc) / n;
    return {static_cast<int>(fr + 0.5), static_cast<int>(fc + 0.5)};
}

// Tight bounding box of the foreground as (r0, c0, r1, c1), inclusive.
// Returns {0,0,-1,-1} for an empty mask.
inline std::array<int, 4> mask_bbox(const Mask& m);

// Row-major RLE with alternating background/foreground run lengths, first
// run background. Empty mask encodes to a single run of h*w.
std::vector<int64_t> rle_encode(const Mask& m);
Mask rle_decode(const std::vector<int64_t>& runs, int h, int w);

// Morphology with a disc structuring element. Used by the corruption
// recipes; O(h*w*r^2) which is fine at these sizes.
Mask mask_dilate(const Mask& m, int radius);
Mask mask_erode(const Mask& m, int radius);

inline std::array<int, 4> mask_bbox(const Mask& m) {
    int r0 = m.h, c0 = m.w, r1 = -1, c1 = -1;
    for (int r = 0; r < m.h; ++r)
        for (int c = 0; c < m.w; ++c)
            if (m.at(r, c)) {
                r0 = std::min(r0, r);
                c0 = std::min(c0, c);
                r1 = std::max(r1, r);
                c1 = std::max(c1, c);
            }
    if (r1 < 0) return {0, 0, -1, -1};
    return {r0, c0, r1, c1};
}

}  // namespace rose
