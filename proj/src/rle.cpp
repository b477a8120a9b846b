#include "rose/mask.hpp"

#include <stdexcept>

namespace rose {

std::vector<int64_t> rle_encode(const Mask& m) {
    std::vector<int64_t> runs;
    uint8_t current = 0;  // first run is background
    int64_t len = 0;
    for (uint8_t v : m.data) {
        uint8_t b = (v != 0);
        if (b == current) {
            ++len;
        } else {
            runs.push_back(len);
            current = b;
            len = 1;
        }
    }
    runs.push_back(len);
    if (runs.empty()) runs.push_back(0);
    return runs;
}

Mask rle_decode(const std::vector<int64_t>& runs, int h, int w) {
    Mask m(h, w);
    int64_t total = static_cast<int64_t>(h) * w;
    int64_t pos = 0;
    uint8_t current = 0;
    for (int64_t len : runs) {
        if (len < 0 || pos + len > total) throw std::invalid_argument("rle_decode: runs exceed mask size");
        for (int64_t i = 0; i < len; ++i) m.data[pos + i] = current;
        pos += len;
        current = !current;
    }
    if (pos != total) throw std::invalid_argument("rle_decode: runs do not cover mask");
    return m;
}

namespace {

// Offsets of a disc of the given radius, precomputed per call.
std::vector<std::pair<int, int>> disc_offsets(int radius) {
    std::vector<std::pair<int, int>> out;
    for (int dr = -radius; dr <= radius; ++dr)
        for (int dc = -radius; dc <= radius; ++dc)
            if (dr * dr + dc * dc <= radius * radius) out.emplace_back(dr, dc);
    return out;
}

}  // namespace

Mask mask_dilate(const Mask& m, int radius) {
    if (radius <= 0) return m;
    Mask out(m.h, m.w);
    auto offs = disc_offsets(radius);
    for (int r = 0; r < m.h; ++r)
        for (int c = 0; c < m.w; ++c) {
            if (!m.at(r, c)) continue;
            for (auto [dr, dc] : offs) {
                int rr = r + dr, cc = c + dc;
                if (rr >= 0 && rr < m.h && cc >= 0 && cc < m.w) out.at(rr, cc) = 1;
            }
        }
    return out;
}

Mask mask_erode(const Mask& m, int radius) {
    if (radius <= 0) return m;
    Mask out(m.h, m.w);
    auto offs = disc_offsets(radius);
    for (int r = 0; r < m.h; ++r)
        for (int c = 0; c < m.w; ++c) {
            if (!m.at(r, c)) continue;
            bool keep = true;
            for (auto [dr, dc] : offs) {
                int rr = r + dr, cc = c + dc;
                if (rr < 0 || rr >= m.h || cc < 0 || cc >= m.w || !m.at(rr, cc)) {
                    keep = false;
                    break;
                }
            }
            out.at(r, c) = keep;
        }
    return out;
}

}  // namespace rose
