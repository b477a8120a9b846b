#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace rose::png {

// Writes an 8-bit RGB PNG (one zlib-compressed IDAT, filter 0 scanlines).
// `rgb` is row-major, 3 bytes per pixel, size == 3 * width * height.
void write_rgb(const std::filesystem::path& path, const std::vector<uint8_t>& rgb, int width,
               int height);

}  // namespace rose::png
