#include "rose/png.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "rose/common.hpp"

namespace rose::png {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& body) {
    put_u32(out, static_cast<uint32_t>(body.size()));
    const size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), body.begin(), body.end());
    const uLong crc = ::crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
    put_u32(out, static_cast<uint32_t>(crc));
}

}  // namespace

void write_rgb(const std::filesystem::path& path, const std::vector<uint8_t>& rgb, int width,
               int height) {
    if (width <= 0 || height <= 0 ||
        rgb.size() != static_cast<size_t>(3) * static_cast<size_t>(width) * static_cast<size_t>(height))
        throw std::logic_error("write_rgb: buffer does not match dimensions");

    // Raw stream: each scanline prefixed with filter byte 0.
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(height) * (1 + 3 * static_cast<size_t>(width)));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        const uint8_t* row = rgb.data() + static_cast<size_t>(y) * 3 * static_cast<size_t>(width);
        raw.insert(raw.end(), row, row + 3 * static_cast<size_t>(width));
    }

    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("write_rgb: zlib compression failed");
    comp.resize(comp_len);

    std::vector<uint8_t> file;
    const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    file.insert(file.end(), sig, sig + 8);

    std::vector<uint8_t> ihdr;
    put_u32(ihdr, static_cast<uint32_t>(width));
    put_u32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace
    put_chunk(file, "IHDR", ihdr);
    put_chunk(file, "IDAT", comp);
    put_chunk(file, "IEND", {});

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write image: " + path.string());
    out.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
    if (!out) throw ConfigError("image write failed: " + path.string());
}

}  // namespace rose::png
