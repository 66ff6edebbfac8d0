#include "uad/png.hpp"

#include <algorithm>
#include <cmath>
#include <string_view>

#include <zlib.h>

#include "uad/binary_io.hpp"

namespace uad {

namespace {

void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_chunk(std::vector<std::uint8_t>& out, std::string_view type, const std::vector<std::uint8_t>& payload) {
    put_u32be(out, static_cast<std::uint32_t>(payload.size()));
    const auto start = out.size();
    out.insert(out.end(), type.begin(), type.end());
    out.insert(out.end(), payload.begin(), payload.end());
    const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32be(out, static_cast<std::uint32_t>(crc));
}

} // namespace

std::vector<std::uint8_t> encode_png_gray8(const std::vector<std::uint8_t>& pixels, std::int64_t width,
                                           std::int64_t height) {
    if (width <= 0 || height <= 0 || static_cast<std::int64_t>(pixels.size()) != width * height)
        throw ValueError("png: " + std::to_string(pixels.size()) + " pixels do not form a " + std::to_string(width) +
                         "x" + std::to_string(height) + " image");
    // Each scanline is prefixed with filter type 0 (none).
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>((width + 1) * height));
    for (std::int64_t y = 0; y < height; ++y) {
        raw.push_back(0);
        const auto* row = pixels.data() + y * width;
        raw.insert(raw.end(), row, row + width);
    }
    uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> packed(packed_size);
    if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw IoError("png: zlib compression failed");
    packed.resize(packed_size);

    std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<std::uint8_t> ihdr;
    put_u32be(ihdr, static_cast<std::uint32_t>(width));
    put_u32be(ihdr, static_cast<std::uint32_t>(height));
    ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0}); // bit depth 8, grayscale, deflate, filter 0, no interlace
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", packed);
    put_chunk(out, "IEND", {});
    return out;
}

std::vector<std::uint8_t> to_gray8(const Tensor& plane, double scale) {
    if (!(plane.rank() == 2 || (plane.rank() == 3 && plane.dim(2) == 1)))
        throw ShapeError("png: expected [H, W] or [H, W, 1], got " + to_string(plane.shape()));
    if (!(scale > 0)) throw ValueError("png: scale must be positive");
    std::vector<std::uint8_t> out(static_cast<std::size_t>(plane.size()));
    for (std::int64_t i = 0; i < plane.size(); ++i) {
        const double v = std::clamp(static_cast<double>(plane[i]) / scale, 0.0, 1.0);
        out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

void write_png(const Tensor& plane, const std::filesystem::path& path, double scale) {
    const auto bytes = encode_png_gray8(to_gray8(plane, scale), plane.dim(1), plane.dim(0));
    io::write_file(path, bytes);
}

} // namespace uad
