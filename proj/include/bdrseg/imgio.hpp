#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "grid.hpp"

namespace bdrseg::io {

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorKind::IoFailure, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad())
        fail(ErrorKind::IoFailure, "read error on " + path.string());
    return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorKind::IoFailure, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        fail(ErrorKind::IoFailure, "write error on " + path.string());
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const std::uint8_t* p) noexcept
{
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline float get_f32(const std::uint8_t* p) noexcept { return std::bit_cast<float>(get_u32(p)); }

/// Cursor over a byte buffer for the PGM header grammar (whitespace and
/// '#' comments between tokens).
class HeaderReader {
public:
    explicit HeaderReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    int next_int(const char* what)
    {
        skip_space_and_comments();
        std::size_t start = pos_;
        long value = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_] - '0');
            if (value > (1L << 30))
                fail(ErrorKind::MalformedHeader, std::string("PGM ") + what + " too large");
            ++pos_;
        }
        if (pos_ == start)
            fail(ErrorKind::MalformedHeader, std::string("PGM header: expected ") + what);
        return static_cast<int>(value);
    }

    /// Exactly one whitespace byte separates maxval from the raster.
    std::size_t raster_start()
    {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
            fail(ErrorKind::MalformedHeader, "PGM header: missing separator before raster");
        return pos_ + 1;
    }

private:
    void skip_space_and_comments()
    {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n')
                    ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 2;
};

struct RawPgm {
    int width = 0;
    int height = 0;
    int maxval = 255;
    std::vector<std::uint8_t> samples;
};

inline RawPgm parse_pgm(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
        fail(ErrorKind::MalformedHeader, "not a binary PGM (P5) stream");
    HeaderReader reader(bytes);
    RawPgm pgm;
    pgm.width = reader.next_int("width");
    pgm.height = reader.next_int("height");
    pgm.maxval = reader.next_int("maxval");
    if (pgm.width <= 0 || pgm.height <= 0)
        fail(ErrorKind::MalformedHeader, "PGM dimensions must be positive");
    if (pgm.maxval <= 0 || pgm.maxval > 255)
        fail(ErrorKind::MalformedHeader, "only 8-bit PGM (maxval 1..255) is supported");
    const std::size_t start = reader.raster_start();
    const std::size_t need = static_cast<std::size_t>(pgm.width) * static_cast<std::size_t>(pgm.height);
    if (bytes.size() < start + need)
        fail(ErrorKind::TruncatedData, "PGM raster has " + std::to_string(bytes.size() - std::min(bytes.size(), start)) +
                                           " of " + std::to_string(need) + " bytes");
    pgm.samples.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                       bytes.begin() + static_cast<std::ptrdiff_t>(start + need));
    return pgm;
}

inline std::vector<std::uint8_t> encode_pgm(int width, int height, const std::vector<std::uint8_t>& samples)
{
    const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), samples.begin(), samples.end());
    return out;
}

} // namespace detail

inline std::uint8_t quantize(float v) noexcept
{
    if (!(v > 0.0f))
        return 0;
    if (v >= 1.0f)
        return 255;
    return static_cast<std::uint8_t>(std::lround(v * 255.0f));
}

/// Intensities are mapped linearly [0,1] -> [0,255] with rounding.
inline void write_pgm(const std::filesystem::path& path, const Image& image)
{
    std::vector<std::uint8_t> samples(image.size());
    std::transform(image.values().begin(), image.values().end(), samples.begin(), quantize);
    detail::write_file(path, detail::encode_pgm(image.width(), image.height(), samples));
}

/// Masks are stored as {0, 255}.
inline void write_pgm(const std::filesystem::path& path, const BinaryMask& mask)
{
    std::vector<std::uint8_t> samples(mask.size());
    std::transform(mask.values().begin(), mask.values().end(), samples.begin(),
                   [](std::uint8_t v) { return static_cast<std::uint8_t>(v ? 255 : 0); });
    detail::write_file(path, detail::encode_pgm(mask.width(), mask.height(), samples));
}

inline Image read_pgm_image(const std::filesystem::path& path)
{
    const auto pgm = detail::parse_pgm(detail::read_file(path));
    Image image(pgm.height, pgm.width);
    const float scale = 1.0f / static_cast<float>(pgm.maxval);
    for (std::size_t i = 0; i < pgm.samples.size(); ++i)
        image.values()[i] = std::min(1.0f, static_cast<float>(pgm.samples[i]) * scale);
    return image;
}

/// Samples at or above half of maxval are foreground.
inline BinaryMask read_pgm_mask(const std::filesystem::path& path)
{
    const auto pgm = detail::parse_pgm(detail::read_file(path));
    BinaryMask mask(pgm.height, pgm.width);
    for (std::size_t i = 0; i < pgm.samples.size(); ++i)
        mask.values()[i] = static_cast<std::uint8_t>(2 * static_cast<int>(pgm.samples[i]) >= pgm.maxval ? 1 : 0);
    return mask;
}

inline constexpr std::string_view kFmapMagic = "FMAP";

/// "FMAP", u32 width, u32 height, row-major little-endian float32.
inline std::vector<std::uint8_t> encode_fmap(const Grid<float>& grid)
{
    std::vector<std::uint8_t> out(kFmapMagic.begin(), kFmapMagic.end());
    out.reserve(12 + 4 * grid.size());
    detail::put_u32(out, static_cast<std::uint32_t>(grid.width()));
    detail::put_u32(out, static_cast<std::uint32_t>(grid.height()));
    for (float v : grid.values())
        detail::put_f32(out, v);
    return out;
}

inline Grid<float> decode_fmap(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < 4 || !std::equal(kFmapMagic.begin(), kFmapMagic.end(), bytes.begin()))
        fail(ErrorKind::BadMagic, "missing FMAP magic");
    if (bytes.size() < 12)
        fail(ErrorKind::TruncatedData, "FMAP header truncated");
    const std::uint32_t width = detail::get_u32(bytes.data() + 4);
    const std::uint32_t height = detail::get_u32(bytes.data() + 8);
    if (width > (1u << 20) || height > (1u << 20))
        fail(ErrorKind::MalformedHeader, "FMAP dimensions implausibly large");
    const std::size_t count = static_cast<std::size_t>(width) * height;
    if (bytes.size() < 12 + 4 * count)
        fail(ErrorKind::TruncatedData, "FMAP payload truncated");
    Grid<float> grid(static_cast<int>(height), static_cast<int>(width));
    for (std::size_t i = 0; i < count; ++i)
        grid.values()[i] = detail::get_f32(bytes.data() + 12 + 4 * i);
    return grid;
}

inline void write_fmap(const std::filesystem::path& path, const Grid<float>& grid)
{
    detail::write_file(path, encode_fmap(grid));
}

inline Grid<float> read_fmap(const std::filesystem::path& path) { return decode_fmap(detail::read_file(path)); }

} // namespace bdrseg::io
