#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace bdrseg {

/// Integer pixel coordinate. Ordering is row-major (y first, then x).
struct Pixel {
    int y = 0;
    int x = 0;

    friend constexpr auto operator<=>(const Pixel&, const Pixel&) = default;
};

/// Dense row-major 2D array. Used for images, masks and distance maps.
template <typename T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : height_(height), width_(width)
    {
        if (height < 0 || width < 0)
            fail(ErrorKind::ShapeMismatch, "negative grid extent");
        data_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    bool contains(int y, int x) const noexcept
    {
        return y >= 0 && y < height_ && x >= 0 && x < width_;
    }
    bool contains(Pixel p) const noexcept { return contains(p.y, p.x); }

    T& operator()(int y, int x) noexcept { return data_[index(y, x)]; }
    const T& operator()(int y, int x) const noexcept { return data_[index(y, x)]; }
    T& operator[](Pixel p) noexcept { return data_[index(p.y, p.x)]; }
    const T& operator[](Pixel p) const noexcept { return data_[index(p.y, p.x)]; }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    bool same_shape(const auto& other) const noexcept
    {
        return height_ == other.height() && width_ == other.width();
    }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    std::size_t index(int y, int x) const noexcept
    {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

/// Grayscale intensities in [0, 1].
using Image = Grid<float>;
/// {0 = background, 1 = kidney}.
using BinaryMask = Grid<std::uint8_t>;
/// exp(-D) boundary distance field, values in (0, 1].
using DistanceMap = Grid<float>;

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* context)
{
    if (!a.same_shape(b))
        fail(ErrorKind::ShapeMismatch,
             std::string(context) + ": " + std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                 " vs " + std::to_string(b.height()) + "x" + std::to_string(b.width()));
}

inline std::size_t count_foreground(const BinaryMask& mask) noexcept
{
    std::size_t n = 0;
    for (auto v : mask.values())
        n += v != 0;
    return n;
}

/// Foreground pixels of a mask in row-major order.
inline std::vector<Pixel> foreground_pixels(const BinaryMask& mask)
{
    std::vector<Pixel> out;
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask(y, x))
                out.push_back({y, x});
    return out;
}

inline BinaryMask pixels_to_mask(std::span<const Pixel> pixels, int height, int width)
{
    BinaryMask mask(height, width, 0);
    for (auto p : pixels)
        if (mask.contains(p))
            mask[p] = 1;
    return mask;
}

} // namespace bdrseg
