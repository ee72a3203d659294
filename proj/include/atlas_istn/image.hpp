#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "atlas_istn/error.hpp"

namespace atlas_istn {

inline constexpr int kNumClasses = 6;

enum class CardiacClass : std::uint8_t {
    Background = 0,
    LeftAtrium = 1,
    RightAtrium = 2,
    LeftVentricle = 3,
    RightVentricle = 4,
    WholeHeart = 5,
};

inline constexpr std::array<const char*, kNumClasses> kClassNames = {"BG", "LA", "RA", "LV", "RV", "WH"};

// Row-major 2D array; row index is y, column index is x.
template <typename T>
class Grid2D {
public:
    Grid2D() = default;
    Grid2D(int height, int width, T fill = T{})
        : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill) {
        if (height < 0 || width < 0) throw InvalidArgument("Grid2D: negative dimension");
    }

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }

    T& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    const T& operator()(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    bool operator==(const Grid2D&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

using LabelMap = Grid2D<std::uint8_t>;
using GrayImage = Grid2D<std::uint8_t>;
using FloatImage = Grid2D<float>;

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};
using RgbImage = Grid2D<Rgb>;

// Palette used for label PNGs and exported atlas label maps.
inline constexpr std::array<Rgb, kNumClasses> kLabelPalette = {{
    {0, 0, 0},        // BG
    {230, 25, 75},    // LA
    {60, 180, 75},    // RA
    {255, 225, 25},   // LV
    {0, 130, 200},    // RV
    {245, 130, 48},   // WH
}};

}  // namespace atlas_istn
