#pragma once

#include "panogs/core/error.hpp"
#include "panogs/core/memory.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

namespace panogs {

/// Row-major, channel-interleaved raster of doubles.
///
/// Used for equirectangular panoramas, cubemap faces, feature maps, depth
/// maps and gradient images alike. Storage is charged to the active
/// `MemoryCounter`.
class Image {
public:
    Image() = default;
    Image(int width, int height, int channels, double fill = 0.0)
        : width_(width), height_(height), channels_(channels) {
        require(width >= 0 && height >= 0 && channels >= 0, "image dimensions must be non-negative");
        data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int channels() const noexcept { return channels_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t index(int x, int y, int c = 0) const noexcept {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    double& at(int x, int y, int c = 0) noexcept { return data_[index(x, y, c)]; }
    double at(int x, int y, int c = 0) const noexcept { return data_[index(x, y, c)]; }

    std::span<double> pixel(int x, int y) noexcept { return {data_.data() + index(x, y), static_cast<std::size_t>(channels_)}; }
    std::span<const double> pixel(int x, int y) const noexcept {
        return {data_.data() + index(x, y), static_cast<std::size_t>(channels_)};
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool same_shape(const Image& other) const noexcept {
        return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_;
    }

    bool is_erp() const noexcept { return width_ > 0 && width_ == 2 * height_; }

    bool all_finite() const noexcept {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const Image& a, const Image& b) noexcept {
        return a.same_shape(b) && std::equal(a.data_.begin(), a.data_.end(), b.data_.begin());
    }

private:
    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    tracked_vector<double> data_;
};

inline void require_erp(const Image& img, const std::string& what) {
    require(img.is_erp(), what + ": equirectangular image must have width == 2 * height > 0");
}

inline void require_same_shape(const Image& a, const Image& b, const std::string& what) {
    require(a.same_shape(b), what + ": image dimensions differ");
}

/// Copies channels [first, first + count) of `src`.
inline Image slice_channels(const Image& src, int first, int count) {
    require(first >= 0 && count >= 0 && first + count <= src.channels(), "slice_channels: range out of bounds");
    Image out(src.width(), src.height(), count);
    for (int y = 0; y < src.height(); ++y)
        for (int x = 0; x < src.width(); ++x)
            for (int c = 0; c < count; ++c) out.at(x, y, c) = src.at(x, y, first + c);
    return out;
}

inline Image concat_channels(const Image& a, const Image& b) {
    require(a.width() == b.width() && a.height() == b.height(), "concat_channels: spatial dimensions differ");
    Image out(a.width(), a.height(), a.channels() + b.channels());
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) {
            for (int c = 0; c < a.channels(); ++c) out.at(x, y, c) = a.at(x, y, c);
            for (int c = 0; c < b.channels(); ++c) out.at(x, y, a.channels() + c) = b.at(x, y, c);
        }
    return out;
}

/// Box-filter downsampling by an integer factor.
inline Image downsample_box(const Image& src, int factor) {
    require(factor >= 1, "downsample_box: factor must be positive");
    if (factor == 1) return src;
    require(src.width() % factor == 0 && src.height() % factor == 0, "downsample_box: size not divisible by factor");
    Image out(src.width() / factor, src.height() / factor, src.channels());
    const double norm = 1.0 / (factor * factor);
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x)
            for (int c = 0; c < src.channels(); ++c) {
                double sum = 0.0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx) sum += src.at(x * factor + dx, y * factor + dy, c);
                out.at(x, y, c) = sum * norm;
            }
    return out;
}

} // namespace panogs
