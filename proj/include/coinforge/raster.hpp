#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "detail/numeric.hpp"

namespace coinforge {

class RasterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Row-major, interleaved 8-bit image with 1 (gray) or 3 (RGB) channels.
class Raster {
 public:
  Raster() = default;

  Raster(int width, int height, int channels, std::uint8_t value = 0)
      : width_(width), height_(height), channels_(channels) {
    check_shape(width, height, channels);
    data_.assign(size_for(width, height, channels), value);
  }

  Raster(int width, int height, int channels, std::vector<std::uint8_t> data)
      : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
    check_shape(width, height, channels);
    if (data_.size() != size_for(width, height, channels)) {
      throw RasterError("raster data length " + std::to_string(data_.size()) +
                        " does not match " + std::to_string(width) + "x" +
                        std::to_string(height) + "x" + std::to_string(channels));
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }

  std::span<const std::uint8_t> data() const { return data_; }
  std::span<std::uint8_t> data() { return data_; }

  std::uint8_t at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }
  std::uint8_t& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }

  bool operator==(const Raster&) const = default;

 private:
  static void check_shape(int w, int h, int c) {
    if (w < 1 || h < 1) throw RasterError("raster dimensions must be at least 1x1");
    if (c != 1 && c != 3) throw RasterError("raster channels must be 1 or 3, got " + std::to_string(c));
  }
  static std::size_t size_for(int w, int h, int c) {
    return static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c);
  }
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels_) +
           static_cast<std::size_t>(c);
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> data_;
};

// Per-channel value for pixels that have no source data (rotation corners,
// crops past the frame).
struct FillValue {
  std::vector<std::uint8_t> channels;

  bool operator==(const FillValue&) const = default;
};

// BT.601 luma, rounded half-up.
inline Raster to_grayscale(const Raster& img) {
  if (img.channels() != 3) {
    throw RasterError("to_grayscale expects a 3-channel image, got " + std::to_string(img.channels()));
  }
  Raster out(img.width(), img.height(), 1);
  const auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double luma = 0.299 * src[3 * i] + 0.587 * src[3 * i + 1] + 0.114 * src[3 * i + 2];
    dst[i] = detail::round_to_u8(luma);
  }
  return out;
}

namespace detail {

// Bilinear sample at a real source coordinate already inside
// [0, w-1] x [0, h-1].
inline double bilinear_at(const Raster& img, double sx, double sy, int c) {
  const int x0 = std::min(static_cast<int>(std::floor(sx)), img.width() - 1);
  const int y0 = std::min(static_cast<int>(std::floor(sy)), img.height() - 1);
  const int x1 = std::min(x0 + 1, img.width() - 1);
  const int y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = sx - x0;
  const double fy = sy - y0;
  const double top = (1.0 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c);
  const double bottom = (1.0 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c);
  return (1.0 - fy) * top + fy * bottom;
}

// Snaps values within 1e-9 of an integer onto it so exact grid hits from
// trigonometry survive floating-point noise.
inline double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace detail

// Bilinear resize with pixel-center alignment; source coordinates are
// clamped to the frame.
inline Raster resize_bilinear(const Raster& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) {
    throw RasterError("resize target must be at least 1x1, got " + std::to_string(out_w) + "x" +
                      std::to_string(out_h));
  }
  if (out_w == img.width() && out_h == img.height()) return img;
  Raster out(out_w, out_h, img.channels());
  const double scale_x = static_cast<double>(img.width()) / out_w;
  const double scale_y = static_cast<double>(img.height()) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double sy = std::clamp((y + 0.5) * scale_y - 0.5, 0.0, static_cast<double>(img.height() - 1));
    for (int x = 0; x < out_w; ++x) {
      const double sx = std::clamp((x + 0.5) * scale_x - 0.5, 0.0, static_cast<double>(img.width() - 1));
      for (int c = 0; c < img.channels(); ++c) {
        out.at(x, y, c) = detail::round_to_u8(detail::bilinear_at(img, sx, sy, c));
      }
    }
  }
  return out;
}

// Rounded mean of the four corner pixels, per channel.
inline FillValue corner_fill_value(const Raster& img) {
  const int r = img.width() - 1;
  const int b = img.height() - 1;
  FillValue fill;
  for (int c = 0; c < img.channels(); ++c) {
    const int sum = img.at(0, 0, c) + img.at(r, 0, c) + img.at(0, b, c) + img.at(r, b, c);
    fill.channels.push_back(static_cast<std::uint8_t>((sum + 2) / 4));
  }
  return fill;
}

// Same-frame rotation about ((W-1)/2, (H-1)/2); positive degrees turn the
// picture counter-clockwise as displayed. Output pixels whose source lies
// outside the frame take `fill`.
inline Raster rotate(const Raster& img, double degrees, const FillValue& fill) {
  if (!std::isfinite(degrees)) throw RasterError("rotation angle must be finite");
  if (fill.channels.size() != static_cast<std::size_t>(img.channels())) {
    throw RasterError("fill value has " + std::to_string(fill.channels.size()) +
                      " channels, image has " + std::to_string(img.channels()));
  }
  double turn = std::fmod(degrees, 360.0);
  if (turn < 0) turn += 360.0;
  if (turn == 0.0) return img;

  double cos_a;
  double sin_a;
  if (turn == 90.0) {
    cos_a = 0.0, sin_a = 1.0;
  } else if (turn == 180.0) {
    cos_a = -1.0, sin_a = 0.0;
  } else if (turn == 270.0) {
    cos_a = 0.0, sin_a = -1.0;
  } else {
    const double rad = turn * std::numbers::pi / 180.0;
    cos_a = std::cos(rad), sin_a = std::sin(rad);
  }

  const double cx = (img.width() - 1) / 2.0;
  const double cy = (img.height() - 1) / 2.0;
  const double max_x = img.width() - 1;
  const double max_y = img.height() - 1;
  Raster out(img.width(), img.height(), img.channels());
  for (int y = 0; y < img.height(); ++y) {
    const double dy = y - cy;
    for (int x = 0; x < img.width(); ++x) {
      const double dx = x - cx;
      const double sx = detail::snap(cx + dx * cos_a - dy * sin_a);
      const double sy = detail::snap(cy + dx * sin_a + dy * cos_a);
      const bool inside = sx >= 0.0 && sx <= max_x && sy >= 0.0 && sy <= max_y;
      for (int c = 0; c < img.channels(); ++c) {
        out.at(x, y, c) = inside ? detail::round_to_u8(detail::bilinear_at(img, sx, sy, c)) : fill.channels[c];
      }
    }
  }
  return out;
}

inline Raster adjust_brightness(const Raster& img, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw RasterError("brightness factor must be positive and finite");
  }
  Raster out = img;
  for (auto& p : out.data()) p = detail::round_to_u8(p * factor);
  return out;
}

}  // namespace coinforge
