#pragma once

// Circle Hough transform for single-coin photographs, and the cleaning step
// that turns a raw photograph into a centered 150x150 grayscale crop.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "raster.hpp"

namespace coinforge {

inline constexpr int kCleanSize = 150;

// Real-valued single-channel image.
struct Field {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  Field() = default;
  Field(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0.0) {}

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  double clamped(int x, int y) const {
    return at(std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1));
  }
};

struct CircleHit {
  int cx = 0;
  int cy = 0;
  int radius = 0;
  int score = 0;

  bool operator==(const CircleHit&) const = default;
};

struct DetectParams {
  int blur_radius = 2;
  double edge_threshold_rel = 0.25;
  // Absolute Sobel-magnitude floor for edges, so sensor noise on an empty
  // frame never reaches the relative threshold alone.
  double edge_min_magnitude = 80.0;
  double r_min_frac = 0.20;
  double r_max_frac = 0.48;
  int radius_step = 1;
  // 0 selects the default: half the perimeter of the smallest swept circle.
  int vote_threshold = 0;

  void validate() const {
    if (!(r_min_frac > 0.0 && r_min_frac < r_max_frac && r_max_frac <= 0.5)) {
      throw std::invalid_argument("detect params: need 0 < r_min_frac < r_max_frac <= 0.5");
    }
    if (!(edge_threshold_rel > 0.0 && edge_threshold_rel < 1.0)) {
      throw std::invalid_argument("detect params: edge_threshold_rel must lie in (0, 1)");
    }
    if (radius_step < 1) throw std::invalid_argument("detect params: radius_step must be >= 1");
    if (blur_radius < 0) throw std::invalid_argument("detect params: blur_radius must be >= 0");
    if (edge_min_magnitude < 0.0) throw std::invalid_argument("detect params: edge_min_magnitude must be >= 0");
    if (vote_threshold < 0) throw std::invalid_argument("detect params: vote_threshold must be >= 0");
  }

  int min_radius(int width, int height) const {
    return static_cast<int>(std::ceil(r_min_frac * std::min(width, height) - 1e-9));
  }
  int max_radius(int width, int height) const {
    return static_cast<int>(std::floor(r_max_frac * std::min(width, height) + 1e-9));
  }
  int effective_vote_threshold(int width, int height) const {
    if (vote_threshold > 0) return vote_threshold;
    return static_cast<int>(std::ceil(0.5 * 2.0 * std::numbers::pi * min_radius(width, height)));
  }
};

class NoCoinFound : public std::runtime_error {
 public:
  explicit NoCoinFound(int best_score)
      : std::runtime_error("no circle above the vote threshold (best score " + std::to_string(best_score) + ")"),
        best_score_(best_score) {}

  int best_score() const { return best_score_; }

 private:
  int best_score_;
};

namespace detail {

inline Field to_field(const Raster& gray) {
  if (gray.channels() != 1) throw RasterError("expected a grayscale raster");
  Field f(gray.width(), gray.height());
  const auto d = gray.data();
  for (std::size_t i = 0; i < d.size(); ++i) f.values[i] = d[i];
  return f;
}

// Separable Gaussian, sigma = radius / 2, edge-clamped.
inline Field gaussian_blur(const Field& src, int radius) {
  if (radius <= 0) return src;
  const double sigma = radius / 2.0;
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= sum;

  Field tmp(src.width, src.height);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * src.clamped(x + i, y);
      tmp.at(x, y) = acc;
    }
  }
  Field out(src.width, src.height);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp.clamped(x, y + i);
      out.at(x, y) = acc;
    }
  }
  return out;
}

struct SobelResult {
  Field gx;
  Field gy;
  Field magnitude;
};

inline SobelResult sobel(const Field& f) {
  SobelResult r{Field(f.width, f.height), Field(f.width, f.height), Field(f.width, f.height)};
  for (int y = 0; y < f.height; ++y) {
    for (int x = 0; x < f.width; ++x) {
      const double tl = f.clamped(x - 1, y - 1), tc = f.clamped(x, y - 1), tr = f.clamped(x + 1, y - 1);
      const double ml = f.clamped(x - 1, y), mr = f.clamped(x + 1, y);
      const double bl = f.clamped(x - 1, y + 1), bc = f.clamped(x, y + 1), br = f.clamped(x + 1, y + 1);
      const double gx = (tr + 2 * mr + br) - (tl + 2 * ml + bl);
      const double gy = (bl + 2 * bc + br) - (tl + 2 * tc + tr);
      r.gx.at(x, y) = gx;
      r.gy.at(x, y) = gy;
      r.magnitude.at(x, y) = std::sqrt(gx * gx + gy * gy);
    }
  }
  return r;
}

struct EdgePixel {
  int x;
  int y;
};

// Thresholded edges thinned to one pixel across by suppressing pixels that
// are not a maximum along the (quantized) gradient direction.
inline std::vector<EdgePixel> thin_edges(const SobelResult& s, double rel_threshold, double min_magnitude) {
  const auto& mag = s.magnitude;
  const double peak = *std::max_element(mag.values.begin(), mag.values.end());
  std::vector<EdgePixel> edges;
  if (peak <= 0.0) return edges;
  const double threshold = std::max(rel_threshold * peak, min_magnitude);
  for (int y = 0; y < mag.height; ++y) {
    for (int x = 0; x < mag.width; ++x) {
      const double m = mag.at(x, y);
      if (m < threshold || m <= 0.0) continue;
      double angle = std::atan2(s.gy.at(x, y), s.gx.at(x, y)) * 180.0 / std::numbers::pi;
      if (angle < 0) angle += 180.0;
      int ux;
      int uy;
      if (angle < 22.5 || angle >= 157.5) {
        ux = 1, uy = 0;
      } else if (angle < 67.5) {
        ux = 1, uy = 1;
      } else if (angle < 112.5) {
        ux = 0, uy = 1;
      } else {
        ux = -1, uy = 1;
      }
      if (m > mag.clamped(x - ux, y - uy) && m >= mag.clamped(x + ux, y + uy)) edges.push_back({x, y});
    }
  }
  return edges;
}

// Integer offsets with Euclidean length in [r - 1, r + 1). The two-pixel
// band keeps a boundary that falls between integer radii from splitting
// its votes.
inline std::vector<std::array<int, 2>> ring_offsets(int r) {
  std::vector<std::array<int, 2>> out;
  const double lo = (r - 1.0) * (r - 1.0);
  const double hi = (r + 1.0) * (r + 1.0);
  for (int dy = -r - 1; dy <= r + 1; ++dy) {
    for (int dx = -r - 1; dx <= r + 1; ++dx) {
      const double d2 = static_cast<double>(dx) * dx + static_cast<double>(dy) * dy;
      if (d2 >= lo && d2 < hi) out.push_back({dx, dy});
    }
  }
  return out;
}

struct HoughOutcome {
  std::vector<CircleHit> hits;
  int best_score = 0;
};

inline HoughOutcome hough_transform(const Raster& gray, const DetectParams& params) {
  params.validate();
  if (gray.channels() != 1) throw RasterError("hough_circles expects a grayscale raster");
  HoughOutcome outcome;
  const int w = gray.width();
  const int h = gray.height();
  const int r_min = std::max(1, params.min_radius(w, h));
  const int r_max = params.max_radius(w, h);
  if (r_max < r_min) return outcome;

  const auto edges = thin_edges(sobel(gaussian_blur(to_field(gray), params.blur_radius)), params.edge_threshold_rel,
                                 params.edge_min_magnitude);
  if (edges.empty()) return outcome;

  std::vector<int> radii;
  for (int r = r_min; r <= r_max; r += params.radius_step) radii.push_back(r);
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  std::vector<int> acc(plane * radii.size(), 0);
  for (std::size_t ri = 0; ri < radii.size(); ++ri) {
    int* slice = acc.data() + ri * plane;
    for (const auto& [dx, dy] : ring_offsets(radii[ri])) {
      for (const auto& e : edges) {
        const int cx = e.x - dx;
        const int cy = e.y - dy;
        if (cx >= 0 && cx < w && cy >= 0 && cy < h) ++slice[static_cast<std::size_t>(cy) * w + cx];
      }
    }
  }

  const int threshold = params.effective_vote_threshold(w, h);
  std::vector<CircleHit> candidates;
  for (std::size_t ri = 0; ri < radii.size(); ++ri) {
    const int* slice = acc.data() + ri * plane;
    for (int cy = 0; cy < h; ++cy) {
      for (int cx = 0; cx < w; ++cx) {
        const int votes = slice[static_cast<std::size_t>(cy) * w + cx];
        outcome.best_score = std::max(outcome.best_score, votes);
        if (votes >= threshold) candidates.push_back({cx, cy, radii[ri], votes});
      }
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const CircleHit& a, const CircleHit& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.radius != b.radius) return a.radius < b.radius;
    if (a.cy != b.cy) return a.cy < b.cy;
    return a.cx < b.cx;
  });
  for (const auto& c : candidates) {
    const bool suppressed = std::any_of(outcome.hits.begin(), outcome.hits.end(), [&](const CircleHit& kept) {
      return std::abs(kept.radius - c.radius) <= params.radius_step && std::abs(kept.cx - c.cx) <= 2 &&
             std::abs(kept.cy - c.cy) <= 2;
    });
    if (!suppressed) outcome.hits.push_back(c);
  }
  return outcome;
}

}  // namespace detail

// Sobel gradient magnitude with edge-clamped borders.
inline Field sobel_magnitude(const Raster& gray) {
  return detail::sobel(detail::to_field(gray)).magnitude;
}

// Detected circles sorted by score (descending), then radius, then
// row-major center.
inline std::vector<CircleHit> hough_circles(const Raster& gray, const DetectParams& params = {}) {
  return detail::hough_transform(gray, params).hits;
}

inline CircleHit detect_coin(const Raster& img, const DetectParams& params = {}) {
  const Raster gray = img.channels() == 3 ? to_grayscale(img) : img;
  auto outcome = detail::hough_transform(gray, params);
  if (outcome.hits.empty()) throw NoCoinFound(outcome.best_score);
  return outcome.hits.front();
}

// Square crop of side 2*r*margin around a detected circle; pixels past the
// frame take the source's corner fill value.
inline Raster crop_circle(const Raster& img, const CircleHit& hit, double margin) {
  if (!(margin > 0.0)) throw std::invalid_argument("crop margin must be positive");
  const int side = std::max(1, static_cast<int>(detail::round_half_up(2.0 * hit.radius * margin)));
  const int x0 = hit.cx - (side - 1) / 2;
  const int y0 = hit.cy - (side - 1) / 2;
  const FillValue fill = corner_fill_value(img);
  Raster out(side, side, img.channels());
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const int sx = x0 + x;
      const int sy = y0 + y;
      const bool inside = sx >= 0 && sx < img.width() && sy >= 0 && sy < img.height();
      for (int c = 0; c < img.channels(); ++c) out.at(x, y, c) = inside ? img.at(sx, sy, c) : fill.channels[c];
    }
  }
  return out;
}

// Detect, crop, resize to 150x150 (in the source's channel count), then
// convert to grayscale.
inline Raster clean_image(const Raster& img, const DetectParams& params = {}, double margin = 1.10) {
  const CircleHit hit = detect_coin(img, params);
  Raster resized = resize_bilinear(crop_circle(img, hit, margin), kCleanSize, kCleanSize);
  return resized.channels() == 3 ? to_grayscale(resized) : resized;
}

}  // namespace coinforge
