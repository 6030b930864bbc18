#pragma once

// Synthetic fixtures: plain discs for detector sweeps and coin-like
// photographs for end-to-end runs.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>

#include "dataset.hpp"
#include "detail/numeric.hpp"
#include "raster.hpp"

namespace coinforge::synth {

struct DiscSpec {
  int width = 150;
  int height = 150;
  double cx = 75.0;
  double cy = 75.0;
  double radius = 40.0;
  int foreground = 200;
  int background = 40;
  double noise_sigma = 0.0;
};

// Filled disc, pixel inside when its center lies within `radius`, plus
// optional Gaussian noise.
inline Raster render_disc(const DiscSpec& spec, detail::Rng* rng = nullptr) {
  Raster img(spec.width, spec.height, 1);
  const double r2 = spec.radius * spec.radius;
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const double dx = x - spec.cx;
      const double dy = y - spec.cy;
      double v = dx * dx + dy * dy <= r2 ? spec.foreground : spec.background;
      if (rng != nullptr && spec.noise_sigma > 0.0) v += spec.noise_sigma * rng->normal();
      img.at(x, y) = detail::round_to_u8(v);
    }
  }
  return img;
}

// Six visual classes in the fixed class order
// {1 rev, 2 rev, 5 rev, 1 obv, 2 obv, 5 obv}. The denomination is carried
// by a set of concentric dark rings; the reverse shows a solid central
// "numeral" blob while the obverse shows a cross.
struct CoinPhotoSpec {
  int width = 200;
  int height = 200;
  int class6 = 0;
  int style = 1;
  double radius_min = 50.0;
  double radius_max = 80.0;
  double noise_sigma = 4.0;
};

struct CoinPhoto {
  Raster image;
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.0;
};

inline CoinPhoto render_coin_photo(const CoinPhotoSpec& spec, detail::Rng& rng) {
  const int denom_index = spec.class6 % 3;
  const bool reverse = spec.class6 < 3;
  const double radius = rng.uniform(spec.radius_min, spec.radius_max);
  const double margin = radius + 4.0;
  const double cx = rng.uniform(margin, spec.width - 1 - margin);
  const double cy = rng.uniform(margin, spec.height - 1 - margin);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);

  // Metal tint varies a little with style; rings sit at fixed radii.
  const double metal = 175.0 + 6.0 * (spec.style - 1) + rng.uniform(-8.0, 8.0);
  const double background = 30.0 + rng.uniform(-6.0, 6.0);
  static constexpr double kRings[3][3] = {{0.62, -1.0, -1.0}, {0.45, 0.76, -1.0}, {0.40, 0.60, 0.80}};
  const double ring_half_width = 0.035 + 0.004 * (spec.style - 1);

  Raster img(spec.width, spec.height, 3);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const double dx = x - cx;
      const double dy = y - cy;
      const double rho = std::sqrt(dx * dx + dy * dy) / radius;
      double v = background;
      if (rho <= 1.0) {
        v = metal;
        for (double ring : kRings[denom_index]) {
          if (ring > 0 && std::abs(rho - ring) <= ring_half_width) v = metal - 70.0;
        }
        // Local frame of the coin's own rotation.
        const double u = (dx * ca + dy * sa) / radius;
        const double t = (-dx * sa + dy * ca) / radius;
        if (reverse) {
          if (u * u + t * t <= 0.18 * 0.18) v = metal - 90.0;
        } else if ((std::abs(u) <= 0.05 && std::abs(t) <= 0.25) || (std::abs(t) <= 0.05 && std::abs(u) <= 0.25)) {
          v = metal - 90.0;
        }
      }
      for (int c = 0; c < 3; ++c) {
        const double tint = c == 0 ? 1.0 : (c == 1 ? 0.92 : 0.80);
        img.at(x, y, c) = detail::round_to_u8(v * tint + spec.noise_sigma * rng.normal());
      }
    }
  }
  return {std::move(img), cx, cy, radius};
}

// One photo per (class, coin index). Coin k of a denomination appears on
// both sides, so its obverse and reverse photos share the coin id
// "c<denomination>-<k>". Each photo draws from its own seed, so the set is
// independent of generation order.
struct RawPhoto {
  std::string relative_path;  // <denomination>/<side>/<style>/<coin>_<obv|rev>.ppm
  int class6 = 0;
  CoinPhoto photo;
};

inline RawPhoto render_raw_photo(int class6, int index, std::uint64_t seed) {
  const int denom = kDenominations[class6 % 3];
  const bool reverse = class6 < 3;
  const int style = 1 + index % kStyleCounts[class6 % 3];
  detail::Rng rng(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(class6 * 1000003 + index + 1)));
  CoinPhotoSpec spec;
  spec.class6 = class6;
  spec.style = style;
  char name[64];
  std::snprintf(name, sizeof name, "c%d-%03d_%s.ppm", denom, index, reverse ? "rev" : "obv");
  RawPhoto out;
  out.relative_path =
      std::to_string(denom) + "/" + (reverse ? "reverse" : "obverse") + "/" + std::to_string(style) + "/" + name;
  out.class6 = class6;
  out.photo = render_coin_photo(spec, rng);
  return out;
}

}  // namespace coinforge::synth
