#pragma once

// The fixed 38-variant augmentation plan: 36 rotations in 10 degree steps
// and two brightness changes of 33%.

#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hough.hpp"
#include "raster.hpp"

namespace coinforge {

class AugmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AugmentTag {
  enum class Kind { rotation, brightness };

  Kind kind = Kind::rotation;
  // Degrees for rotations, hundredths of the brightness factor otherwise.
  int parameter = 0;

  static AugmentTag rotation(int degrees) { return {Kind::rotation, degrees}; }
  static AugmentTag brightness(int hundredths) { return {Kind::brightness, hundredths}; }

  double factor() const { return parameter / 100.0; }

  bool operator==(const AugmentTag&) const = default;
};

inline constexpr int kRotationCount = 36;
inline constexpr int kRotationStepDegrees = 10;
inline constexpr int kDarkenHundredths = 67;
inline constexpr int kBrightenHundredths = 133;
inline constexpr std::size_t kPlanSize = 38;
inline constexpr std::size_t kFanOut = kPlanSize + 1;

inline std::vector<AugmentTag> augment_plan() {
  std::vector<AugmentTag> plan;
  plan.reserve(kPlanSize);
  for (int k = 1; k <= kRotationCount; ++k) plan.push_back(AugmentTag::rotation(k * kRotationStepDegrees));
  plan.push_back(AugmentTag::brightness(kDarkenHundredths));
  plan.push_back(AugmentTag::brightness(kBrightenHundredths));
  return plan;
}

// "rot010" / "bri067"; an absent tag is the unaugmented original.
inline std::string tag_name(const std::optional<AugmentTag>& tag) {
  if (!tag) return "original";
  char buf[16];
  std::snprintf(buf, sizeof buf, "%s%03d", tag->kind == AugmentTag::Kind::rotation ? "rot" : "bri", tag->parameter);
  return buf;
}

// Inverse of tag_name; rejects anything outside the plan.
inline std::optional<std::optional<AugmentTag>> parse_tag_name(std::string_view s) {
  if (s == "original") return std::optional<AugmentTag>{};
  for (const auto& tag : augment_plan()) {
    if (tag_name(tag) == s) return std::optional<AugmentTag>{tag};
  }
  return std::nullopt;
}

inline Raster apply_augmentation(const Raster& img, const AugmentTag& tag) {
  if (img.width() != kCleanSize || img.height() != kCleanSize || img.channels() != 1) {
    throw AugmentError("augmentation expects a 150x150 grayscale image, got " + std::to_string(img.width()) + "x" +
                       std::to_string(img.height()) + "x" + std::to_string(img.channels()));
  }
  if (tag.kind == AugmentTag::Kind::rotation) return rotate(img, tag.parameter, corner_fill_value(img));
  return adjust_brightness(img, tag.factor());
}

struct Provenance {
  std::string source_id;
  std::optional<AugmentTag> tag;

  bool operator==(const Provenance&) const = default;
};

struct AugmentedImage {
  Raster image;
  Provenance provenance;
};

inline std::string augmented_file_name(const Provenance& p) { return p.source_id + "_" + tag_name(p.tag) + ".pgm"; }

// The original followed by the 38 planned variants, in plan order.
inline std::vector<AugmentedImage> expand(const Raster& img, const std::string& source_id) {
  std::vector<AugmentedImage> out;
  out.reserve(kFanOut);
  const auto plan = augment_plan();
  std::vector<Raster> variants;
  variants.reserve(plan.size());
  for (const auto& tag : plan) variants.push_back(apply_augmentation(img, tag));
  out.push_back({img, {source_id, std::nullopt}});
  for (std::size_t i = 0; i < plan.size(); ++i) out.push_back({std::move(variants[i]), {source_id, plan[i]}});
  return out;
}

}  // namespace coinforge
