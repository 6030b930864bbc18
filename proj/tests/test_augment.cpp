#include <gtest/gtest.h>

#include <set>

#include "coinforge/augment.hpp"
#include "support.hpp"

using namespace coinforge;
using testing_support::random_raster;

TEST(AugmentPlan, ShapeAndOrder) {
  const auto plan = augment_plan();
  ASSERT_EQ(plan.size(), 38u);
  EXPECT_EQ(plan.front(), AugmentTag::rotation(10));
  EXPECT_EQ(plan.back(), AugmentTag::brightness(133));
  EXPECT_EQ(plan[36], AugmentTag::brightness(67));
  for (int k = 0; k < 36; ++k) EXPECT_EQ(plan[k], AugmentTag::rotation(10 * (k + 1)));
  EXPECT_DOUBLE_EQ(plan.back().factor(), 1.33);
}

TEST(AugmentTag, Names) {
  EXPECT_EQ(tag_name(AugmentTag::rotation(10)), "rot010");
  EXPECT_EQ(tag_name(AugmentTag::rotation(360)), "rot360");
  EXPECT_EQ(tag_name(AugmentTag::brightness(67)), "bri067");
  EXPECT_EQ(tag_name(std::nullopt), "original");
  std::set<std::string> names;
  for (const auto& t : augment_plan()) {
    const auto n = tag_name(t);
    names.insert(n);
    const auto back = parse_tag_name(n);
    ASSERT_TRUE(back.has_value());
    EXPECT_EQ(*back, std::optional<AugmentTag>(t));
  }
  EXPECT_EQ(names.size(), 38u);
  EXPECT_EQ(parse_tag_name("original"), std::optional<std::optional<AugmentTag>>(std::optional<AugmentTag>()));
  EXPECT_FALSE(parse_tag_name("rot005").has_value());
  EXPECT_FALSE(parse_tag_name("bri100").has_value());
  EXPECT_FALSE(parse_tag_name("").has_value());
}

TEST(ApplyAugmentation, FullTurnIsIdentity) {
  detail::Rng rng(1);
  const Raster img = random_raster(150, 150, 1, rng);
  EXPECT_EQ(apply_augmentation(img, AugmentTag::rotation(360)), img);
}

TEST(ApplyAugmentation, Brightness) {
  const Raster img(150, 150, 1, 100);
  for (auto p : apply_augmentation(img, AugmentTag::brightness(67)).data()) ASSERT_EQ(p, 67);
  for (auto p : apply_augmentation(img, AugmentTag::brightness(133)).data()) ASSERT_EQ(p, 133);
}

TEST(ApplyAugmentation, ConstantRotation) {
  const Raster img(150, 150, 1, 42);
  for (int deg : {90, 10, 130}) {
    for (auto p : apply_augmentation(img, AugmentTag::rotation(deg)).data()) ASSERT_EQ(p, 42);
  }
}

TEST(ApplyAugmentation, CornersTakeFill) {
  detail::Rng rng(2);
  Raster img = random_raster(150, 150, 1, rng);
  img.at(0, 0) = 10, img.at(149, 0) = 20, img.at(0, 149) = 30, img.at(149, 149) = 40;
  const Raster out = apply_augmentation(img, AugmentTag::rotation(40));
  // Corners of the frame map outside the source under a 40 degree turn.
  EXPECT_EQ(out.at(0, 0), 25);
  EXPECT_EQ(out.at(149, 149), 25);
  EXPECT_EQ(out.at(149, 0), 25);
  EXPECT_EQ(out.at(0, 149), 25);
}

TEST(ApplyAugmentation, MatchesRasterOps) {
  detail::Rng rng(3);
  const Raster img = random_raster(150, 150, 1, rng);
  EXPECT_EQ(apply_augmentation(img, AugmentTag::rotation(70)), rotate(img, 70, corner_fill_value(img)));
  EXPECT_EQ(apply_augmentation(img, AugmentTag::brightness(133)), adjust_brightness(img, 1.33));
}

TEST(ApplyAugmentation, RejectsWrongFormat) {
  EXPECT_THROW(apply_augmentation(Raster(149, 150, 1), AugmentTag::rotation(10)), AugmentError);
  EXPECT_THROW(apply_augmentation(Raster(150, 150, 3), AugmentTag::rotation(10)), AugmentError);
}

TEST(Expand, FanOut) {
  detail::Rng rng(4);
  const Raster img = random_raster(150, 150, 1, rng);
  const auto out = expand(img, "c1-007_rev");
  ASSERT_EQ(out.size(), 39u);
  EXPECT_EQ(out.front().image, img);
  EXPECT_FALSE(out.front().provenance.tag.has_value());
  const auto plan = augment_plan();
  std::set<std::string> files;
  for (std::size_t i = 1; i < out.size(); ++i) {
    EXPECT_EQ(out[i].provenance.source_id, "c1-007_rev");
    EXPECT_EQ(out[i].provenance.tag, plan[i - 1]);
  }
  for (const auto& a : out) files.insert(augmented_file_name(a.provenance));
  EXPECT_EQ(files.size(), 39u);
  EXPECT_TRUE(files.count("c1-007_rev_original.pgm"));
  EXPECT_TRUE(files.count("c1-007_rev_rot360.pgm"));
  EXPECT_EQ(out[36].image, img);  // rot360
}

TEST(Expand, CountsScale) {
  detail::Rng rng(5);
  std::size_t total = 0;
  for (int i = 0; i < 3; ++i) total += expand(random_raster(150, 150, 1, rng), "s" + std::to_string(i)).size();
  EXPECT_EQ(total, 3 * kFanOut);
  EXPECT_EQ(967 * kFanOut, 37713u);
}

TEST(Expand, Deterministic) {
  detail::Rng rng(6);
  const Raster img = random_raster(150, 150, 1, rng);
  const auto a = expand(img, "x");
  const auto b = expand(img, "x");
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].image, b[i].image);
}
