#include <random>

#include <gtest/gtest.h>

#include "gridtrack/pose.hpp"

using namespace gridtrack;

namespace {

PoseDetection with_ankles(Keypoint left, Keypoint right) {
  PoseDetection d;
  d[Coco::left_ankle] = left;
  d[Coco::right_ankle] = right;
  return d;
}

PoseDetection random_detection(std::mt19937_64& rng, int tag) {
  std::uniform_real_distribution<float> px(-10.0F, 700.0F), conf(0.0F, 1.0F);
  PoseDetection d;
  d.person_tag = tag;
  for (auto& k : d.keypoints) k = {px(rng), px(rng), conf(rng)};
  return d;
}

}  // namespace

TEST(Anchor, LeftAnkleFirst) {
  const auto a = anchor_pixel_from_pose(with_ankles({320, 400, 0.9F}, {300, 398, 0.9F}), 0.5F);
  ASSERT_TRUE(a);
  EXPECT_EQ(*a, (PixelPoint{320, 400}));
}

TEST(Anchor, FallsBackToRightAnkle) {
  const auto a = anchor_pixel_from_pose(with_ankles({320, 400, 0.1F}, {300, 398, 0.8F}), 0.5F);
  ASSERT_TRUE(a);
  EXPECT_EQ(*a, (PixelPoint{300, 398}));
}

TEST(Anchor, MidpointWhenBothClearHalfThreshold) {
  const auto a = anchor_pixel_from_pose(with_ankles({320, 400, 0.3F}, {300, 390, 0.3F}), 0.5F);
  ASSERT_TRUE(a);
  EXPECT_EQ(*a, (PixelPoint{310, 395}));
}

TEST(Anchor, NoAnchorBelowThresholds) {
  EXPECT_FALSE(anchor_pixel_from_pose(with_ankles({320, 400, 0.1F}, {300, 398, 0.1F}), 0.5F));
  EXPECT_FALSE(anchor_pixel_from_pose(with_ankles({320, 400, 0.3F}, {300, 398, 0.2F}), 0.5F));
}

// The returned pixel always comes from keypoints that clear the rule that selected them.
TEST(Anchor, NeverUsesLowConfidenceSource) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> thr(0.0F, 1.0F);
  for (int i = 0; i < 5000; ++i) {
    const auto d = random_detection(rng, 0);
    const float t = thr(rng);
    const auto a = anchor_pixel_from_pose(d, t);
    if (!a) continue;
    const auto& l = d[Coco::left_ankle];
    const auto& r = d[Coco::right_ankle];
    if (*a == PixelPoint{l.x, l.y} && l.conf >= t) continue;
    if (*a == PixelPoint{r.x, r.y} && r.conf >= t) continue;
    EXPECT_GE(l.conf, t / 2);
    EXPECT_GE(r.conf, t / 2);
  }
}

TEST(BBoxAnchor, BottomCenter) {
  EXPECT_EQ(bbox_to_anchor_pixel(BBox(0, 0, 10, 10)), (PixelPoint{5, 10}));
  EXPECT_EQ(bbox_to_anchor_pixel(BBox(100, 50, 140, 250)), (PixelPoint{120, 250}));
  EXPECT_THROW(BBox(10, 0, 10, 5), ConfigError);
  EXPECT_THROW(BBox(0, 5, 10, 5), ConfigError);
}

TEST(Kp17, EmptyPayload) {
  const auto bytes = encode_kp17({});
  ASSERT_EQ(bytes.size(), 2U);
  EXPECT_EQ(bytes[0], std::byte{0});
  EXPECT_EQ(bytes[1], std::byte{0});
  EXPECT_TRUE(decode_kp17(bytes).empty());
}

TEST(Kp17, SingleDetectionLayout) {
  PoseDetection d;
  for (auto& k : d.keypoints) k = {1.5F, 2.5F, 1.0F};
  const std::vector<PoseDetection> in{d};
  const auto bytes = encode_kp17(in);
  ASSERT_EQ(bytes.size(), 206U);
  EXPECT_EQ(bytes[0], std::byte{1});
  EXPECT_EQ(bytes[1], std::byte{0});
  // 1.5f = 0x3FC00000, little-endian
  EXPECT_EQ(bytes[2], std::byte{0x00});
  EXPECT_EQ(bytes[4], std::byte{0xC0});
  EXPECT_EQ(bytes[5], std::byte{0x3F});
  EXPECT_EQ(decode_kp17(bytes), in);
}

TEST(Kp17, FuzzRoundTrip) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> count(0, 6);
  for (int i = 0; i < 10000; ++i) {
    std::vector<PoseDetection> in;
    const int n = count(rng);
    for (int t = 0; t < n; ++t) in.push_back(random_detection(rng, t));
    const auto bytes = encode_kp17(in);
    ASSERT_EQ(bytes.size(), kp17_payload_size(in.size()));
    ASSERT_EQ(decode_kp17(bytes), in);
    ASSERT_EQ(encode_kp17(decode_kp17(bytes)), bytes);
  }
}

TEST(Kp17, RejectsBadLengths) {
  std::mt19937_64 rng(5);
  std::vector<PoseDetection> in{random_detection(rng, 0), random_detection(rng, 1)};
  auto bytes = encode_kp17(in);
  auto shorter = bytes;
  shorter.pop_back();
  EXPECT_THROW(decode_kp17(shorter), MalformedPayloadError);
  auto longer = bytes;
  longer.push_back(std::byte{0});
  EXPECT_THROW(decode_kp17(longer), MalformedPayloadError);
  EXPECT_THROW(decode_kp17(std::vector<std::byte>{std::byte{1}}), MalformedPayloadError);
}
