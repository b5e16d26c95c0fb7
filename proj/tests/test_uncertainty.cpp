#include <gtest/gtest.h>

#include <algorithm>

#include "vseg/uncertainty.hpp"

using namespace vseg;

namespace {

// One voxel, `in` samples labelled `yes`, the rest `no`.
SampleStack single_voxel(std::size_t in, std::size_t out, std::uint8_t yes = 2, std::uint8_t no = 0) {
  SampleStack s{Dims{1, 1, 1}, {}, std::vector<double>(4, 0.0)};
  for (std::size_t b = 0; b < in; ++b) s.label_samples.push_back({yes});
  for (std::size_t b = 0; b < out; ++b) s.label_samples.push_back({no});
  return s;
}

VNetConfig small_model() {
  VNetConfig c;
  c.levels = 2;
  c.base_channels = 4;
  return c;
}

MultiModalVolume random_volume(Dims d, std::uint64_t seed) {
  Rng rng(seed);
  MultiModalVolume v(d, "r");
  for (auto& m : v.data)
    for (auto& x : m) x = static_cast<float>(rng.normal());
  return v;
}

}  // namespace

TEST(VarianceMap, HandExamples) {
  EXPECT_EQ(variance_map(single_voxel(50, 0), Region::wt).values[0], 0.0f);
  EXPECT_NEAR(variance_map(single_voxel(25, 25), Region::wt).values[0], 100.0, 1e-9);
  // mean 0.2, var 0.2 * 0.8 = 0.16
  EXPECT_NEAR(variance_map(single_voxel(10, 40), Region::wt).values[0], 64.0, 1e-4);
}

TEST(VarianceMap, NestingRespected) {
  // every sample is tumour, but TC membership splits 1 vs 2
  auto s = single_voxel(25, 25, 1, 2);
  EXPECT_EQ(variance_map(s, Region::wt).values[0], 0.0f);
  EXPECT_NEAR(variance_map(s, Region::tc).values[0], 100.0, 1e-9);
  EXPECT_EQ(variance_map(s, Region::et).values[0], 0.0f);
}

TEST(VarianceMap, PermutationInvariant) {
  Rng rng(1);
  SampleStack s{Dims{2, 3, 4}, {}, std::vector<double>(4 * 24, 0.0)};
  for (int b = 0; b < 9; ++b) {
    std::vector<std::uint8_t> g(24);
    for (auto& v : g) v = kChannelLabels[rng.below(4)];
    s.label_samples.push_back(g);
  }
  auto t = s;
  std::reverse(t.label_samples.begin(), t.label_samples.end());
  std::rotate(t.label_samples.begin(), t.label_samples.begin() + 4, t.label_samples.end());
  for (Region r : kRegions) EXPECT_EQ(variance_map(s, r).values, variance_map(t, r).values);
  EXPECT_EQ(entropy_map(s).values, entropy_map(t).values);
  for (Region r : kRegions)
    for (float v : variance_map(s, r).values) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 100.0f);
    }
}

TEST(EntropyMap, HandExamples) {
  EXPECT_EQ(entropy_map(single_voxel(7, 0)).values[0], 0.0f);
  EXPECT_NEAR(entropy_map(single_voxel(25, 25, 4, 1)).values[0], 50.0, 1e-9);
  SampleStack four{Dims{1, 1, 1}, {}, std::vector<double>(4, 0.0)};
  for (int rep = 0; rep < 5; ++rep)
    for (std::uint8_t l : kChannelLabels) four.label_samples.push_back({l});
  EXPECT_NEAR(entropy_map(four).values[0], 100.0, 1e-4);
}

TEST(SampleStack, NeedsTwoSamples) {
  EXPECT_THROW(variance_map(single_voxel(1, 0), Region::wt), ConfigError);
}

TEST(MeanPrediction, AveragesProbabilities) {
  SampleStack s{Dims{1, 1, 1}, {}, {}};
  s.add(ProbabilityVolume{Dims{1, 1, 1}, {0.6f, 0.4f, 0.0f, 0.0f}});
  s.add(ProbabilityVolume{Dims{1, 1, 1}, {0.2f, 0.8f, 0.0f, 0.0f}});
  EXPECT_EQ(s.label_samples[0][0], 0);
  EXPECT_EQ(s.label_samples[1][0], 1);
  EXPECT_EQ(mean_prediction(s).labels[0], 1);
}

TEST(MeanPrediction, UnanimousSamples) {
  SampleStack s{Dims{1, 1, 1}, {}, {}};
  for (int b = 0; b < 3; ++b) s.add(ProbabilityVolume{Dims{1, 1, 1}, {0.1f, 0.1f, 0.1f, 0.7f}});
  EXPECT_EQ(mean_prediction(s).labels[0], 4);
}

TEST(Ttd, ZeroRateMatchesDeterministicPrediction) {
  const auto p = build<float>(small_model(), 2);
  const auto vol = random_volume({8, 8, 16}, 3);
  const auto grid = TileGrid::make(vol.dims, 8, 8);
  const auto det = decode_labels(predict_volume(p, vol, grid));
  const auto s = ttd_sample(p, vol, 4, 0.0, grid, 5);
  ASSERT_EQ(s.samples(), 4u);
  for (const auto& l : s.label_samples) EXPECT_EQ(l, det.labels);
  EXPECT_EQ(mean_prediction(s).labels, det.labels);
  for (Region r : kRegions)
    for (float v : variance_map(s, r).values) ASSERT_EQ(v, 0.0f);
  for (float v : entropy_map(s).values) ASSERT_EQ(v, 0.0f);
}

TEST(Ttd, SameSeedIdenticalStacks) {
  const auto p = build<float>(small_model(), 2);
  const auto vol = random_volume({8, 8, 8}, 4);
  const auto grid = TileGrid::make(vol.dims, 8, 8);
  const auto a = ttd_sample(p, vol, 3, 0.5, grid, 11);
  const auto b = ttd_sample(p, vol, 3, 0.5, grid, 11, 2);
  EXPECT_EQ(a.label_samples, b.label_samples);
  EXPECT_EQ(a.prob_sums, b.prob_sums);
  const auto c = ttd_sample(p, vol, 3, 0.5, grid, 12);
  EXPECT_NE(a.prob_sums, c.prob_sums);
}

TEST(Ttd, RequiresDropoutSitesAndTwoSamples) {
  auto cfg = small_model();
  cfg.dropout_sites = DropoutSites::none;
  const auto p = build<float>(cfg, 1);
  const auto vol = random_volume({8, 8, 8}, 5);
  const auto grid = TileGrid::make(vol.dims, 8, 8);
  EXPECT_THROW(ttd_sample(p, vol, 3, 0.5, grid, 1), ConfigError);
  EXPECT_THROW(ttd_sample(build<float>(small_model(), 1), vol, 1, 0.5, grid, 1), ConfigError);
}

TEST(Tta, IdentityPolicyMatchesDeterministic) {
  const auto p = build<float>(small_model(), 6);
  const auto vol = random_volume({8, 8, 8}, 7);
  const auto grid = TileGrid::make(vol.dims, 8, 8);
  const auto det = decode_labels(predict_volume(p, vol, grid));
  const auto s = tta_sample(p, vol, 3, AugmentationPolicy::identity(), grid, 8);
  for (const auto& l : s.label_samples) EXPECT_EQ(l, det.labels);
}

TEST(Tta, NoiseMakesSamplesDifferAndFlipsAreUndone) {
  const auto p = build<float>(small_model(), 6);
  const auto vol = random_volume({8, 8, 8}, 7);
  const auto grid = TileGrid::make(vol.dims, 8, 8);
  auto noisy = AugmentationPolicy::identity();
  noisy.gaussian_noise_std = 0.5;
  const auto s = tta_sample(p, vol, 4, noisy, grid, 9);
  EXPECT_NE(s.label_samples[0], s.label_samples[1]);

  // forced flips on every axis, undone before stacking
  auto flips = AugmentationPolicy::identity();
  flips.flip_prob_per_axis = 1.0;
  const auto f = tta_sample(p, vol, 2, flips, grid, 10);
  auto manual = vol;
  for (auto& m : manual.data) apply_flips(m, vol.dims, {true, true, true});
  auto expect = predict_volume(p, manual, grid);
  apply_flips(expect.probs, vol.dims, {true, true, true});
  std::vector<double> twice(expect.probs.begin(), expect.probs.end());
  for (auto& v : twice) v *= 2;
  for (std::size_t i = 0; i < twice.size(); ++i) EXPECT_NEAR(f.prob_sums[i], twice[i], 1e-6);
}
