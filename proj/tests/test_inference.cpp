#include <gtest/gtest.h>

#include <algorithm>

#include "support/oracles.hpp"
#include "vseg/inference.hpp"
#include "vseg/losses.hpp"

using namespace vseg;

namespace {

VNetConfig micro() {
  VNetConfig c;
  c.levels = 2;
  c.base_channels = 2;
  return c;
}

MultiModalVolume random_volume(Dims d, std::uint64_t seed) {
  Rng rng(seed);
  MultiModalVolume v(d, "r");
  for (auto& m : v.data)
    for (auto& x : m) x = static_cast<float>(rng.normal());
  return v;
}

void fill_box(LabelVolume& l, std::array<std::size_t, 3> lo, std::array<std::size_t, 3> ext, std::uint8_t label) {
  for (std::size_t z = lo[0]; z < lo[0] + ext[0]; ++z)
    for (std::size_t y = lo[1]; y < lo[1] + ext[1]; ++y)
      for (std::size_t x = lo[2]; x < lo[2] + ext[2]; ++x) l.labels[l.dims.index(z, y, x)] = label;
}

std::size_t count_nonzero(const LabelVolume& l) {
  return static_cast<std::size_t>(std::count_if(l.labels.begin(), l.labels.end(), [](auto v) { return v != 0; }));
}

}  // namespace

TEST(PredictVolume, OneTileEqualsForward) {
  const auto p = build<float>(micro(), 1);
  const auto vol = random_volume({8, 8, 8}, 2);
  const auto grid = TileGrid::make(vol.dims, 8, 8);
  ASSERT_EQ(grid.offsets.size(), 1u);
  const auto out = predict_volume(p, vol, grid);
  std::vector<float> x;
  for (const auto& m : vol.data) x.insert(x.end(), m.begin(), m.end());
  Rng rng(0);
  const auto y = forward(p, Tensor<float>({1, 4, 8, 8, 8}, x), Mode::eval, rng);
  ASSERT_EQ(out.probs.size(), y.numel());
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(out.probs[i], y.values()[i], 1e-7);
}

TEST(PredictVolume, ConstantInputUniformField) {
  auto p = build<float>(micro(), 3);
  Rng rng(4);
  for (auto& [name, t] : p.tensors) {
    if (name.ends_with(".w") && name != "head.conv.w") std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0f);
    if (name.ends_with(".b") || name.ends_with(".beta"))
      for (auto& v : t.mutable_values()) v = static_cast<float>(rng.normal());
  }
  MultiModalVolume vol({20, 18, 22});
  for (auto& m : vol.data) std::fill(m.begin(), m.end(), 1.5f);
  const auto out = predict_volume(p, vol, TileGrid::make(vol.dims, 8, 4));
  for (std::size_t c = 0; c < 4; ++c) {
    const auto first = out.probs.begin() + static_cast<std::ptrdiff_t>(c * vol.dims.size());
    const auto [lo, hi] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(vol.dims.size()));
    EXPECT_LT(*hi - *lo, 1e-6f) << c;
  }
}

TEST(TileGrid, CoversBratsSizedVolume) {
  const Dims d{155, 240, 240};
  const auto grid = TileGrid::make(d, 64, 32);
  const auto cov = grid.coverage(d);
  EXPECT_GE(*std::min_element(cov.begin(), cov.end()), 1u);
  for (const auto& o : grid.offsets) {
    EXPECT_LE(o[0] + 64, d.d);
    EXPECT_LE(o[1] + 64, d.h);
  }
  EXPECT_THROW(TileGrid::make(d, 32, 64), ConfigError);
}

TEST(PredictVolume, TileOrderInvariant) {
  const auto p = build<float>(micro(), 5);
  const auto vol = random_volume({12, 10, 14}, 6);
  auto grid = TileGrid::make(vol.dims, 8, 4);
  ASSERT_GT(grid.offsets.size(), 4u);
  for (Mode mode : {Mode::eval, Mode::eval_with_dropout}) {
    PredictOptions opts;
    opts.mode = mode;
    opts.seed = 99;
    const auto a = predict_volume(p, vol, grid, opts);
    auto shuffled = grid;
    std::reverse(shuffled.offsets.begin(), shuffled.offsets.end());
    std::rotate(shuffled.offsets.begin(), shuffled.offsets.begin() + 3, shuffled.offsets.end());
    const auto b = predict_volume(p, vol, shuffled, opts);
    EXPECT_EQ(a.probs, b.probs);
  }
}

TEST(DecodeLabels, ArgmaxAndTies) {
  const Dims d{1, 1, 3};
  // channel-major: voxel0 (0.1,0.2,0.3,0.4), voxel1 uniform, voxel2 channel 2 max
  const std::vector<float> probs{0.1f, 0.25f, 0.1f, 0.2f, 0.25f, 0.1f, 0.3f, 0.25f, 0.7f, 0.4f, 0.25f, 0.1f};
  const auto l = decode_labels(probs, d);
  EXPECT_EQ(l.labels, (std::vector<std::uint8_t>{4, 0, 2}));
}

TEST(DecodeLabels, InvertsOneHot) {
  Rng rng(7);
  LabelVolume l(Dims{3, 4, 5});
  for (auto& v : l.labels) v = kChannelLabels[rng.below(4)];
  const auto oh = one_hot<double>(l.labels, {3, 4, 5});
  EXPECT_EQ(decode_labels(oh.values(), l.dims).labels, l.labels);
}

TEST(KeepTopComponents, SingleComponentUnchanged) {
  LabelVolume l(Dims{8, 8, 8});
  fill_box(l, {1, 1, 1}, {3, 3, 3}, 2);
  l.labels[l.dims.index(2, 2, 2)] = 4;
  EXPECT_EQ(keep_top_components(l, {}).labels, l.labels);
}

TEST(KeepTopComponents, EmptyIsNoop) {
  LabelVolume l(Dims{4, 4, 4});
  EXPECT_EQ(keep_top_components(l, {}).labels, l.labels);
}

TEST(KeepTopComponents, RatioRuleAgainstFloodFill) {
  for (std::size_t second : {200u, 50u}) {
    LabelVolume l(Dims{16, 16, 16});
    fill_box(l, {0, 0, 0}, {10, 10, 10}, 2);
    fill_box(l, {2, 2, 2}, {3, 3, 3}, 1);
    if (second == 200)
      fill_box(l, {11, 0, 0}, {5, 5, 8}, 4);
    else
      fill_box(l, {11, 0, 0}, {5, 5, 2}, 2);
    fill_box(l, {12, 12, 12}, {1, 1, 1}, 2);  // a third, tiny component
    std::vector<std::uint8_t> wt(l.labels.size());
    for (std::size_t i = 0; i < wt.size(); ++i) wt[i] = l.labels[i] != 0;
    auto sizes = oracle::component_sizes(wt, 16, 16, 16, 26);
    std::sort(sizes.rbegin(), sizes.rend());
    ASSERT_EQ(sizes, (std::vector<std::size_t>{1000, second, 1}));

    const auto out = keep_top_components(l, {});
    std::vector<std::uint8_t> owt(out.labels.size());
    for (std::size_t i = 0; i < owt.size(); ++i) owt[i] = out.labels[i] != 0;
    auto kept = oracle::component_sizes(owt, 16, 16, 16, 26);
    std::sort(kept.rbegin(), kept.rend());
    if (second == 200)
      EXPECT_EQ(kept, (std::vector<std::size_t>{1000, 200}));
    else
      EXPECT_EQ(kept, (std::vector<std::size_t>{1000}));
    // surviving voxels keep their labels
    EXPECT_EQ(out.labels[l.dims.index(3, 3, 3)], 1);
  }
}

TEST(KeepTopComponents, NeverAddsAndAtMostTwoComponents) {
  Rng rng(8);
  for (int conn : {6, 18, 26})
    for (int trial = 0; trial < 30; ++trial) {
      LabelVolume l(Dims{7, 7, 7});
      for (auto& v : l.labels) v = rng.bernoulli(0.3) ? kChannelLabels[1 + rng.below(3)] : 0;
      ComponentFilterConfig cfg;
      cfg.connectivity = conn;
      cfg.keep_ratio_threshold = 0.01;
      const auto out = keep_top_components(l, cfg);
      std::vector<std::uint8_t> owt(out.labels.size());
      for (std::size_t i = 0; i < owt.size(); ++i) {
        owt[i] = out.labels[i] != 0;
        if (out.labels[i] != 0) {
          ASSERT_EQ(out.labels[i], l.labels[i]);
        }
      }
      EXPECT_LE(oracle::component_sizes(owt, 7, 7, 7, conn).size(), 2u);
      EXPECT_LE(count_nonzero(out), count_nonzero(l));
    }
}

TEST(ComponentFilterConfig, Validation) {
  ComponentFilterConfig c;
  c.connectivity = 8;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.keep_ratio_threshold = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.keep_ratio_threshold = 1.0;
  EXPECT_NO_THROW(c.validate());
}
