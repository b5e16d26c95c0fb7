#include <gtest/gtest.h>

#include "vseg/phantom.hpp"
#include "vseg/sampling.hpp"

using namespace vseg;

namespace {

struct Fixture {
  MultiModalVolume vol;
  LabelVolume labels;
};

Fixture brain_cube(Dims d) {
  Fixture f{MultiModalVolume(d, "cube"), LabelVolume(d, "cube")};
  for (auto& m : f.vol.data) std::fill(m.begin(), m.end(), 1.0f);
  return f;
}

std::vector<float> random_image(const Dims& d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(kModalities * d.size());
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

}  // namespace

TEST(SamplePatch, SingleTumorVoxelIsTheCenter) {
  auto f = brain_cube({12, 12, 12});
  const std::size_t at = f.labels.dims.index(3, 7, 9);
  f.labels.labels[at] = 4;
  f.vol.data[0][at] = 42.0f;
  const auto idx = SubjectIndex::build(f.vol, f.labels);
  PatchSpec spec{8, 1, 1.0};
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto p = sample_patch(f.vol, f.labels, idx, spec, rng);
    EXPECT_TRUE(p.tumor_centered);
    EXPECT_EQ(p.center, (Voxel{3, 7, 9}));
    // center sits at offset size/2 inside the window
    EXPECT_EQ(p.labels[(4 * 8 + 4) * 8 + 4], 4);
    EXPECT_EQ(p.image[(4 * 8 + 4) * 8 + 4], 42.0f);
  }
}

TEST(SamplePatch, OutOfRangeExtentIsZeroPadded) {
  auto f = brain_cube({6, 6, 6});
  f.labels.labels[0] = 1;
  const auto idx = SubjectIndex::build(f.vol, f.labels);
  Rng rng(2);
  const auto p = sample_patch(f.vol, f.labels, idx, PatchSpec{8, 1, 1.0}, rng);
  EXPECT_EQ(p.center, (Voxel{0, 0, 0}));
  EXPECT_EQ(p.image[0], 0.0f);
  EXPECT_EQ(p.image[(4 * 8 + 4) * 8 + 4], 1.0f);
  EXPECT_EQ(p.image[(7 * 8 + 7) * 8 + 7], 1.0f);
}

TEST(SamplePatch, TumorFractionOnPhantom) {
  PhantomConfig cfg;
  cfg.dims = {48, 48, 48};
  cfg.wt_radius_min = 5;
  cfg.wt_radius_max = 7;
  const auto s = generate_subject(cfg, 11);
  const auto idx = SubjectIndex::build(s.image, s.labels);
  ASSERT_FALSE(idx.tumor.empty());
  PatchSpec spec{8, 1, 0.5};
  Rng rng(3);
  int tumor = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto p = sample_patch(s.image, s.labels, idx, spec, rng);
    const std::uint8_t center = s.labels.labels[s.labels.dims.index(p.center.z, p.center.y, p.center.x)];
    if (p.tumor_centered) {
      ++tumor;
      EXPECT_NE(center, 0);
    } else {
      EXPECT_EQ(center, 0);
      bool brain = false;
      for (const auto& m : s.image.data) brain = brain || m[s.image.dims.index(p.center.z, p.center.y, p.center.x)] != 0.0f;
      EXPECT_TRUE(brain);
    }
  }
  EXPECT_GE(tumor / 10000.0, 0.48);
  EXPECT_LE(tumor / 10000.0, 0.52);
}

TEST(SamplePatch, AllHealthyFallsBack) {
  auto f = brain_cube({8, 8, 8});
  const auto idx = SubjectIndex::build(f.vol, f.labels);
  Rng rng(4);
  const auto p = sample_patch(f.vol, f.labels, idx, PatchSpec{4, 1, 1.0}, rng);
  EXPECT_TRUE(p.fell_back);
  EXPECT_FALSE(p.tumor_centered);
}

TEST(Augment, CollapsedPolicyIsIdentity) {
  const Dims d{5, 6, 7};
  const auto original = random_image(d, 5);
  auto img = original;
  Rng rng(6);
  const auto rec = augment(img, d, AugmentationPolicy::identity(), rng);
  EXPECT_EQ(img, original);
  EXPECT_EQ(rec.flip, (std::array<bool, 3>{false, false, false}));
}

TEST(Augment, RecordedFlipsAreInvolution) {
  const Dims d{4, 5, 6};
  const auto original = random_image(d, 7);
  AugmentationPolicy pol = AugmentationPolicy::identity();
  pol.flip_prob_per_axis = 0.5;
  Rng rng(8);
  for (int i = 0; i < 16; ++i) {
    auto img = original;
    const auto rec = augment(img, d, pol, rng);
    apply_flips(img, d, rec.flip);
    EXPECT_EQ(img, original);
  }
}

TEST(Augment, ScaleMeanAndRanges) {
  const Dims d{2, 2, 2};
  const AugmentationPolicy pol;
  Rng rng(9);
  double sum = 0;
  std::size_t n = 0;
  for (int i = 0; i < 10000; ++i) {
    auto img = random_image(d, static_cast<std::uint64_t>(i));
    const auto rec = augment(img, d, pol, rng);
    sum += rec.scale[0];
    ++n;
    for (std::size_t m = 0; m < kModalities; ++m) {
      ASSERT_GE(rec.scale[m], 0.9);
      ASSERT_LE(rec.scale[m], 1.1);
    }
  }
  EXPECT_GE(sum / static_cast<double>(n), 0.995);
  EXPECT_LE(sum / static_cast<double>(n), 1.005);
}

TEST(Augment, ShiftScaledByModalityStd) {
  const Dims d{3, 3, 3};
  Rng rng(10);
  for (int i = 0; i < 200; ++i) {
    auto img = random_image(d, 100 + static_cast<std::uint64_t>(i));
    for (std::size_t k = 27; k < 54; ++k) img[k] *= 10.0f;  // modality 1 has ~10x the spread
    const auto rec = augment(img, d, AugmentationPolicy{}, rng);
    EXPECT_LE(std::abs(rec.shift[0]), 0.1 * 2.0);
    EXPECT_LE(std::abs(rec.shift[1]), 0.1 * 20.0);
  }
}

TEST(Augment, PolicyValidation) {
  AugmentationPolicy p;
  p.scale_min = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.flip_prob_per_axis = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
  EXPECT_NO_THROW(AugmentationPolicy{}.validate());
}

TEST(InvertGeometric, NoFlipsIsIdentity) {
  const Dims d{3, 4, 5};
  std::vector<std::uint8_t> m(d.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<std::uint8_t>(i % 3);
  auto c = m;
  invert_geometric(c, d, TransformRecord{});
  EXPECT_EQ(c, m);
}

TEST(InvertGeometric, AllEightFlipCombinationsRoundTrip) {
  const Dims d{4, 5, 6};
  Rng rng(12);
  std::vector<std::uint8_t> mask(d.size());
  for (auto& v : mask) v = static_cast<std::uint8_t>(rng.below(2));
  for (int bits = 0; bits < 8; ++bits) {
    TransformRecord rec;
    rec.flip = {(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0};
    auto m = mask;
    apply_flips(m, d, rec.flip);
    if (bits != 0) {
      EXPECT_NE(m, mask);
    }
    // direct mirror oracle
    for (std::size_t z = 0; z < d.d; ++z)
      for (std::size_t y = 0; y < d.h; ++y)
        for (std::size_t x = 0; x < d.w; ++x) {
          const std::size_t sz = rec.flip[0] ? d.d - 1 - z : z, sy = rec.flip[1] ? d.h - 1 - y : y,
                            sx = rec.flip[2] ? d.w - 1 - x : x;
          ASSERT_EQ(m[d.index(z, y, x)], mask[d.index(sz, sy, sx)]);
        }
    invert_geometric(m, d, rec);
    EXPECT_EQ(m, mask) << bits;
  }
}
