#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <vector>

#include "vseg/errors.hpp"
#include "vseg/rng.hpp"
#include "vseg/volumes.hpp"

namespace vseg {

struct PatchSpec {
  std::size_t size = 64;
  std::size_t batch = 8;
  double tumor_center_prob = 0.5;
};

struct AugmentationPolicy {
  double flip_prob_per_axis = 0.5;
  double intensity_shift_range = 0.1;  // in units of per-modality std
  double scale_min = 0.9;
  double scale_max = 1.1;
  double gaussian_noise_std = 0.0;

  void validate() const {
    if (!(flip_prob_per_axis >= 0.0 && flip_prob_per_axis <= 1.0)) throw ConfigError("augmentation.flip_prob must lie in [0, 1]");
    if (intensity_shift_range < 0.0) throw ConfigError("augmentation.shift_range must be non-negative");
    if (!(scale_min > 0.0 && scale_min <= scale_max)) throw ConfigError("augmentation.scale_range must be positive and ordered");
    if (gaussian_noise_std < 0.0) throw ConfigError("augmentation.noise_std must be non-negative");
  }

  /// The policy that leaves every input untouched.
  static AugmentationPolicy identity() { return {0.0, 0.0, 1.0, 1.0, 0.0}; }
};

struct Voxel {
  std::size_t z = 0, y = 0, x = 0;
  bool operator==(const Voxel&) const = default;
};

/// Candidate patch centers of one subject.
struct SubjectIndex {
  std::vector<std::uint32_t> tumor;    // label in {1, 2, 4}
  std::vector<std::uint32_t> healthy;  // label 0 inside the brain (non-zero image)

  static SubjectIndex build(const MultiModalVolume& vol, const LabelVolume& labels) {
    if (!(vol.dims == labels.dims)) throw DimensionMismatch("image and label dims differ");
    SubjectIndex idx;
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
      if (labels.labels[i] != 0) {
        idx.tumor.push_back(static_cast<std::uint32_t>(i));
        continue;
      }
      bool brain = false;
      for (const auto& m : vol.data) brain = brain || m[i] != 0.0f;
      if (brain) idx.healthy.push_back(static_cast<std::uint32_t>(i));
    }
    return idx;
  }
};

struct Patch {
  std::size_t size = 0;
  std::vector<float> image;           // 4 x size^3
  std::vector<std::uint8_t> labels;   // size^3, values in {0,1,2,4}
  Voxel center;
  bool tumor_centered = false;
  bool fell_back = false;  // tumor branch drawn but the subject has no tumor
};

inline Voxel voxel_of(const Dims& dims, std::size_t flat) {
  return {flat / (dims.h * dims.w), (flat / dims.w) % dims.h, flat % dims.w};
}

/// Copies the size^3 window starting at `start` (may be negative), zero
/// padding outside the volume.
inline void extract_window(const MultiModalVolume& vol, const LabelVolume* labels, std::array<std::ptrdiff_t, 3> start,
                           std::size_t size, std::vector<float>& image, std::vector<std::uint8_t>* out_labels) {
  const std::size_t n = size * size * size;
  image.assign(kModalities * n, 0.0f);
  if (out_labels) out_labels->assign(n, 0);
  const Dims& d = vol.dims;
  for (std::size_t z = 0; z < size; ++z) {
    const auto sz = start[0] + static_cast<std::ptrdiff_t>(z);
    if (sz < 0 || sz >= static_cast<std::ptrdiff_t>(d.d)) continue;
    for (std::size_t y = 0; y < size; ++y) {
      const auto sy = start[1] + static_cast<std::ptrdiff_t>(y);
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(d.h)) continue;
      for (std::size_t x = 0; x < size; ++x) {
        const auto sx = start[2] + static_cast<std::ptrdiff_t>(x);
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(d.w)) continue;
        const std::size_t src = d.index(static_cast<std::size_t>(sz), static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
        const std::size_t dst = (z * size + y) * size + x;
        for (std::size_t m = 0; m < kModalities; ++m) image[m * n + dst] = vol.data[m][src];
        if (out_labels) (*out_labels)[dst] = labels->labels[src];
      }
    }
  }
}

/// Draws one training patch whose center is a tumor voxel with probability
/// `tumor_center_prob` and a healthy brain voxel otherwise. The window
/// spans [center - size/2, center - size/2 + size) on each axis.
inline Patch sample_patch(const MultiModalVolume& vol, const LabelVolume& labels, const SubjectIndex& index,
                          const PatchSpec& spec, Rng& rng) {
  Patch patch;
  patch.size = spec.size;
  const bool want_tumor = rng.bernoulli(spec.tumor_center_prob);
  const std::vector<std::uint32_t>* pool = nullptr;
  if (want_tumor && !index.tumor.empty()) {
    pool = &index.tumor;
    patch.tumor_centered = true;
  } else {
    if (want_tumor) {
      patch.fell_back = true;
      std::clog << "warning: NoTumorVoxels in subject '" << labels.subject_id << "', using a healthy center\n";
    }
    pool = &index.healthy;
  }
  std::size_t flat = 0;
  if (!pool->empty()) {
    flat = (*pool)[rng.below(pool->size())];
  } else {
    flat = rng.below(vol.dims.size());
  }
  patch.center = voxel_of(vol.dims, flat);
  const auto half = static_cast<std::ptrdiff_t>(spec.size / 2);
  extract_window(vol, &labels,
                 {static_cast<std::ptrdiff_t>(patch.center.z) - half, static_cast<std::ptrdiff_t>(patch.center.y) - half,
                  static_cast<std::ptrdiff_t>(patch.center.x) - half},
                 spec.size, patch.image, &patch.labels);
  return patch;
}

/// Everything `augment` drew; the flips alone determine the geometry.
struct TransformRecord {
  std::array<bool, 3> flip{false, false, false};  // axes d, h, w
  std::array<double, kModalities> scale{1.0, 1.0, 1.0, 1.0};
  std::array<double, kModalities> shift{0.0, 0.0, 0.0, 0.0};
  double noise_std = 0.0;
};

/// Mirrors every channel of a C x dims buffer along the flagged axes.
template <class V>
void apply_flips(std::vector<V>& data, const Dims& dims, const std::array<bool, 3>& flip) {
  if (!flip[0] && !flip[1] && !flip[2]) return;
  const std::size_t n = dims.size(), channels = data.size() / n;
  std::vector<V> tmp(n);
  for (std::size_t c = 0; c < channels; ++c) {
    V* ch = data.data() + c * n;
    for (std::size_t z = 0; z < dims.d; ++z)
      for (std::size_t y = 0; y < dims.h; ++y)
        for (std::size_t x = 0; x < dims.w; ++x) {
          const std::size_t sz = flip[0] ? dims.d - 1 - z : z, sy = flip[1] ? dims.h - 1 - y : y,
                            sx = flip[2] ? dims.w - 1 - x : x;
          tmp[dims.index(z, y, x)] = ch[dims.index(sz, sy, sx)];
        }
    std::copy(tmp.begin(), tmp.end(), ch);
  }
}

/// Random flips, then per-modality x -> s*x + delta with
/// s ~ U(scale_min, scale_max) and delta ~ U(-r, r) * std(modality), then
/// additive Gaussian noise. `image` is 4 x dims and is modified in place.
inline TransformRecord augment(std::vector<float>& image, const Dims& dims, const AugmentationPolicy& policy, Rng& rng) {
  TransformRecord rec;
  const std::size_t n = dims.size();
  if (image.size() != kModalities * n) throw ShapeError("augment: image buffer does not match 4 x dims");
  for (auto& f : rec.flip) f = rng.bernoulli(policy.flip_prob_per_axis);
  apply_flips(image, dims, rec.flip);
  for (std::size_t m = 0; m < kModalities; ++m) {
    float* ch = image.data() + m * n;
    double sum = 0, sq = 0;
    for (std::size_t i = 0; i < n; ++i) sum += ch[i];
    const double mean = sum / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) sq += (ch[i] - mean) * (ch[i] - mean);
    const double sd = std::sqrt(sq / static_cast<double>(n));
    rec.scale[m] = rng.uniform(policy.scale_min, policy.scale_max);
    rec.shift[m] = rng.uniform(-policy.intensity_shift_range, policy.intensity_shift_range) * sd;
    const auto s = static_cast<float>(rec.scale[m]), d = static_cast<float>(rec.shift[m]);
    if (s != 1.0f || d != 0.0f)
      for (std::size_t i = 0; i < n; ++i) ch[i] = s * ch[i] + d;
  }
  rec.noise_std = policy.gaussian_noise_std;
  if (rec.noise_std > 0.0) {
    for (auto& v : image) v += static_cast<float>(rec.noise_std * rng.normal());
  }
  return rec;
}

/// Maps a prediction made on an augmented input back to the original
/// orientation. Intensity components do not act on label space.
template <class V>
void invert_geometric(std::vector<V>& prediction, const Dims& dims, const TransformRecord& rec) {
  apply_flips(prediction, dims, rec.flip);
}

}  // namespace vseg
