#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vseg/errors.hpp"

namespace vseg {

/// Grid extent, slowest axis first.
struct Dims {
  std::size_t d = 0, h = 0, w = 0;

  std::size_t size() const { return d * h * w; }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const { return (z * h + y) * w + x; }
  bool operator==(const Dims&) const = default;
};

inline std::string to_string(const Dims& dims) {
  return std::to_string(dims.d) + "x" + std::to_string(dims.h) + "x" + std::to_string(dims.w);
}

/// Voxel size in mm along (d, h, w).
using Spacing = std::array<double, 3>;

inline constexpr std::size_t kModalities = 4;
inline constexpr std::array<const char*, kModalities> kModalityNames = {"T1", "T1ce", "T2", "FLAIR"};

/// Channel index (0..3) of the network output for each label value.
inline constexpr std::array<std::uint8_t, 4> kChannelLabels = {0, 1, 2, 4};

inline bool is_valid_label(std::uint8_t v) { return v == 0 || v == 1 || v == 2 || v == 4; }

inline int label_to_channel(std::uint8_t label) {
  switch (label) {
    case 0: return 0;
    case 1: return 1;
    case 2: return 2;
    case 4: return 3;
    default: return -1;
  }
}

inline void require_valid_spacing(const Spacing& s) {
  for (double v : s)
    if (!(v > 0.0) || !std::isfinite(v)) throw FormatError("voxel spacing must be strictly positive");
}

/// Four co-registered scalar grids ordered [T1, T1ce, T2, FLAIR].
struct MultiModalVolume {
  Dims dims;
  std::array<std::vector<float>, kModalities> data;
  Spacing spacing{1.0, 1.0, 1.0};
  std::string subject_id;

  MultiModalVolume() = default;
  MultiModalVolume(Dims dims_, std::string id = {}) : dims(dims_), subject_id(std::move(id)) {
    for (auto& m : data) m.assign(dims.size(), 0.0f);
  }

  void validate() const {
    for (const auto& m : data) {
      if (m.size() != dims.size()) {
        throw DimensionMismatch("modality grid has " + std::to_string(m.size()) + " voxels, expected " +
                                std::to_string(dims.size()) + " (" + to_string(dims) + ")");
      }
    }
    require_valid_spacing(spacing);
  }
};

/// Label grid over {0, 1, 2, 4}.
struct LabelVolume {
  Dims dims;
  std::vector<std::uint8_t> labels;
  Spacing spacing{1.0, 1.0, 1.0};
  std::string subject_id;

  LabelVolume() = default;
  LabelVolume(Dims dims_, std::string id = {}) : dims(dims_), labels(dims_.size(), 0), subject_id(std::move(id)) {}

  void validate() const {
    if (labels.size() != dims.size()) throw DimensionMismatch("label grid size does not match " + to_string(dims));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!is_valid_label(labels[i])) {
        throw FormatError("voxel " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                          ", expected one of {0,1,2,4}");
      }
    }
  }
};

/// Single-channel float grid (probability or uncertainty maps).
struct ScalarVolume {
  Dims dims;
  std::vector<float> values;
  Spacing spacing{1.0, 1.0, 1.0};
  std::string subject_id;
};

enum class Region { wt, tc, et };
inline constexpr std::array<Region, 3> kRegions = {Region::wt, Region::tc, Region::et};

inline const char* region_name(Region r) {
  switch (r) {
    case Region::wt: return "WT";
    case Region::tc: return "TC";
    case Region::et: return "ET";
  }
  return "?";
}

inline bool in_region(std::uint8_t label, Region r) {
  switch (r) {
    case Region::wt: return label == 1 || label == 2 || label == 4;
    case Region::tc: return label == 1 || label == 4;
    case Region::et: return label == 4;
  }
  return false;
}

using Mask = std::vector<std::uint8_t>;

/// Nested binary masks, et within tc within wt.
struct RegionMaskSet {
  Dims dims;
  Mask wt, tc, et;

  const Mask& get(Region r) const {
    switch (r) {
      case Region::wt: return wt;
      case Region::tc: return tc;
      case Region::et: return et;
    }
    return wt;
  }
};

inline Mask region_mask(const LabelVolume& labels, Region r) {
  Mask m(labels.labels.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = in_region(labels.labels[i], r) ? 1 : 0;
  return m;
}

inline RegionMaskSet region_masks(const LabelVolume& labels) {
  return {labels.dims, region_mask(labels, Region::wt), region_mask(labels, Region::tc),
          region_mask(labels, Region::et)};
}

enum class NormStatus { ok, degenerate };

struct NormalizedVolume {
  MultiModalVolume volume;
  std::array<NormStatus, kModalities> status{};
};

/// Standardizes each modality to zero mean and unit std over its non-zero
/// voxels; zero voxels stay exactly 0. A modality whose non-zero std is
/// below 1e-8 is flagged degenerate and its support is mapped to 0.
inline NormalizedVolume znormalize_nonzero(const MultiModalVolume& vol) {
  vol.validate();
  NormalizedVolume out{vol, {}};
  for (std::size_t m = 0; m < kModalities; ++m) {
    const auto& src = vol.data[m];
    double sum = 0;
    std::size_t count = 0;
    for (float v : src)
      if (v != 0.0f) {
        sum += v;
        ++count;
      }
    if (count < 2) {
      throw EmptyBrainMask(std::string("modality ") + kModalityNames[m] + " has " + std::to_string(count) +
                           " non-zero voxels, need at least 2");
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0;
    for (float v : src)
      if (v != 0.0f) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(count));
    auto& dst = out.volume.data[m];
    if (sd < 1e-8) {
      out.status[m] = NormStatus::degenerate;
      for (auto& v : dst) v = 0.0f;
      continue;
    }
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (src[i] == 0.0f) continue;
      const float z = static_cast<float>((src[i] - mean) / sd);
      // An exact 0 after the transform would leave the brain mask, so nudge it.
      dst[i] = z == 0.0f ? 1e-30f : z;
    }
  }
  return out;
}

}  // namespace vseg
