#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <vector>

#include "vseg/errors.hpp"
#include "vseg/rng.hpp"
#include "vseg/sampling.hpp"
#include "vseg/vnet.hpp"
#include "vseg/volumes.hpp"

namespace vseg {

using TileOffset = std::array<std::size_t, 3>;

/// Overlapping cubic tiles covering a volume. Tiles that extend past the
/// volume boundary read zeros there and their outputs are cropped.
struct TileGrid {
  std::size_t size = 64;
  std::size_t stride = 32;
  std::vector<TileOffset> offsets;

  static std::vector<std::size_t> axis_offsets(std::size_t extent, std::size_t size, std::size_t stride) {
    std::vector<std::size_t> out{0};
    if (extent <= size) return out;
    for (std::size_t o = stride; o + size < extent; o += stride) out.push_back(o);
    out.push_back(extent - size);
    return out;
  }

  static TileGrid make(const Dims& dims, std::size_t size, std::size_t stride) {
    if (size == 0 || stride == 0) throw ConfigError("tile size and stride must be positive");
    if (stride > size) throw ConfigError("tile stride larger than tile size would leave gaps");
    TileGrid g{size, stride, {}};
    for (auto z : axis_offsets(dims.d, size, stride))
      for (auto y : axis_offsets(dims.h, size, stride))
        for (auto x : axis_offsets(dims.w, size, stride)) g.offsets.push_back({z, y, x});
    return g;
  }

  /// How many tiles cover each voxel.
  std::vector<std::uint32_t> coverage(const Dims& dims) const {
    std::vector<std::uint32_t> c(dims.size(), 0);
    for (const auto& o : offsets)
      for (std::size_t z = o[0]; z < std::min(o[0] + size, dims.d); ++z)
        for (std::size_t y = o[1]; y < std::min(o[1] + size, dims.h); ++y)
          for (std::size_t x = o[2]; x < std::min(o[2] + size, dims.w); ++x) ++c[dims.index(z, y, x)];
    return c;
  }
};

/// Per-voxel class probabilities, 4 x D x H x W.
struct ProbabilityVolume {
  Dims dims;
  std::vector<float> probs;

  float at(std::size_t channel, std::size_t voxel) const { return probs[channel * dims.size() + voxel]; }
};

struct PredictOptions {
  Mode mode = Mode::eval;
  double dropout_override = -1.0;
  std::uint64_t seed = 0;  // dropout stream when mode samples dropout
};

/// Whole-volume prediction by averaging tile probabilities. Sums are kept
/// in fixed point so the result does not depend on tile order; dropout
/// draws are keyed by tile offset for the same reason.
template <class T>
ProbabilityVolume predict_volume(const ModelParameters<T>& params, const MultiModalVolume& vol, const TileGrid& grid,
                                 const PredictOptions& opts = {}) {
  vol.validate();
  params.config.require_patch(grid.size);
  const Dims& d = vol.dims;
  const std::size_t n = d.size(), s = grid.size, tn = s * s * s;
  constexpr double kFixedScale = 281474976710656.0;  // 2^48
  std::vector<std::int64_t> sums(4 * n, 0);
  std::vector<std::uint32_t> counts(n, 0);
  std::vector<float> tile;
  const Rng base(opts.seed);
  for (const auto& o : grid.offsets) {
    extract_window(vol, nullptr, {static_cast<std::ptrdiff_t>(o[0]), static_cast<std::ptrdiff_t>(o[1]), static_cast<std::ptrdiff_t>(o[2])},
                   s, tile, nullptr);
    Tensor<T> x({1, kModalities, s, s, s}, std::vector<T>(tile.begin(), tile.end()));
    Rng rng = base.split((o[0] * 1000003ULL + o[1]) * 1000003ULL + o[2]);
    const auto probs = forward(params, x, opts.mode, rng, static_cast<Tape<T>*>(nullptr), opts.dropout_override);
    const auto& pv = probs.values();
    for (std::size_t z = 0; z < s && o[0] + z < d.d; ++z)
      for (std::size_t y = 0; y < s && o[1] + y < d.h; ++y)
        for (std::size_t xx = 0; xx < s && o[2] + xx < d.w; ++xx) {
          const std::size_t vi = d.index(o[0] + z, o[1] + y, o[2] + xx), ti = (z * s + y) * s + xx;
          ++counts[vi];
          for (std::size_t c = 0; c < 4; ++c) sums[c * n + vi] += std::llround(static_cast<double>(pv[c * tn + ti]) * kFixedScale);
        }
  }
  ProbabilityVolume out{d, std::vector<float>(4 * n, 0.0f)};
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[i] == 0) throw ConfigError("tile grid leaves voxel " + std::to_string(i) + " uncovered");
    for (std::size_t c = 0; c < 4; ++c)
      out.probs[c * n + i] = static_cast<float>(static_cast<double>(sums[c * n + i]) / kFixedScale / counts[i]);
  }
  return out;
}

/// Argmax over channels (ties to the lower channel), mapped to labels
/// {0, 1, 2, 4}.
template <class P>
LabelVolume decode_labels(const std::vector<P>& probs, const Dims& dims) {
  const std::size_t n = dims.size();
  if (probs.size() != 4 * n) throw ShapeError("decode_labels: expected 4 x voxels probabilities");
  LabelVolume out(dims);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 4; ++c)
      if (probs[c * n + i] > probs[best * n + i]) best = c;
    out.labels[i] = kChannelLabels[best];
  }
  return out;
}

inline LabelVolume decode_labels(const ProbabilityVolume& p) { return decode_labels(p.probs, p.dims); }

struct ComponentFilterConfig {
  int connectivity = 26;
  double keep_ratio_threshold = 0.1;

  void validate() const {
    if (connectivity != 6 && connectivity != 18 && connectivity != 26) throw ConfigError("connectivity must be 6, 18 or 26");
    if (!(keep_ratio_threshold > 0.0 && keep_ratio_threshold <= 1.0))
      throw ConfigError("keep_ratio_threshold must lie in (0, 1]");
  }
};

/// Connected-component labeling of a binary mask by breadth-first flood
/// fill. Component ids start at 1 in scan order; 0 marks background.
struct Components {
  std::vector<std::uint32_t> id;
  std::vector<std::size_t> sizes;  // sizes[k] is the size of component k + 1
};

inline std::vector<std::array<int, 3>> neighborhood(int connectivity) {
  std::vector<std::array<int, 3>> out;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dz) + std::abs(dy) + std::abs(dx);
        if (manhattan == 0) continue;
        if (connectivity == 6 && manhattan > 1) continue;
        if (connectivity == 18 && manhattan > 2) continue;
        out.push_back({dz, dy, dx});
      }
  return out;
}

inline Components connected_components(const Mask& mask, const Dims& dims, int connectivity) {
  if (mask.size() != dims.size()) throw DimensionMismatch("connected_components: mask size does not match dims");
  const auto nbr = neighborhood(connectivity);
  Components out{std::vector<std::uint32_t>(mask.size(), 0), {}};
  std::deque<std::size_t> queue;
  for (std::size_t seed = 0; seed < mask.size(); ++seed) {
    if (!mask[seed] || out.id[seed]) continue;
    const auto label = static_cast<std::uint32_t>(out.sizes.size() + 1);
    std::size_t size = 0;
    out.id[seed] = label;
    queue.push_back(seed);
    while (!queue.empty()) {
      const std::size_t v = queue.front();
      queue.pop_front();
      ++size;
      const auto z = static_cast<int>(v / (dims.h * dims.w)), y = static_cast<int>((v / dims.w) % dims.h),
                 x = static_cast<int>(v % dims.w);
      for (const auto& o : nbr) {
        const int nz = z + o[0], ny = y + o[1], nx = x + o[2];
        if (nz < 0 || ny < 0 || nx < 0 || nz >= static_cast<int>(dims.d) || ny >= static_cast<int>(dims.h) ||
            nx >= static_cast<int>(dims.w))
          continue;
        const std::size_t u = dims.index(static_cast<std::size_t>(nz), static_cast<std::size_t>(ny), static_cast<std::size_t>(nx));
        if (mask[u] && !out.id[u]) {
          out.id[u] = label;
          queue.push_back(u);
        }
      }
    }
    out.sizes.push_back(size);
  }
  return out;
}

/// Keeps the largest whole-tumor component, and the second largest when its
/// size is at least `keep_ratio_threshold` of the largest. Voxels of every
/// other component are reset to background.
inline LabelVolume keep_top_components(const LabelVolume& labels, const ComponentFilterConfig& cfg) {
  cfg.validate();
  const auto wt = region_mask(labels, Region::wt);
  const auto comps = connected_components(wt, labels.dims, cfg.connectivity);
  if (comps.sizes.size() <= 1) return labels;
  std::vector<std::size_t> order(comps.sizes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return comps.sizes[a] > comps.sizes[b]; });
  std::vector<std::uint8_t> keep(comps.sizes.size() + 1, 0);
  keep[order[0] + 1] = 1;
  const double ratio = static_cast<double>(comps.sizes[order[1]]) / static_cast<double>(comps.sizes[order[0]]);
  if (ratio >= cfg.keep_ratio_threshold) keep[order[1] + 1] = 1;
  LabelVolume out = labels;
  for (std::size_t i = 0; i < out.labels.size(); ++i)
    if (comps.id[i] && !keep[comps.id[i]]) out.labels[i] = 0;
  return out;
}

}  // namespace vseg
