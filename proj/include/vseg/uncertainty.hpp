#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "vseg/errors.hpp"
#include "vseg/inference.hpp"
#include "vseg/parallel.hpp"
#include "vseg/rng.hpp"
#include "vseg/sampling.hpp"
#include "vseg/vnet.hpp"
#include "vseg/volumes.hpp"

namespace vseg {

/// B stochastic predictions of one volume.
struct SampleStack {
  Dims dims;
  std::vector<std::vector<std::uint8_t>> label_samples;  // B label grids
  std::vector<double> prob_sums;                         // 4 x voxels

  std::size_t samples() const { return label_samples.size(); }

  void add(const ProbabilityVolume& p) {
    if (prob_sums.empty()) prob_sums.assign(p.probs.size(), 0.0);
    for (std::size_t i = 0; i < p.probs.size(); ++i) prob_sums[i] += p.probs[i];
    label_samples.push_back(decode_labels(p).labels);
  }

  void validate() const {
    if (samples() < 2) throw ConfigError("sample stack needs at least 2 samples");
    for (const auto& s : label_samples)
      if (s.size() != dims.size()) throw DimensionMismatch("sample grid size does not match stack dims");
  }
};

enum class UncertaintyKind { variance, entropy };

/// Voxel map in [0, 100]; 0 is most certain.
struct UncertaintyMap {
  Region region = Region::wt;  // ignored for entropy maps
  UncertaintyKind kind = UncertaintyKind::variance;
  Dims dims;
  std::vector<float> values;
};

namespace uncertainty_detail {

// Draws run in waves of `threads`; each wave is folded into the stack in
// index order, so sums do not depend on scheduling and at most `threads`
// probability volumes are alive at once.
template <class Draw>
SampleStack collect(const Dims& dims, std::size_t B, std::size_t threads, Draw&& draw) {
  SampleStack stack{dims, {}, {}};
  threads = std::max<std::size_t>(threads, 1);
  for (std::size_t start = 0; start < B; start += threads) {
    const std::size_t count = std::min(threads, B - start);
    std::vector<ProbabilityVolume> wave(count);
    parallel_for(count, threads, [&](std::size_t i) { wave[i] = draw(start + i); });
    for (const auto& p : wave) stack.add(p);
  }
  return stack;
}

}  // namespace uncertainty_detail

/// Test-time dropout: B whole-volume predictions with dropout active, each
/// on its own substream of `seed`.
template <class T>
SampleStack ttd_sample(const ModelParameters<T>& params, const MultiModalVolume& vol, std::size_t B, double dropout_p,
                       const TileGrid& tile, std::uint64_t seed, std::size_t threads = 1) {
  if (B < 2) throw ConfigError("uncertainty.samples must be at least 2");
  if (params.config.dropout_sites == DropoutSites::none)
    throw ConfigError("test-time dropout needs a model with dropout sites (dropout_sites is none)");
  const Rng root(seed);
  return uncertainty_detail::collect(vol.dims, B, threads, [&](std::size_t b) {
    return predict_volume(params, vol, tile, {Mode::eval_with_dropout, dropout_p, root.split(b).next_u64()});
  });
}

/// Test-time augmentation: each draw perturbs the input with `policy`
/// (flips, intensity shift/scale, Gaussian noise), predicts without
/// dropout, and undoes the flips before stacking.
template <class T>
SampleStack tta_sample(const ModelParameters<T>& params, const MultiModalVolume& vol, std::size_t B,
                       const AugmentationPolicy& policy, const TileGrid& tile, std::uint64_t seed,
                       std::size_t threads = 1) {
  if (B < 2) throw ConfigError("uncertainty.samples must be at least 2");
  policy.validate();
  const Rng root(seed);
  return uncertainty_detail::collect(vol.dims, B, threads, [&](std::size_t b) {
    Rng rng = root.split(b);
    MultiModalVolume aug = vol;
    std::vector<float> buf;
    buf.reserve(kModalities * vol.dims.size());
    for (const auto& m : vol.data) buf.insert(buf.end(), m.begin(), m.end());
    const auto rec = augment(buf, vol.dims, policy, rng);
    const std::size_t n = vol.dims.size();
    for (std::size_t m = 0; m < kModalities; ++m) aug.data[m].assign(buf.begin() + m * n, buf.begin() + (m + 1) * n);
    auto p = predict_volume(params, aug, tile, {Mode::eval, -1.0, 0});
    invert_geometric(p.probs, vol.dims, rec);
    return p;
  });
}

/// Argmax of the averaged probabilities.
inline LabelVolume mean_prediction(const SampleStack& stack) {
  stack.validate();
  std::vector<double> avg(stack.prob_sums.size());
  const double inv = 1.0 / static_cast<double>(stack.samples());
  for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = stack.prob_sums[i] * inv;
  return decode_labels(avg, stack.dims);
}

/// Population variance over samples of binary region membership, scaled so
/// the binary maximum 0.25 maps to 100.
inline UncertaintyMap variance_map(const SampleStack& stack, Region region) {
  stack.validate();
  const std::size_t n = stack.dims.size();
  const double B = static_cast<double>(stack.samples());
  UncertaintyMap out{region, UncertaintyKind::variance, stack.dims, std::vector<float>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0;
    for (const auto& s : stack.label_samples) mean += in_region(s[i], region) ? 1.0 : 0.0;
    mean /= B;
    double var = 0;
    for (const auto& s : stack.label_samples) {
      const double y = in_region(s[i], region) ? 1.0 : 0.0;
      var += (y - mean) * (y - mean);
    }
    var /= B;
    out.values[i] = static_cast<float>(std::clamp(var / 0.25 * 100.0, 0.0, 100.0));
  }
  return out;
}

/// Entropy of the empirical label distribution per voxel, normalized by
/// ln 4 to [0, 100].
inline UncertaintyMap entropy_map(const SampleStack& stack) {
  stack.validate();
  const std::size_t n = stack.dims.size();
  const double B = static_cast<double>(stack.samples());
  UncertaintyMap out{Region::wt, UncertaintyKind::entropy, stack.dims, std::vector<float>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    std::array<std::size_t, 4> counts{};
    for (const auto& s : stack.label_samples) ++counts[static_cast<std::size_t>(label_to_channel(s[i]))];
    double h = 0;
    for (std::size_t c : counts) {
      if (c == 0 || c == stack.samples()) continue;
      const double p = static_cast<double>(c) / B;
      h -= p * std::log(p);
    }
    out.values[i] = static_cast<float>(std::clamp(h / std::log(4.0) * 100.0, 0.0, 100.0));
  }
  return out;
}

}  // namespace vseg
