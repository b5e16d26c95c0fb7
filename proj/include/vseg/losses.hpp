#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vseg/errors.hpp"
#include "vseg/kernel/ops.hpp"
#include "vseg/kernel/tensor.hpp"
#include "vseg/volumes.hpp"

namespace vseg {

enum class ChannelMode { foreground_mean, all_channel_mean };

struct DiceLossConfig {
  double epsilon = 1e-5;
  ChannelMode channel_mode = ChannelMode::foreground_mean;
  double region_loss_weight = 0.0;

  void validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("loss.epsilon must be positive");
    if (region_loss_weight < 0.0) throw ConfigError("loss.region_loss_weight must be non-negative");
  }
};

/// One-hot encoding of a batch of label grids: [N, 4, voxels...] with
/// channel order (0, 1, 2, 4).
template <class T>
Tensor<T> one_hot(const std::vector<std::uint8_t>& labels, Shape spatial, std::size_t batch = 1) {
  const std::size_t n = numel(spatial);
  if (labels.size() != batch * n) throw ShapeError("one_hot: label count does not match batch x spatial");
  Shape shape{batch, 4};
  shape.insert(shape.end(), spatial.begin(), spatial.end());
  Tensor<T> t(shape);
  auto& v = t.mutable_values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i) {
      const int c = label_to_channel(labels[b * n + i]);
      if (c < 0) throw ShapeError("one_hot: invalid label " + std::to_string(labels[b * n + i]));
      v[(b * 4 + static_cast<std::size_t>(c)) * n + i] = T(1);
    }
  return t;
}

/// 1 - mean over `channels` of 2*sum(p*g) / (sum(p^2) + sum(g^2) + eps),
/// with sums over the batch and all voxels.
template <class T>
Tensor<T> dice_loss_channels(Tape<T>* tape, const Tensor<T>& probs, const Tensor<T>& target,
                             const std::vector<std::size_t>& channels, double eps) {
  if (probs.shape() != target.shape() || probs.rank() < 2) {
    throw ShapeError("dice_loss: probs " + to_string(probs.shape()) + " and target " + to_string(target.shape()) +
                     " must share shape [N,C,...]");
  }
  const std::size_t N = probs.dim(0), C = probs.dim(1), S = probs.numel() / (N * C);
  for (std::size_t c : channels)
    if (c >= C) throw ShapeError("dice_loss: channel index out of range");
  if (channels.empty()) throw ShapeError("dice_loss: empty channel set");
  const auto& p = probs.values();
  const auto& g = target.values();
  std::vector<double> inter(channels.size()), denom(channels.size());
  double coef_sum = 0;
  for (std::size_t k = 0; k < channels.size(); ++k) {
    double I = 0, P = 0, G = 0;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t base = (n * C + channels[k]) * S;
      for (std::size_t i = 0; i < S; ++i) {
        const double pv = p[base + i], gv = g[base + i];
        I += pv * gv;
        P += pv * pv;
        G += gv * gv;
      }
    }
    inter[k] = I;
    denom[k] = P + G + eps;
    coef_sum += 2.0 * I / denom[k];
  }
  const double K = static_cast<double>(channels.size());
  Tensor<T> loss(Shape{1}, static_cast<T>(1.0 - coef_sum / K));
  if (tape && tape->wants(probs)) {
    auto pn = probs.node(), gn = target.node(), ln = loss.node();
    tape->record("dice_loss", {pn}, loss, [=] {
      const double up = ln->grad[0];
      for (std::size_t k = 0; k < channels.size(); ++k) {
        const double D = denom[k], I = inter[k];
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t base = (n * C + channels[k]) * S;
          for (std::size_t i = 0; i < S; ++i) {
            const double d_coef = (2.0 * gn->value[base + i] * D - 4.0 * I * pn->value[base + i]) / (D * D);
            pn->grad[base + i] += static_cast<T>(-up * d_coef / K);
          }
        }
      }
    });
  }
  return loss;
}

inline std::vector<std::size_t> loss_channels(ChannelMode mode, std::size_t channels = 4) {
  std::vector<std::size_t> out;
  for (std::size_t c = mode == ChannelMode::foreground_mean ? 1 : 0; c < channels; ++c) out.push_back(c);
  return out;
}

template <class T>
Tensor<T> dice_loss(Tape<T>* tape, const Tensor<T>& probs, const Tensor<T>& target, const DiceLossConfig& cfg) {
  if (probs.rank() < 2 || probs.dim(1) != 4) throw ShapeError("dice_loss: expected 4 class channels");
  return dice_loss_channels(tape, probs, target, loss_channels(cfg.channel_mode), cfg.epsilon);
}

/// Channel sums giving nested-region scores [N, 3, ...]: WT = p1+p2+p4,
/// TC = p1+p4, ET = p4 (in label terms).
template <class T>
Tensor<T> region_probabilities(Tape<T>* tape, const Tensor<T>& probs) {
  if (probs.rank() < 2 || probs.dim(1) != 4) throw ShapeError("region_probabilities: expected 4 class channels");
  const std::size_t N = probs.dim(0), S = probs.numel() / (N * 4);
  Shape shape = probs.shape();
  shape[1] = 3;
  Tensor<T> r(shape);
  const auto& p = probs.values();
  auto& rv = r.mutable_values();
  for (std::size_t n = 0; n < N; ++n) {
    const T* pn = p.data() + n * 4 * S;
    T* out = rv.data() + n * 3 * S;
    for (std::size_t i = 0; i < S; ++i) {
      out[i] = pn[S + i] + pn[2 * S + i] + pn[3 * S + i];
      out[S + i] = pn[S + i] + pn[3 * S + i];
      out[2 * S + i] = pn[3 * S + i];
    }
  }
  if (tape && tape->wants(probs)) {
    auto pn = probs.node(), rn = r.node();
    tape->record("region_probabilities", {pn}, r, [=] {
      for (std::size_t n = 0; n < N; ++n) {
        const T* dr = rn->grad.data() + n * 3 * S;
        T* dp = pn->grad.data() + n * 4 * S;
        for (std::size_t i = 0; i < S; ++i) {
          dp[S + i] += dr[i] + dr[S + i];
          dp[2 * S + i] += dr[i];
          dp[3 * S + i] += dr[i] + dr[S + i] + dr[2 * S + i];
        }
      }
    });
  }
  return r;
}

/// Dice loss over the three nested regions derived from class scores.
template <class T>
Tensor<T> nested_region_loss(Tape<T>* tape, const Tensor<T>& probs, const Tensor<T>& target,
                             const DiceLossConfig& cfg) {
  if (probs.shape() != target.shape()) throw ShapeError("nested_region_loss: probs and target shapes differ");
  auto regions = region_probabilities(tape, probs);
  auto target_regions = region_probabilities<T>(nullptr, target);
  return dice_loss_channels(tape, regions, target_regions, {0, 1, 2}, cfg.epsilon);
}

/// dice_loss + region_loss_weight * nested_region_loss. A zero weight
/// returns dice_loss unchanged.
template <class T>
Tensor<T> total_loss(Tape<T>* tape, const Tensor<T>& probs, const Tensor<T>& target, const DiceLossConfig& cfg) {
  auto base = dice_loss(tape, probs, target, cfg);
  if (cfg.region_loss_weight == 0.0) return base;
  return ops::add_scaled(tape, base, nested_region_loss(tape, probs, target, cfg), cfg.region_loss_weight);
}

}  // namespace vseg
