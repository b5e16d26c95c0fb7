#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vseg/errors.hpp"
#include "vseg/kernel/ops.hpp"
#include "vseg/kernel/tensor.hpp"
#include "vseg/rng.hpp"

namespace vseg {

enum class DropoutSites { decoder_blocks, all_blocks, none };

inline const char* to_string(DropoutSites s) {
  switch (s) {
    case DropoutSites::decoder_blocks: return "decoder-blocks";
    case DropoutSites::all_blocks: return "all-blocks";
    case DropoutSites::none: return "none";
  }
  return "?";
}

inline DropoutSites dropout_sites_from_string(const std::string& s) {
  if (s == "decoder-blocks") return DropoutSites::decoder_blocks;
  if (s == "all-blocks") return DropoutSites::all_blocks;
  if (s == "none") return DropoutSites::none;
  throw ConfigError("unknown dropout_sites '" + s + "' (expected decoder-blocks, all-blocks or none)");
}

struct VNetConfig {
  int levels = 5;
  int base_channels = 32;
  int kernel = 3;
  std::vector<int> convs_per_level{1, 2, 3, 3, 3};
  double dropout_p = 0.5;
  DropoutSites dropout_sites = DropoutSites::decoder_blocks;
  int in_channels = 4;
  int out_channels = 4;

  std::size_t channels_at(int level) const { return static_cast<std::size_t>(base_channels) << level; }

  /// Spatial patch dims must be divisible by this.
  std::size_t divisor() const { return std::size_t{1} << (levels - 1); }

  void validate() const {
    if (levels < 1 || levels > 8) throw ConfigError("model.levels must lie in [1, 8]");
    if (base_channels < 1) throw ConfigError("model.base_channels must be positive");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("model.kernel must be odd and positive");
    if (static_cast<int>(convs_per_level.size()) < levels)
      throw ConfigError("model.convs_per_level needs one entry per level");
    for (int i = 0; i < levels; ++i)
      if (convs_per_level[i] < 1) throw ConfigError("model.convs_per_level entries must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("model.dropout_p must lie in [0, 1)");
    if (in_channels < 1 || out_channels != 4) throw ConfigError("model.out_channels must be 4");
  }

  void require_patch(std::size_t size) const {
    if (size == 0 || size % divisor() != 0) {
      throw ConfigError("patch size " + std::to_string(size) + " is not divisible by 2^(levels-1) = " +
                        std::to_string(divisor()));
    }
  }
};

/// Named parameter tensors of one model. Names and shapes depend only on
/// the config.
template <class T>
struct ModelParameters {
  VNetConfig config;
  std::map<std::string, Tensor<T>> tensors;

  const Tensor<T>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("missing model parameter '" + name + "'");
    return it->second;
  }

  std::vector<Tensor<T>> list() const {
    std::vector<Tensor<T>> out;
    for (const auto& [_, t] : tensors) out.push_back(t);
    return out;
  }

  template <class U>
  ModelParameters<U> cast() const {
    ModelParameters<U> out{config, {}};
    for (const auto& [name, t] : tensors) {
      std::vector<U> v(t.values().begin(), t.values().end());
      out.tensors.emplace(name, Tensor<U>(t.shape(), std::move(v), true));
    }
    return out;
  }
};

enum class Mode { train, eval, eval_with_dropout };

namespace vnet_detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

template <class T>
struct Builder {
  ModelParameters<T>& params;
  Rng root;

  void normal(const std::string& name, Shape shape, double stddev) {
    Rng rng = root.split(fnv1a(name));
    Tensor<T> t(std::move(shape), T(0), true);
    for (auto& v : t.mutable_values()) v = static_cast<T>(stddev * rng.normal());
    params.tensors.emplace(name, std::move(t));
  }
  void constant(const std::string& name, std::size_t n, T value) {
    params.tensors.emplace(name, Tensor<T>(Shape{n}, value, true));
  }

  void conv(const std::string& prefix, std::size_t in, std::size_t out, std::size_t k) {
    normal(prefix + ".w", {out, in, k, k, k}, std::sqrt(2.0 / static_cast<double>(in * k * k * k)));
    constant(prefix + ".b", out, T(0));
  }
  void tconv(const std::string& prefix, std::size_t in, std::size_t out, std::size_t k) {
    // Each output voxel of a stride-2 transpose sees about in*k^3/8 taps.
    normal(prefix + ".w", {in, out, k, k, k}, std::sqrt(16.0 / static_cast<double>(in * k * k * k)));
    constant(prefix + ".b", out, T(0));
  }
  void norm(const std::string& prefix, std::size_t c) {
    constant(prefix + ".gamma", c, T(1));
    constant(prefix + ".beta", c, T(0));
  }
  void unit(const std::string& prefix, std::size_t in, std::size_t out, std::size_t k) {
    conv(prefix + ".conv", in, out, k);
    norm(prefix + ".norm", out);
  }
};

}  // namespace vnet_detail

/// Allocates and initializes all parameters: He-normal conv weights,
/// zero biases, unit gamma, zero beta. Level l carries base * 2^l channels.
template <class T>
ModelParameters<T> build(const VNetConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParameters<T> params{config, {}};
  vnet_detail::Builder<T> b{params, Rng(seed)};
  const auto k = static_cast<std::size_t>(config.kernel);
  const int L = config.levels;
  b.unit("enc0.stem", static_cast<std::size_t>(config.in_channels), config.channels_at(0), k);
  for (int l = 0; l < L; ++l) {
    const auto c = config.channels_at(l);
    for (int i = 0; i < config.convs_per_level[l]; ++i) b.unit("enc" + std::to_string(l) + ".block" + std::to_string(i), c, c, k);
    if (l + 1 < L) b.unit("down" + std::to_string(l), c, config.channels_at(l + 1), k);
  }
  for (int l = L - 2; l >= 0; --l) {
    const auto c = config.channels_at(l);
    const std::string up = "up" + std::to_string(l), dec = "dec" + std::to_string(l);
    b.tconv(up + ".tconv", config.channels_at(l + 1), c, k);
    b.norm(up + ".norm", c);
    b.unit(dec + ".merge", 2 * c, c, 1);
    for (int i = 0; i < config.convs_per_level[l]; ++i) b.unit(dec + ".block" + std::to_string(i), c, c, k);
  }
  b.conv("head.conv", config.channels_at(0), static_cast<std::size_t>(config.out_channels), 1);
  return params;
}

template <class T>
std::size_t count_parameters(const ModelParameters<T>& params) {
  std::size_t n = 0;
  for (const auto& [_, t] : params.tensors) n += t.numel();
  return n;
}

namespace vnet_detail {

template <class T>
struct Runner {
  const ModelParameters<T>& p;
  Tape<T>* tape;
  Rng& rng;
  double dropout_p;  // 0 disables dropout

  Tensor<T> unit(const std::string& prefix, const Tensor<T>& x, std::size_t stride) const {
    const auto& w = p.at(prefix + ".conv.w");
    const std::size_t pad = w.dim(2) / 2;
    auto y = ops::conv3d(tape, x, w, p.at(prefix + ".conv.b"), stride, pad);
    y = ops::instance_norm(tape, y, p.at(prefix + ".norm.gamma"), p.at(prefix + ".norm.beta"));
    return ops::elu(tape, y);
  }

  Tensor<T> residual(const std::string& prefix, const Tensor<T>& x, int convs) const {
    Tensor<T> h = x;
    for (int i = 0; i < convs; ++i) h = unit(prefix + ".block" + std::to_string(i), h, 1);
    return ops::add(tape, x, h);
  }

  Tensor<T> dropout(const Tensor<T>& x) const {
    if (dropout_p <= 0.0) return x;
    return ops::channel_dropout(tape, x, dropout_p, rng);
  }
};

}  // namespace vnet_detail

/// Runs the network on x[N, in_channels, d, d, d] and returns per-voxel
/// class probabilities [N, 4, d, d, d]. `dropout_override` >= 0 replaces
/// the configured dropout probability (used by test-time dropout).
template <class T>
Tensor<T> forward(const ModelParameters<T>& params, const Tensor<T>& x, Mode mode, Rng& rng, Tape<T>* tape = nullptr,
                  double dropout_override = -1.0) {
  const auto& cfg = params.config;
  if (x.rank() != 5 || x.dim(1) != static_cast<std::size_t>(cfg.in_channels)) {
    throw ShapeError("vnet forward: expected [N," + std::to_string(cfg.in_channels) + ",D,H,W], got " + to_string(x.shape()));
  }
  for (std::size_t a = 2; a < 5; ++a) {
    if (x.dim(a) % cfg.divisor() != 0) {
      throw ShapeError("vnet forward: spatial dim " + std::to_string(x.dim(a)) + " not divisible by " +
                       std::to_string(cfg.divisor()));
    }
  }
  double p = dropout_override >= 0.0 ? dropout_override : cfg.dropout_p;
  if (mode == Mode::eval || cfg.dropout_sites == DropoutSites::none) p = 0.0;
  const vnet_detail::Runner<T> run{params, tape, rng, p};
  const bool encoder_dropout = cfg.dropout_sites == DropoutSites::all_blocks;
  const int L = cfg.levels;

  std::vector<Tensor<T>> skips;
  Tensor<T> h = run.unit("enc0.stem", x, 1);
  for (int l = 0; l < L; ++l) {
    h = run.residual("enc" + std::to_string(l), h, cfg.convs_per_level[l]);
    if (encoder_dropout) h = run.dropout(h);
    if (l + 1 < L) {
      skips.push_back(h);
      h = run.unit("down" + std::to_string(l), h, 2);
    }
  }
  for (int l = L - 2; l >= 0; --l) {
    const std::string up = "up" + std::to_string(l), dec = "dec" + std::to_string(l);
    h = ops::conv3d_transpose(tape, h, params.at(up + ".tconv.w"), params.at(up + ".tconv.b"), 2);
    h = ops::instance_norm(tape, h, params.at(up + ".norm.gamma"), params.at(up + ".norm.beta"));
    h = ops::elu(tape, h);
    h = ops::concat_channels(tape, h, skips[static_cast<std::size_t>(l)]);
    h = run.unit(dec + ".merge", h, 1);
    h = run.residual(dec, h, cfg.convs_per_level[l]);
    h = run.dropout(h);
  }
  auto logits = ops::conv3d(tape, h, params.at("head.conv.w"), params.at("head.conv.b"), 1, 0);
  return ops::softmax_channels(tape, logits);
}

/// Upper bound on bytes held by one training step's tape for a batch of
/// cubic patches, used to reject configs before allocating.
inline std::size_t estimate_training_bytes(const VNetConfig& cfg, std::size_t patch, std::size_t batch,
                                           std::size_t scalar_bytes) {
  std::size_t elems = 0;
  const int L = cfg.levels;
  for (int l = 0; l < L; ++l) {
    const std::size_t side = patch >> l;
    const std::size_t voxels = side * side * side;
    const std::size_t c = cfg.channels_at(l);
    // conv, norm and activation outputs per unit, plus the residual sum.
    std::size_t units = static_cast<std::size_t>(cfg.convs_per_level[l]) + 1;
    if (l + 1 < L) units += static_cast<std::size_t>(cfg.convs_per_level[l]) + 3;  // decoder side
    elems += (3 * units + 2) * c * voxels;
  }
  return elems * batch * scalar_bytes * 2;  // values and gradients
}

}  // namespace vseg
