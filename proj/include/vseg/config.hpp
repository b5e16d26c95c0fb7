#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "vseg/checkpoint.hpp"
#include "vseg/errors.hpp"
#include "vseg/inference.hpp"
#include "vseg/losses.hpp"
#include "vseg/metrics.hpp"
#include "vseg/phantom.hpp"
#include "vseg/sampling.hpp"
#include "vseg/training.hpp"
#include "vseg/vnet.hpp"

namespace vseg {

struct OptimizerConfig {
  double lr = 1e-2;
  double momentum = 0.99;
};

struct SchedulerConfig {
  double factor = 0.1;
  std::size_t patience = 10;
  double min_delta = 1e-4;
};

struct TrainingConfig {
  std::size_t epochs = 100;
  std::size_t batches_per_epoch = 100;
  std::size_t val_batches = 4;
  std::size_t memory_budget_mb = 4096;
};

struct InferenceConfig {
  std::size_t tile_size = 0;  // 0 resolves to patch.size
  std::size_t tile_stride = 0;  // 0 resolves to tile_size / 2
};

struct UncertaintyConfig {
  std::string mode = "ttd";
  std::size_t samples = 50;
  double dropout_p = 0.5;
  double tta_noise_std = 0.1;
  std::vector<double> threshold_grid = default_threshold_grid();
};

struct PostprocessConfig {
  bool enabled = false;
  ComponentFilterConfig filter;
};

struct PhantomRunConfig {
  std::size_t subjects = 20;
  std::string format = "nifti1";
  std::size_t specks = 0;  // isolated speck lesions painted into each subject
  std::size_t speck_size = 3;
  PhantomConfig geometry;
};

struct PathsConfig {
  std::string data_dir = "data";
  std::string out_dir = "run";
};

/// Everything a CLI run needs. Parsing fills every omitted key with its
/// default, so `to_json(parse_run_config("{}"))` is the effective default.
struct RunConfig {
  std::uint64_t seed = 20200;
  std::size_t threads = 0;  // 0: VSEG_THREADS or 1
  VNetConfig model;
  PatchSpec patch;
  AugmentationPolicy augmentation;
  DiceLossConfig loss;
  OptimizerConfig optimizer;
  SchedulerConfig scheduler;
  TrainingConfig training;
  InferenceConfig inference;
  UncertaintyConfig uncertainty;
  PostprocessConfig postprocess;
  PhantomRunConfig phantom;
  PathsConfig paths;

  TrainOptions train_options() const {
    TrainOptions o;
    o.epochs = training.epochs;
    o.batches_per_epoch = training.batches_per_epoch;
    o.val_batches = training.val_batches;
    o.lr = optimizer.lr;
    o.momentum = optimizer.momentum;
    o.scheduler.current_lr = optimizer.lr;
    o.scheduler.factor = scheduler.factor;
    o.scheduler.patience = scheduler.patience;
    o.scheduler.min_delta = scheduler.min_delta;
    o.memory_budget_bytes = training.memory_budget_mb << 20;
    return o;
  }

  AugmentationPolicy tta_policy() const {
    AugmentationPolicy p = augmentation;
    p.gaussian_noise_std = uncertainty.tta_noise_std;
    return p;
  }

  io::Format phantom_format() const { return phantom.format == "blob" ? io::Format::blob : io::Format::nifti1; }
};

inline std::size_t default_threads() {
  if (const char* env = std::getenv("VSEG_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw ConfigError(std::string("VSEG_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<std::size_t>(v);
  }
  return 1;
}

namespace config_detail {

// Reads keys from one JSON object and rejects any it did not consume.
class Section {
 public:
  Section(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected a JSON object");
  }

  template <class V>
  void read(const char* key, V& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).template get<V>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path(key) + ": wrong type (" + std::string(j_.at(key).type_name()) + ")");
    }
  }

  const nlohmann::json* child(const char* key) {
    used_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const char* key) const { return name_.empty() ? key : name_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!used_.count(key)) throw ConfigError(path(key.c_str()) + ": unknown key");
  }

 private:
  const nlohmann::json& j_;
  std::string name_;
  std::set<std::string> used_;
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace config_detail

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json model = c.model;
  const auto& g = c.phantom.geometry;
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["model"] = model;
  j["patch"] = {{"size", c.patch.size}, {"batch", c.patch.batch}, {"tumor_center_prob", c.patch.tumor_center_prob}};
  j["augmentation"] = {{"flip_prob", c.augmentation.flip_prob_per_axis},
                       {"shift_range", c.augmentation.intensity_shift_range},
                       {"scale_range", {c.augmentation.scale_min, c.augmentation.scale_max}},
                       {"noise_std", c.augmentation.gaussian_noise_std}};
  j["loss"] = {{"epsilon", c.loss.epsilon},
               {"channels", c.loss.channel_mode == ChannelMode::foreground_mean ? "foreground" : "all"},
               {"region_loss_weight", c.loss.region_loss_weight}};
  j["optimizer"] = {{"lr", c.optimizer.lr}, {"momentum", c.optimizer.momentum}};
  j["scheduler"] = {{"factor", c.scheduler.factor}, {"patience", c.scheduler.patience}, {"min_delta", c.scheduler.min_delta}};
  j["training"] = {{"epochs", c.training.epochs},
                   {"batches_per_epoch", c.training.batches_per_epoch},
                   {"val_batches", c.training.val_batches},
                   {"memory_budget_mb", c.training.memory_budget_mb}};
  j["inference"] = {{"tile_size", c.inference.tile_size}, {"tile_stride", c.inference.tile_stride}};
  j["uncertainty"] = {{"mode", c.uncertainty.mode},
                      {"samples", c.uncertainty.samples},
                      {"dropout_p", c.uncertainty.dropout_p},
                      {"tta_noise_std", c.uncertainty.tta_noise_std},
                      {"threshold_grid", c.uncertainty.threshold_grid}};
  j["postprocess"] = {{"enabled", c.postprocess.enabled},
                      {"connectivity", c.postprocess.filter.connectivity},
                      {"keep_ratio_threshold", c.postprocess.filter.keep_ratio_threshold}};
  j["phantom"] = {{"subjects", c.phantom.subjects},
                  {"format", c.phantom.format},
                  {"specks", c.phantom.specks},
                  {"speck_size", c.phantom.speck_size},
                  {"dims", {g.dims.d, g.dims.h, g.dims.w}},
                  {"brain_radius_frac", g.brain_radius_frac},
                  {"tumor_count", {g.tumor_count_min, g.tumor_count_max}},
                  {"wt_radius", {g.wt_radius_min, g.wt_radius_max}},
                  {"radius_jitter", g.radius_jitter},
                  {"tc_ratio", g.tc_ratio},
                  {"et_ratio", g.et_ratio},
                  {"intensity", g.intensity},
                  {"bias_amplitude", g.bias_amplitude},
                  {"gain_range", {g.scale_min, g.scale_max}},
                  {"noise_std", g.noise_std},
                  {"tumor_fraction", {g.tumor_fraction_min, g.tumor_fraction_max}}};
  j["paths"] = {{"data_dir", c.paths.data_dir}, {"out_dir", c.paths.out_dir}};
  return j;
}

/// Parses a run configuration. Unknown keys, wrong types and invalid values
/// raise ConfigError naming the offending key.
inline RunConfig parse_run_config(const nlohmann::json& root) {
  using config_detail::require;
  using config_detail::Section;
  RunConfig c;
  Section top(root, "");
  top.read("seed", c.seed);
  top.read("threads", c.threads);
  if (const auto* m = top.child("model")) c.model = vnet_config_from_json(*m);

  if (const auto* j = top.child("patch")) {
    Section s(*j, "patch");
    s.read("size", c.patch.size);
    s.read("batch", c.patch.batch);
    s.read("tumor_center_prob", c.patch.tumor_center_prob);
    s.finish();
  }
  require(c.patch.batch >= 1, "patch.batch must be at least 1");
  require(c.patch.tumor_center_prob >= 0.0 && c.patch.tumor_center_prob <= 1.0, "patch.tumor_center_prob must lie in [0, 1]");
  c.model.require_patch(c.patch.size);

  if (const auto* j = top.child("augmentation")) {
    Section s(*j, "augmentation");
    std::vector<double> range{c.augmentation.scale_min, c.augmentation.scale_max};
    s.read("flip_prob", c.augmentation.flip_prob_per_axis);
    s.read("shift_range", c.augmentation.intensity_shift_range);
    s.read("scale_range", range);
    s.read("noise_std", c.augmentation.gaussian_noise_std);
    s.finish();
    require(range.size() == 2, "augmentation.scale_range must have two entries");
    c.augmentation.scale_min = range[0];
    c.augmentation.scale_max = range[1];
  }
  c.augmentation.validate();

  if (const auto* j = top.child("loss")) {
    Section s(*j, "loss");
    std::string channels = "foreground";
    s.read("epsilon", c.loss.epsilon);
    s.read("channels", channels);
    s.read("region_loss_weight", c.loss.region_loss_weight);
    s.finish();
    require(channels == "foreground" || channels == "all", "loss.channels must be 'foreground' or 'all'");
    c.loss.channel_mode = channels == "all" ? ChannelMode::all_channel_mean : ChannelMode::foreground_mean;
  }
  c.loss.validate();

  if (const auto* j = top.child("optimizer")) {
    Section s(*j, "optimizer");
    s.read("lr", c.optimizer.lr);
    s.read("momentum", c.optimizer.momentum);
    s.finish();
  }
  require(c.optimizer.lr > 0.0, "optimizer.lr must be positive");
  require(c.optimizer.momentum >= 0.0 && c.optimizer.momentum < 1.0, "optimizer.momentum must lie in [0, 1)");

  if (const auto* j = top.child("scheduler")) {
    Section s(*j, "scheduler");
    s.read("factor", c.scheduler.factor);
    s.read("patience", c.scheduler.patience);
    s.read("min_delta", c.scheduler.min_delta);
    s.finish();
  }
  require(c.scheduler.factor > 0.0 && c.scheduler.factor < 1.0, "scheduler.factor must lie in (0, 1)");
  require(c.scheduler.patience >= 1, "scheduler.patience must be at least 1");
  require(c.scheduler.min_delta >= 0.0, "scheduler.min_delta must be non-negative");

  if (const auto* j = top.child("training")) {
    Section s(*j, "training");
    s.read("epochs", c.training.epochs);
    s.read("batches_per_epoch", c.training.batches_per_epoch);
    s.read("val_batches", c.training.val_batches);
    s.read("memory_budget_mb", c.training.memory_budget_mb);
    s.finish();
  }
  require(c.training.batches_per_epoch >= 1, "training.batches_per_epoch must be at least 1");

  if (const auto* j = top.child("inference")) {
    Section s(*j, "inference");
    s.read("tile_size", c.inference.tile_size);
    s.read("tile_stride", c.inference.tile_stride);
    s.finish();
  }
  if (c.inference.tile_size == 0) c.inference.tile_size = c.patch.size;
  if (c.inference.tile_stride == 0) c.inference.tile_stride = std::max<std::size_t>(c.inference.tile_size / 2, 1);
  c.model.require_patch(c.inference.tile_size);
  require(c.inference.tile_stride <= c.inference.tile_size, "inference.tile_stride must not exceed inference.tile_size");

  if (const auto* j = top.child("uncertainty")) {
    Section s(*j, "uncertainty");
    s.read("mode", c.uncertainty.mode);
    s.read("samples", c.uncertainty.samples);
    s.read("dropout_p", c.uncertainty.dropout_p);
    s.read("tta_noise_std", c.uncertainty.tta_noise_std);
    s.read("threshold_grid", c.uncertainty.threshold_grid);
    s.finish();
  }
  require(c.uncertainty.mode == "ttd" || c.uncertainty.mode == "tta", "uncertainty.mode must be 'ttd' or 'tta'");
  require(c.uncertainty.samples >= 2, "uncertainty.samples must be at least 2");
  require(c.uncertainty.dropout_p >= 0.0 && c.uncertainty.dropout_p < 1.0, "uncertainty.dropout_p must lie in [0, 1)");
  require(c.uncertainty.tta_noise_std >= 0.0, "uncertainty.tta_noise_std must be non-negative");
  validate_threshold_grid(c.uncertainty.threshold_grid);

  if (const auto* j = top.child("postprocess")) {
    Section s(*j, "postprocess");
    s.read("enabled", c.postprocess.enabled);
    s.read("connectivity", c.postprocess.filter.connectivity);
    s.read("keep_ratio_threshold", c.postprocess.filter.keep_ratio_threshold);
    s.finish();
  }
  c.postprocess.filter.validate();

  if (const auto* j = top.child("phantom")) {
    Section s(*j, "phantom");
    auto& g = c.phantom.geometry;
    std::vector<std::size_t> dims{g.dims.d, g.dims.h, g.dims.w};
    std::vector<int> count{g.tumor_count_min, g.tumor_count_max};
    std::vector<double> radius{g.wt_radius_min, g.wt_radius_max}, gain{g.scale_min, g.scale_max},
        band{g.tumor_fraction_min, g.tumor_fraction_max};
    s.read("subjects", c.phantom.subjects);
    s.read("format", c.phantom.format);
    s.read("specks", c.phantom.specks);
    s.read("speck_size", c.phantom.speck_size);
    s.read("dims", dims);
    s.read("brain_radius_frac", g.brain_radius_frac);
    s.read("tumor_count", count);
    s.read("wt_radius", radius);
    s.read("radius_jitter", g.radius_jitter);
    s.read("tc_ratio", g.tc_ratio);
    s.read("et_ratio", g.et_ratio);
    s.read("intensity", g.intensity);
    s.read("bias_amplitude", g.bias_amplitude);
    s.read("gain_range", gain);
    s.read("noise_std", g.noise_std);
    s.read("tumor_fraction", band);
    s.finish();
    require(dims.size() == 3, "phantom.dims must have three entries");
    require(count.size() == 2 && radius.size() == 2 && gain.size() == 2 && band.size() == 2,
            "phantom.tumor_count, phantom.wt_radius, phantom.gain_range and phantom.tumor_fraction take [min, max]");
    g.dims = {dims[0], dims[1], dims[2]};
    g.tumor_count_min = count[0];
    g.tumor_count_max = count[1];
    g.wt_radius_min = radius[0];
    g.wt_radius_max = radius[1];
    g.scale_min = gain[0];
    g.scale_max = gain[1];
    g.tumor_fraction_min = band[0];
    g.tumor_fraction_max = band[1];
  }
  require(c.phantom.format == "nifti1" || c.phantom.format == "blob", "phantom.format must be 'nifti1' or 'blob'");
  require(c.phantom.subjects >= 1, "phantom.subjects must be at least 1");
  require(c.phantom.speck_size >= 1, "phantom.speck_size must be at least 1");
  c.phantom.geometry.validate();

  if (const auto* j = top.child("paths")) {
    Section s(*j, "paths");
    s.read("data_dir", c.paths.data_dir);
    s.read("out_dir", c.paths.out_dir);
    s.finish();
  }
  top.finish();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

inline void write_effective_config(const RunConfig& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "effective_config.json", std::ios::trunc);
  out << to_json(c).dump(2) << '\n';
  if (!out) throw IoError("cannot write " + (dir / "effective_config.json").string());
}

}  // namespace vseg
