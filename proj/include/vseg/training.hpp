#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "vseg/checkpoint.hpp"
#include "vseg/errors.hpp"
#include "vseg/kernel/optim.hpp"
#include "vseg/losses.hpp"
#include "vseg/sampling.hpp"
#include "vseg/vnet.hpp"
#include "vseg/volumes.hpp"

namespace vseg {

/// Reduce-on-plateau learning-rate state.
struct SchedulerState {
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improvement = 0;
  double current_lr = 1e-2;
  double factor = 0.1;
  std::size_t patience = 10;
  double min_delta = 1e-4;
};

/// An epoch improves iff val_loss < best - min_delta. After `patience`
/// consecutive non-improving epochs the rate is multiplied by `factor` and
/// the counter restarts.
inline SchedulerState scheduler_step(SchedulerState s, double val_loss) {
  if (val_loss < s.best_val_loss - s.min_delta) {
    s.best_val_loss = val_loss;
    s.epochs_since_improvement = 0;
    return s;
  }
  if (++s.epochs_since_improvement >= s.patience) {
    s.current_lr *= s.factor;
    s.epochs_since_improvement = 0;
  }
  return s;
}

/// A subject ready for sampling: normalized image, labels, center index.
struct TrainingSubject {
  MultiModalVolume image;
  LabelVolume labels;
  SubjectIndex index;

  TrainingSubject(MultiModalVolume img, LabelVolume lab)
      : image(std::move(img)), labels(std::move(lab)), index(SubjectIndex::build(image, labels)) {}
};

struct TrainingData {
  std::vector<TrainingSubject> train;
  std::vector<TrainingSubject> val;

  void validate() const {
    if (train.empty()) throw ConfigError("training set is empty");
    for (const auto& a : train)
      for (const auto& b : val)
        if (a.image.subject_id == b.image.subject_id)
          throw ConfigError("subject '" + a.image.subject_id + "' appears in both train and val");
  }
};

struct TrainOptions {
  std::size_t epochs = 1;
  std::size_t batches_per_epoch = 100;
  std::size_t val_batches = 4;
  double lr = 1e-2;
  double momentum = 0.99;
  SchedulerState scheduler{};
  std::size_t memory_budget_bytes = std::size_t{4} << 30;
  std::optional<std::filesystem::path> out_dir;  // checkpoints + log when set
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;
  double wall_time = 0;
};

template <class T>
struct TrainResult {
  ModelParameters<T> params;
  std::vector<EpochLog> log;
  SchedulerState scheduler;
  std::size_t steps = 0;
};

/// Stacks patches into network input [B,4,s,s,s] and one-hot target.
template <class T>
std::pair<Tensor<T>, Tensor<T>> make_batch(const std::vector<Patch>& patches) {
  const std::size_t B = patches.size(), s = patches.front().size, n = s * s * s;
  std::vector<T> x;
  x.reserve(B * kModalities * n);
  std::vector<std::uint8_t> labels;
  labels.reserve(B * n);
  for (const auto& p : patches) {
    x.insert(x.end(), p.image.begin(), p.image.end());
    labels.insert(labels.end(), p.labels.begin(), p.labels.end());
  }
  return {Tensor<T>({B, kModalities, s, s, s}, std::move(x)), one_hot<T>(labels, {s, s, s}, B)};
}

/// One optimizer update on a fixed batch; returns the loss before the step.
template <class T>
double train_step(ModelParameters<T>& params, SgdMomentum<T>& opt, const Tensor<T>& x, const Tensor<T>& target,
                  const DiceLossConfig& loss_cfg, Rng& rng, Mode mode = Mode::train) {
  Tape<T> tape;
  auto probs = forward(params, x, mode, rng, &tape);
  auto loss = total_loss(&tape, probs, target, loss_cfg);
  const double value = loss.item();
  if (!std::isfinite(value)) throw Divergence("training loss is not finite");
  backward(loss, tape);
  opt.step();
  return value;
}

template <class T>
double evaluate_loss(const ModelParameters<T>& params, const Tensor<T>& x, const Tensor<T>& target,
                     const DiceLossConfig& loss_cfg) {
  Rng unused(0);
  auto probs = forward(params, x, Mode::eval, unused);
  return total_loss<T>(nullptr, probs, target, loss_cfg).item();
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::size_t epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%03zu.json", epoch);
  return out_dir / "checkpoints" / name;
}

namespace training_detail {

inline std::vector<Patch> draw_batch(const std::vector<TrainingSubject>& subjects, const PatchSpec& spec,
                                     const AugmentationPolicy* aug, Rng rng) {
  std::vector<Patch> patches;
  patches.reserve(spec.batch);
  for (std::size_t b = 0; b < spec.batch; ++b) {
    Rng r = rng.split(b);
    const auto& subj = subjects[r.below(subjects.size())];
    Patch p = sample_patch(subj.image, subj.labels, subj.index, spec, r);
    if (aug) {
      const Dims d{p.size, p.size, p.size};
      const auto rec = augment(p.image, d, *aug, r);
      apply_flips(p.labels, d, rec.flip);
    }
    patches.push_back(std::move(p));
  }
  return patches;
}

}  // namespace training_detail

/// Patch-based training with momentum SGD and plateau scheduling. Every
/// random draw derives from `seed`, so runs are reproducible.
template <class T>
TrainResult<T> train(const TrainingData& data, const VNetConfig& model_cfg, const PatchSpec& patch,
                     const AugmentationPolicy& aug, const DiceLossConfig& loss_cfg, const TrainOptions& opts,
                     std::uint64_t seed, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  data.validate();
  model_cfg.validate();
  model_cfg.require_patch(patch.size);
  aug.validate();
  loss_cfg.validate();
  const std::size_t need = estimate_training_bytes(model_cfg, patch.size, patch.batch, sizeof(T));
  if (need > opts.memory_budget_bytes) {
    throw ConfigError("training a batch of " + std::to_string(patch.batch) + " patches of " + std::to_string(patch.size) +
                      "^3 needs about " + std::to_string(need >> 20) + " MiB, over the budget of " +
                      std::to_string(opts.memory_budget_bytes >> 20) + " MiB");
  }

  const Rng root(seed);
  TrainResult<T> result{build<T>(model_cfg, seed), {}, opts.scheduler, 0};
  result.scheduler.current_lr = opts.lr;
  SgdMomentum<T> opt(result.params.list(), opts.lr, opts.momentum);

  const auto& val_subjects = data.val.empty() ? data.train : data.val;
  std::vector<std::pair<Tensor<T>, Tensor<T>>> val_batches;
  for (std::size_t v = 0; v < opts.val_batches; ++v)
    val_batches.push_back(make_batch<T>(training_detail::draw_batch(val_subjects, patch, nullptr, root.split(3).split(v))));

  std::ofstream log_file;
  if (opts.out_dir) {
    std::filesystem::create_directories(*opts.out_dir / "checkpoints");
    log_file.open(*opts.out_dir / "train_log.jsonl", std::ios::trunc);
    if (!log_file) throw IoError("cannot write " + (*opts.out_dir / "train_log.jsonl").string());
  }
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    opt.set_lr(result.scheduler.current_lr);
    double train_sum = 0;
    for (std::size_t b = 0; b < opts.batches_per_epoch; ++b, ++result.steps) {
      const auto patches = training_detail::draw_batch(data.train, patch, &aug, root.split(2).split(result.steps));
      const auto [x, target] = make_batch<T>(patches);
      Rng dropout_rng = root.split(4).split(result.steps);
      train_sum += train_step(result.params, opt, x, target, loss_cfg, dropout_rng);
    }
    double val_sum = 0;
    for (const auto& [x, target] : val_batches) val_sum += evaluate_loss(result.params, x, target, loss_cfg);
    const double val_loss = val_batches.empty() ? train_sum / static_cast<double>(opts.batches_per_epoch)
                                                : val_sum / static_cast<double>(val_batches.size());
    if (!std::isfinite(val_loss)) throw Divergence("validation loss is not finite at epoch " + std::to_string(epoch));
    EpochLog entry{epoch, train_sum / static_cast<double>(std::max<std::size_t>(opts.batches_per_epoch, 1)), val_loss,
                   result.scheduler.current_lr,
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    result.scheduler = scheduler_step(result.scheduler, val_loss);
    result.log.push_back(entry);
    if (opts.out_dir) {
      const CheckpointMeta meta{seed, epoch, result.steps, result.scheduler.current_lr, result.scheduler.best_val_loss,
                                result.scheduler.epochs_since_improvement};
      save_checkpoint(result.params, meta, checkpoint_path(*opts.out_dir, epoch));
      nlohmann::ordered_json line{{"epoch", entry.epoch},
                                  {"train_loss", entry.train_loss},
                                  {"val_loss", entry.val_loss},
                                  {"lr", entry.lr},
                                  {"wall_time", entry.wall_time}};
      log_file << line.dump() << '\n' << std::flush;
    }
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

}  // namespace vseg
