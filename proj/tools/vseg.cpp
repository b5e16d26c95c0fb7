// vseg: command-line driver for phantom generation, training, prediction,
// uncertainty estimation and evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <regex>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "vseg/overlay.hpp"
#include "vseg/vseg.hpp"

namespace fs = std::filesystem;
using namespace vseg;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

struct Inputs {
  std::string data;
  std::string split = "val";
  std::vector<std::string> images;
  std::string checkpoint;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "JSON run configuration (omitted keys take defaults)");
  cmd->add_option("-o,--out", c.out, "Output directory (overrides paths.out_dir)");
  cmd->add_option("--seed", c.seed, "Overrides the config seed");
  cmd->add_option("--threads", c.threads, "Worker threads (default: config, then VSEG_THREADS, then 1)");
}

void add_inputs(CLI::App* cmd, Inputs& in, bool need_checkpoint) {
  auto* ck = cmd->add_option("--checkpoint", in.checkpoint, "Checkpoint manifest (.json)");
  if (need_checkpoint) ck->required();
  cmd->add_option("--data", in.data, "Dataset directory with dataset.json (overrides paths.data_dir)");
  cmd->add_option("--split", in.split, "Dataset split to process: train, val or all")->check(CLI::IsMember({"train", "val", "all"}));
  cmd->add_option("images", in.images, "Image volumes (.nii or .json); replaces --data/--split");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? parse_run_config(nlohmann::json::object()) : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  if (cfg.threads == 0) cfg.threads = default_threads();
  blas::set_threads(static_cast<int>(cfg.threads));
  return cfg;
}

fs::path out_dir(const Common& c, const RunConfig& cfg) { return c.out.empty() ? fs::path(cfg.paths.out_dir) : fs::path(c.out); }

struct SubjectFile {
  std::string id;
  fs::path image;
  io::Format format;
};

std::vector<SubjectFile> list_subjects(const Inputs& in, const RunConfig& cfg) {
  std::vector<SubjectFile> out;
  if (!in.images.empty()) {
    for (const auto& p : in.images) {
      if (!fs::exists(p)) throw IoError("image not found: " + p);
      std::string id = fs::path(p).stem().string();
      if (id.size() > 4 && id.ends_with("_img")) id.resize(id.size() - 4);
      out.push_back({id, p, io::format_for(p)});
    }
    return out;
  }
  const fs::path dir = in.data.empty() ? fs::path(cfg.paths.data_dir) : fs::path(in.data);
  const auto m = read_manifest(dir / "dataset.json");
  const auto fmt = manifest_format(m);
  const auto& ids = in.split == "train" ? m.train : in.split == "val" ? m.val : m.subjects;
  for (const auto& id : ids) out.push_back({id, image_path(dir, id, fmt), fmt});
  return out;
}

MultiModalVolume load_normalized(const fs::path& path) {
  auto norm = znormalize_nonzero(io::read_image(path));
  for (std::size_t m = 0; m < kModalities; ++m)
    if (norm.status[m] == NormStatus::degenerate)
      std::clog << "warning: " << path.string() << ": modality " << kModalityNames[m] << " is constant inside the brain\n";
  return std::move(norm.volume);
}

LoadedCheckpoint<float> load_model(const Inputs& in) { return load_checkpoint<float>(in.checkpoint); }

TileGrid tiles_for(const RunConfig& cfg, const Dims& dims) {
  return TileGrid::make(dims, cfg.inference.tile_size, cfg.inference.tile_stride);
}

void write_overlay(const MultiModalVolume& img, const LabelVolume& pred, const fs::path& path) {
  write_png(render_overlay(img, pred, busiest_slice(pred)), path);
}

int cmd_phantom(const Common& c, std::optional<std::size_t> subjects, const std::string& format) {
  RunConfig cfg = resolve(c);
  if (subjects) cfg.phantom.subjects = *subjects;
  if (!format.empty()) cfg.phantom.format = format;
  cfg = parse_run_config(to_json(cfg));
  const fs::path dir = c.out.empty() ? fs::path(cfg.paths.data_dir) : fs::path(c.out);
  fs::create_directories(dir);
  auto m = make_manifest(cfg.phantom.subjects, cfg.seed);
  m.format = cfg.phantom.format;
  const auto fmt = cfg.phantom_format();
  parallel_for(m.subjects.size(), cfg.threads, [&](std::size_t i) {
    auto s = generate_subject(cfg.phantom.geometry, phantom_subject_seed(cfg.seed, i), m.subjects[i]);
    if (cfg.phantom.specks) {
      Rng rng = Rng(phantom_subject_seed(cfg.seed, i)).split(7);
      inject_image_specks(s, cfg.phantom.geometry, cfg.phantom.specks, cfg.phantom.speck_size, 4, rng);
    }
    io::write_image(s.image, image_path(dir, m.subjects[i], fmt));
    io::write_labels(s.labels, label_path(dir, m.subjects[i], fmt));
  });
  std::ofstream(dir / "dataset.json") << to_json(m).dump(2) << '\n';
  write_effective_config(cfg, dir);
  std::cout << "wrote " << m.subjects.size() << " subjects to " << dir.string() << '\n';
  return 0;
}

int cmd_train(const Common& c, const std::string& data, std::optional<std::size_t> epochs, std::optional<std::size_t> batches) {
  RunConfig cfg = resolve(c);
  if (epochs) cfg.training.epochs = *epochs;
  if (batches) cfg.training.batches_per_epoch = *batches;
  const fs::path ddir = data.empty() ? fs::path(cfg.paths.data_dir) : fs::path(data);
  const fs::path odir = out_dir(c, cfg);
  const auto m = read_manifest(ddir / "dataset.json");
  const auto fmt = manifest_format(m);
  TrainingData td;
  for (const auto* split : {&m.train, &m.val})
    for (const auto& id : *split) {
      TrainingSubject s(load_normalized(image_path(ddir, id, fmt)), io::read_labels(label_path(ddir, id, fmt)));
      (split == &m.train ? td.train : td.val).push_back(std::move(s));
    }
  write_effective_config(cfg, odir);
  auto opts = cfg.train_options();
  opts.out_dir = odir;
  const auto result = train<float>(td, cfg.model, cfg.patch, cfg.augmentation, cfg.loss, opts, cfg.seed, [](const EpochLog& e) {
    std::cout << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << " lr " << e.lr << '\n'
              << std::flush;
  });
  const CheckpointMeta meta{cfg.seed, result.log.size(), result.steps, result.scheduler.current_lr,
                            result.scheduler.best_val_loss, result.scheduler.epochs_since_improvement};
  save_checkpoint(result.params, meta, odir / "model.json");
  std::cout << "wrote " << (odir / "model.json").string() << '\n';
  return 0;
}

int cmd_predict(const Common& c, const Inputs& in, bool post, bool png) {
  RunConfig cfg = resolve(c);
  if (post) cfg.postprocess.enabled = true;
  const fs::path odir = out_dir(c, cfg);
  const auto subjects = list_subjects(in, cfg);
  const auto model = load_model(in);
  write_effective_config(cfg, odir);
  for (const auto& s : subjects) {
    const auto img = load_normalized(s.image);
    auto pred = decode_labels(predict_volume(model.params, img, tiles_for(cfg, img.dims), {Mode::eval, -1.0, cfg.seed}));
    if (cfg.postprocess.enabled) pred = keep_top_components(pred, cfg.postprocess.filter);
    pred.spacing = img.spacing;
    pred.subject_id = s.id;
    io::write_labels(pred, odir / (s.id + "_pred" + io::extension(s.format)));
    if (png) write_overlay(img, pred, odir / (s.id + "_pred.png"));
    std::cout << s.id << '\n';
  }
  return 0;
}

int cmd_uncertainty(const Common& c, const Inputs& in, const std::string& mode, std::optional<std::size_t> samples,
                    std::optional<double> dropout, bool post) {
  RunConfig cfg = resolve(c);
  if (!mode.empty()) cfg.uncertainty.mode = mode;
  if (samples) cfg.uncertainty.samples = *samples;
  if (dropout) cfg.uncertainty.dropout_p = *dropout;
  if (post) cfg.postprocess.enabled = true;
  cfg = parse_run_config(to_json(cfg));
  blas::set_threads(1);  // parallelism comes from concurrent draws
  const fs::path odir = out_dir(c, cfg);
  const auto subjects = list_subjects(in, cfg);
  const auto model = load_model(in);
  write_effective_config(cfg, odir);
  for (std::size_t k = 0; k < subjects.size(); ++k) {
    const auto& s = subjects[k];
    const auto img = load_normalized(s.image);
    const auto grid = tiles_for(cfg, img.dims);
    const std::uint64_t seed = Rng(cfg.seed).split(k).next_u64();
    const auto stack = cfg.uncertainty.mode == "ttd"
                           ? ttd_sample(model.params, img, cfg.uncertainty.samples, cfg.uncertainty.dropout_p, grid, seed, cfg.threads)
                           : tta_sample(model.params, img, cfg.uncertainty.samples, cfg.tta_policy(), grid, seed, cfg.threads);
    auto pred = mean_prediction(stack);
    if (cfg.postprocess.enabled) pred = keep_top_components(pred, cfg.postprocess.filter);
    pred.spacing = img.spacing;
    pred.subject_id = s.id;
    const std::string ext = io::extension(s.format);
    io::write_labels(pred, odir / (s.id + "_pred" + ext));
    for (Region r : kRegions) {
      const auto map = variance_map(stack, r);
      std::string name = region_name(r);
      for (auto& ch : name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      io::write_scalar({map.dims, map.values, img.spacing, s.id}, odir / (s.id + "_unc_" + name + ext));
    }
    const auto ent = entropy_map(stack);
    io::write_scalar({ent.dims, ent.values, img.spacing, s.id}, odir / (s.id + "_entropy" + ext));
    std::cout << s.id << '\n';
  }
  return 0;
}

std::optional<fs::path> find_volume(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".nii", ".json"}) {
    const auto p = dir / (stem + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

int cmd_evaluate(const Common& c, const std::string& pred_dir, const std::string& gt_dir, const std::string& unc_dir) {
  RunConfig cfg = resolve(c);
  const fs::path odir = out_dir(c, cfg);
  std::map<std::string, fs::path> preds;
  static const std::regex pattern(R"((.+)_pred\.(nii|json))");
  if (!fs::is_directory(pred_dir)) throw IoError("prediction directory not found: " + pred_dir);
  for (const auto& e : fs::directory_iterator(pred_dir)) {
    std::smatch match;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, match, pattern)) preds[match[1].str()] = e.path();
  }
  if (preds.empty()) throw IoError("no *_pred volumes in " + pred_dir);
  write_effective_config(cfg, odir);
  std::vector<SubjectReport> reports;
  for (const auto& [id, path] : preds) {
    const auto gt_path = find_volume(gt_dir, id + "_seg");
    if (!gt_path) throw IoError("no ground truth " + id + "_seg.{nii,json} in " + gt_dir);
    const auto pred = io::read_labels(path);
    auto gt = io::read_labels(*gt_path);
    gt.subject_id = id;
    std::optional<std::array<std::vector<float>, 3>> unc;
    if (!unc_dir.empty()) {
      unc.emplace();
      for (std::size_t k = 0; k < 3; ++k) {
        std::string name = region_name(kRegions[k]);
        for (auto& ch : name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        const auto p = find_volume(unc_dir, id + "_unc_" + name);
        if (!p) throw IoError("no uncertainty map " + id + "_unc_" + name + " in " + unc_dir);
        (*unc)[k] = io::read_scalar(*p).values;
      }
    }
    reports.push_back(evaluate_subject(pred, gt, unc ? &*unc : nullptr, cfg.uncertainty.threshold_grid));
    std::ofstream(odir / (id + "_report.json")) << to_json(reports.back()).dump(2) << '\n';
  }
  const std::string csv = aggregate_csv(reports);
  std::ofstream(odir / "aggregate.csv") << csv;
  std::cout << csv;
  return 0;
}

std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric brain-tumor segmentation with uncertainty maps"};
  app.require_subcommand(1);

  Common common;
  Inputs inputs;
  std::optional<std::size_t> subjects, epochs, batches, samples;
  std::optional<double> dropout;
  std::string format, data, mode, pred_dir, gt_dir, unc_dir;
  bool post = false, png = false;

  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic dataset");
  add_common(phantom, common);
  phantom->add_option("--subjects", subjects, "Number of subjects");
  phantom->add_option("--format", format, "Volume format: nifti1 or blob")->check(CLI::IsMember({"nifti1", "blob"}));

  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset directory");
  add_common(train_cmd, common);
  train_cmd->add_option("--data", data, "Dataset directory (overrides paths.data_dir)");
  train_cmd->add_option("--epochs", epochs, "Overrides training.epochs");
  train_cmd->add_option("--batches", batches, "Overrides training.batches_per_epoch");

  auto* predict = app.add_subcommand("predict", "Segment volumes with a trained model");
  add_common(predict, common);
  add_inputs(predict, inputs, true);
  predict->add_flag("--post", post, "Apply connected-component filtering");
  predict->add_flag("--png", png, "Also write a slice overlay PNG per subject");

  auto* unc = app.add_subcommand("uncertainty", "Prediction plus per-region uncertainty maps");
  add_common(unc, common);
  add_inputs(unc, inputs, true);
  unc->add_option("--mode", mode, "ttd (test-time dropout) or tta (test-time augmentation)")->check(CLI::IsMember({"ttd", "tta"}));
  unc->add_option("--samples", samples, "Overrides uncertainty.samples");
  unc->add_option("--dropout", dropout, "Overrides uncertainty.dropout_p");
  unc->add_flag("--post", post, "Apply connected-component filtering to the mean prediction");

  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against ground truth");
  add_common(evaluate, common);
  evaluate->add_option("--pred", pred_dir, "Directory of <subject>_pred volumes")->required();
  evaluate->add_option("--gt", gt_dir, "Directory of <subject>_seg volumes")->required();
  evaluate->add_option("--unc", unc_dir, "Directory of <subject>_unc_{wt,tc,et} maps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*phantom) return cmd_phantom(common, subjects, format);
    if (*train_cmd) return cmd_train(common, data, epochs, batches);
    if (*predict) return cmd_predict(common, inputs, post, png);
    if (*unc) return cmd_uncertainty(common, inputs, mode, samples, dropout, post);
    if (*evaluate) return cmd_evaluate(common, pred_dir, gt_dir, unc_dir);
  } catch (const Error& e) {
    std::cerr << "error kind=" << e.kind() << " code=" << e.exit_code() << " message=" << one_line(e.what()) << '\n';
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error kind=IoError code=3 message=" << one_line(e.what()) << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error kind=InternalError code=1 message=" << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
