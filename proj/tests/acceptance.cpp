// End-to-end acceptance checks. Each group prints one PASS/FAIL line per
// check and exits non-zero if any check failed.
//
//   acceptance <group> [work-dir]
//
// Groups: gradients, metric_oracles, edge_cases, memorization,
// phantom_segmentation, uncertainty, determinism. `uncertainty` loads the
// model that `phantom_segmentation` saved in work-dir.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "support/oracles.hpp"
#include "vseg/vseg.hpp"

using namespace vseg;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << "  " << detail << std::endl;
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string fmt(const char* f, double a, double b, double c) {
  char buf[192];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

using T2 = Tensor<double>;

T2 random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  const std::size_t n = numel(s);
  return T2(std::move(s), oracle::random_values(n, rng, scale), true);
}

// The loss is sum(w_i * f(inputs)_i) with fixed random weights, so every
// output element contributes to the checked gradient.
using Forward = std::function<T2(Tape<double>*)>;

oracle::GradCheck check_case(const Forward& f, const std::vector<T2>& wrt, Rng& rng, bool scalar_output = false) {
  std::vector<double> weights;
  auto scalar = [&](Tape<double>* tape) {
    auto y = f(tape);
    if (scalar_output) return y;
    if (weights.empty()) weights = oracle::random_values(y.numel(), rng);
    return ops::weighted_sum(tape, y, weights);
  };
  Tape<double> tape;
  const auto loss = scalar(&tape);
  backward(loss, tape);
  return oracle::finite_difference([&] { return scalar(nullptr).item(); }, wrt, 1e-3);
}

struct GradSummary {
  double worst = 0;
  std::size_t cases = 0, elements = 0;
  void add(const oracle::GradCheck& g) {
    worst = std::max(worst, g.rel_error);
    ++cases;
    elements += g.checked;
  }
};

void gradient_line(const std::string& op, const GradSummary& s) {
  report(s.cases >= 20 && s.worst <= 1e-3, "gradients/" + op,
         "cases=" + std::to_string(s.cases) + " elements=" + std::to_string(s.elements) +
             fmt(" worst_rel_error=%.3e (limit 1e-3)", s.worst));
}

// ---------------------------------------------------------------------------

void run_gradients() {
  Stopwatch clock;
  const int kCases = 20;
  Rng rng(101);
  {
    GradSummary s;
    for (int c = 0; c < kCases; ++c) {
      const std::size_t N = 1 + rng.below(2), C = 1 + rng.below(3), F = 1 + rng.below(3);
      const std::size_t k = rng.bernoulli(0.5) ? 3 : 1, stride = 1 + rng.below(2);
      auto x = random_tensor({N, C, 3 + rng.below(3), 3 + rng.below(3), 3 + rng.below(3)}, rng);
      auto w = random_tensor({F, C, k, k, k}, rng, 0.5);
      auto b = random_tensor({F}, rng);
      s.add(check_case([&](Tape<double>* t) { return ops::conv3d(t, x, w, b, stride, k / 2); }, {x, w, b}, rng));
    }
    gradient_line("conv3d", s);
  }
  {
    GradSummary s;
    for (int c = 0; c < kCases; ++c) {
      const std::size_t N = 1 + rng.below(2), Cin = 1 + rng.below(3), Cout = 1 + rng.below(3);
      auto x = random_tensor({N, Cin, 2 + rng.below(2), 2 + rng.below(2), 2 + rng.below(2)}, rng);
      auto w = random_tensor({Cin, Cout, 3, 3, 3}, rng, 0.5);
      auto b = random_tensor({Cout}, rng);
      s.add(check_case([&](Tape<double>* t) { return ops::conv3d_transpose(t, x, w, b, 2); }, {x, w, b}, rng));
    }
    gradient_line("conv3d_transpose", s);
  }
  {
    GradSummary s;
    for (int c = 0; c < kCases; ++c) {
      const std::size_t N = 1 + rng.below(2), C = 1 + rng.below(3);
      auto x = random_tensor({N, C, 2 + rng.below(3), 2 + rng.below(3), 2 + rng.below(3)}, rng, 2.0);
      auto g = random_tensor({C}, rng), be = random_tensor({C}, rng);
      s.add(check_case([&](Tape<double>* t) { return ops::instance_norm(t, x, g, be); }, {x, g, be}, rng));
    }
    gradient_line("instance_norm", s);
  }
  {
    GradSummary s;
    for (int c = 0; c < kCases; ++c) {
      auto x = random_tensor({1 + rng.below(2), 1 + rng.below(3), 3, 3, 1 + rng.below(3)}, rng, 2.0);
      s.add(check_case([&](Tape<double>* t) { return ops::elu(t, x); }, {x}, rng));
    }
    gradient_line("elu", s);
  }
  {
    GradSummary s;
    for (int c = 0; c < kCases; ++c) {
      auto x = random_tensor({1 + rng.below(2), 2 + rng.below(3), 2, 3, 2}, rng, 2.0);
      s.add(check_case([&](Tape<double>* t) { return ops::softmax_channels(t, x); }, {x}, rng));
    }
    gradient_line("softmax_channels", s);
  }
  {
    GradSummary s;
    for (int c = 0; c < kCases; ++c) {
      const std::size_t N = 1 + rng.below(2), S = 2;
      T2 p({N, 4, S, S, S}, 0.0, true);
      for (auto& v : p.mutable_values()) v = rng.uniform(0.05, 0.95);
      std::vector<std::uint8_t> labels(N * S * S * S);
      for (auto& l : labels) l = kChannelLabels[rng.below(4)];
      const auto g = one_hot<double>(labels, {S, S, S}, N);
      DiceLossConfig cfg;
      if (c % 2) cfg.channel_mode = ChannelMode::all_channel_mean;
      s.add(check_case([&](Tape<double>* t) { return dice_loss(t, p, g, cfg); }, {p}, rng, true));
    }
    gradient_line("dice_loss", s);
  }
  {
    GradSummary s;
    VNetConfig mc;
    mc.levels = 2;
    mc.base_channels = 2;
    for (int c = 0; c < kCases; ++c) {
      auto params = build<double>(mc, 500 + static_cast<std::uint64_t>(c));
      auto x = random_tensor({1, 4, 8, 8, 8}, rng);
      std::vector<std::uint8_t> labels(512);
      for (auto& l : labels) l = kChannelLabels[rng.below(4)];
      const auto g = one_hot<double>(labels, {8, 8, 8});
      const std::uint64_t dropout_seed = rng.next_u64();
      auto wrt = params.list();
      wrt.push_back(x);
      s.add(check_case(
          [&](Tape<double>* t) {
            Rng dr(dropout_seed);  // same dropout mask on every evaluation
            return dice_loss(t, forward(params, x, Mode::train, dr, t), g, DiceLossConfig{});
          },
          wrt, rng, true));
    }
    gradient_line("micro_vnet", s);
  }
  const double t = clock.seconds();
  report(t < 300, "gradients/time", fmt("%.1f s (limit 300 s)", t));
}

// ---------------------------------------------------------------------------

void run_metric_oracles() {
  Stopwatch clock;
  Rng rng(202);
  const Dims d{6, 6, 6};
  std::size_t dice_mismatch = 0;
  double worst_hd = 0;
  for (int c = 0; c < 200; ++c) {
    Mask a(d.size()), b(d.size());
    const double pa = rng.uniform(0.0, 0.7), pb = rng.uniform(0.0, 0.7);
    for (auto& v : a) v = rng.bernoulli(pa);
    for (auto& v : b) v = rng.bernoulli(pb);
    if (c == 0) std::fill(a.begin(), a.end(), 0);  // include the empty-mask conventions
    if (c == 1) std::fill(b.begin(), b.end(), 0);
    if (c == 2) a = b;
    if (dice_score(a, b) != oracle::dice(a, b)) ++dice_mismatch;
    worst_hd = std::max(worst_hd, std::abs(hausdorff95(a, b, d) - oracle::hd95(a, b, 6, 6, 6)));
  }
  report(dice_mismatch == 0, "metric_oracles/dice_exact", "pairs=200 mismatches=" + std::to_string(dice_mismatch));
  report(worst_hd <= 1e-9, "metric_oracles/hd95", fmt("pairs=200 worst_abs_diff=%.3e mm (limit 1e-9)", worst_hd));

  SampleStack var{Dims{1, 1, 1}, {}, std::vector<double>(4, 0.0)};
  for (int b = 0; b < 50; ++b) var.label_samples.push_back({static_cast<std::uint8_t>(b < 25 ? 2 : 0)});
  const double v = variance_map(var, Region::wt).values[0];
  report(std::abs(v - 100.0) <= 1e-9, "metric_oracles/variance_half_split", fmt("value=%.12f (expect 100)", v));
  const double h = entropy_map(var).values[0];
  report(std::abs(h - 50.0) <= 1e-9, "metric_oracles/entropy_two_labels", fmt("value=%.12f (expect 50)", h));
  const double t = clock.seconds();
  report(t < 120, "metric_oracles/time", fmt("%.1f s (limit 120 s)", t));
}

// ---------------------------------------------------------------------------

void run_edge_cases() {
  LabelVolume gt(Dims{8, 8, 8}, "edge"), pred(Dims{8, 8, 8}, "edge");
  pred.labels[pred.dims.index(3, 3, 3)] = 2;
  pred.labels[pred.dims.index(3, 3, 4)] = 1;
  const auto r = evaluate_subject(pred, gt);
  report(r.regions[0].dice == 0.0, "edge_cases/empty_gt_dice", fmt("dice=%.6f (expect 0)", r.regions[0].dice));
  report(r.regions[0].hd95 == 373.13, "edge_cases/empty_gt_hd95", fmt("hd95=%.2f (expect 373.13)", r.regions[0].hd95));

  Rng rng(303);
  Mask p(512), g(512);
  std::vector<float> unc(512);
  for (std::size_t i = 0; i < 512; ++i) {
    p[i] = rng.bernoulli(0.4);
    g[i] = rng.bernoulli(0.4);
    unc[i] = static_cast<float>(rng.uniform(0, 100));
  }
  const auto curves = uncertainty_curves(p, g, unc, default_threshold_grid());
  report(curves.ftp.back() == 0.0 && curves.ftn.back() == 0.0, "edge_cases/ftp_at_100",
         fmt("FTP(100)=%.3f FTN(100)=%.3f (expect 0)", curves.ftp.back(), curves.ftn.back()));

  const auto eff = to_json(parse_run_config(nlohmann::json::object()));
  const std::map<std::string, std::pair<nlohmann::ordered_json, nlohmann::ordered_json>> expect{
      {"patch.size", {eff["patch"]["size"], 64}},
      {"patch.batch", {eff["patch"]["batch"], 8}},
      {"optimizer.lr", {eff["optimizer"]["lr"], 1e-2}},
      {"optimizer.momentum", {eff["optimizer"]["momentum"], 0.99}},
      {"scheduler.factor", {eff["scheduler"]["factor"], 0.1}},
      {"scheduler.patience", {eff["scheduler"]["patience"], 10}},
      {"uncertainty.samples", {eff["uncertainty"]["samples"], 50}},
      {"model.dropout_p", {eff["model"]["dropout_p"], 0.5}},
  };
  std::ostringstream os;
  bool ok = true;
  for (const auto& [k, v] : expect) {
    os << k << "=" << v.first.dump() << " ";
    ok = ok && v.first.dump() == v.second.dump();
  }
  report(ok, "edge_cases/default_effective_config", os.str());
}

// ---------------------------------------------------------------------------

void run_memorization() {
  Stopwatch clock;
  PhantomConfig pc;
  const auto s = generate_subject(pc, 11, "memo");
  const auto img = znormalize_nonzero(s.image).volume;
  // window centred on the enhancing-core centroid, so all classes appear
  double c[3] = {0, 0, 0};
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.labels.labels.size(); ++i)
    if (s.labels.labels[i] == 4) {
      const auto v = voxel_of(s.labels.dims, i);
      c[0] += static_cast<double>(v.z);
      c[1] += static_cast<double>(v.y);
      c[2] += static_cast<double>(v.x);
      ++n;
    }
  const std::size_t size = 16;
  Patch patch;
  patch.size = size;
  std::array<std::ptrdiff_t, 3> start{};
  for (int a = 0; a < 3; ++a) start[a] = static_cast<std::ptrdiff_t>(c[a] / static_cast<double>(n)) - 8;
  extract_window(img, &s.labels, start, size, patch.image, &patch.labels);

  VNetConfig mc;
  mc.levels = 2;
  mc.base_channels = 2;
  mc.dropout_sites = DropoutSites::none;
  auto params = build<float>(mc, 3);
  const auto [x, target] = make_batch<float>({patch});
  SgdMomentum<float> opt(params.list(), 1e-2, 0.99);
  Rng rng(1);
  double last = 1;
  for (int step = 0; step < 500; ++step) last = train_step(params, opt, x, target, DiceLossConfig{}, rng);
  const double final_loss = evaluate_loss(params, x, target, DiceLossConfig{});
  report(final_loss < 0.05, "memorization/dice_loss",
         fmt("final=%.5f last_step=%.5f after 500 steps (limit 0.05)", final_loss, last));
  const double t = clock.seconds();
  report(t < 600, "memorization/time", fmt("%.1f s (limit 600 s)", t));
}

// ---------------------------------------------------------------------------

struct PhantomSetup {
  PhantomConfig geometry;
  VNetConfig model;
  PatchSpec patch;
  TrainOptions options;
  std::uint64_t data_seed = 2020, train_seed = 1;
  std::size_t tile = 32, stride = 16;
};

PhantomSetup phantom_setup() {
  PhantomSetup s;
  s.model.levels = 3;
  s.model.base_channels = 8;
  s.model.convs_per_level = {1, 2, 3};
  s.model.dropout_sites = DropoutSites::decoder_blocks;
  s.patch.size = 32;
  s.patch.batch = 4;
  s.options.epochs = 30;
  s.options.batches_per_epoch = 25;
  s.options.val_batches = 4;
  return s;
}

TrainingData phantom_data(const PhantomSetup& s) {
  DatasetManifest m;
  auto subjects = generate_dataset(s.geometry, 20, s.data_seed, &m);
  TrainingData td;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const bool val = std::find(m.val.begin(), m.val.end(), subjects[i].labels.subject_id) != m.val.end();
    TrainingSubject t(znormalize_nonzero(subjects[i].image).volume, subjects[i].labels);
    (val ? td.val : td.train).push_back(std::move(t));
  }
  return td;
}

void run_phantom_segmentation(const fs::path& work) {
  Stopwatch clock;
  const auto setup = phantom_setup();
  const auto data = phantom_data(setup);
  report(data.train.size() == 16 && data.val.size() == 4, "phantom_segmentation/split",
         "train=" + std::to_string(data.train.size()) + " val=" + std::to_string(data.val.size()));
  const auto result = train<float>(data, setup.model, setup.patch, AugmentationPolicy{}, DiceLossConfig{}, setup.options,
                                   setup.train_seed, [](const EpochLog& e) {
                                     std::cout << "  epoch " << e.epoch << fmt(" train=%.4f val=%.4f", e.train_loss, e.val_loss)
                                               << fmt(" lr=%.0e t=%.0fs", e.lr, e.wall_time) << std::endl;
                                   });
  fs::create_directories(work);
  save_checkpoint(result.params, CheckpointMeta{setup.train_seed, setup.options.epochs, result.steps,
                                                result.scheduler.current_lr, result.scheduler.best_val_loss,
                                                result.scheduler.epochs_since_improvement},
                  work / "phantom_model.json");

  std::array<double, 3> mean{};
  double raw_specked = 0, post_specked = 0;
  Rng speck_rng(404);
  for (const auto& s : data.val) {
    const auto pred = decode_labels(predict_volume(result.params, s.image, TileGrid::make(s.image.dims, setup.tile, setup.stride)));
    const auto rep = evaluate_subject(pred, s.labels);
    std::cout << "  " << s.labels.subject_id
              << fmt(" WT=%.4f TC=%.4f ET=%.4f", rep.regions[0].dice, rep.regions[1].dice, rep.regions[2].dice) << std::endl;
    for (int k = 0; k < 3; ++k) mean[static_cast<std::size_t>(k)] += rep.regions[static_cast<std::size_t>(k)].dice / 4.0;
    const auto specked = inject_specks(pred, s.image, 5, 3, 4, speck_rng);
    const auto gt_wt = region_mask(s.labels, Region::wt);
    raw_specked += dice_score(region_mask(specked, Region::wt), gt_wt) / 4.0;
    post_specked += dice_score(region_mask(keep_top_components(specked, {}), Region::wt), gt_wt) / 4.0;
  }
  report(mean[0] >= 0.85, "phantom_segmentation/wt_dice", fmt("mean=%.4f (limit 0.85)", mean[0]));
  report(mean[1] >= 0.75, "phantom_segmentation/tc_dice", fmt("mean=%.4f (limit 0.75)", mean[1]));
  report(mean[2] >= 0.70, "phantom_segmentation/et_dice", fmt("mean=%.4f (limit 0.70)", mean[2]));
  report(post_specked >= raw_specked, "phantom_segmentation/postprocess_with_specks",
         fmt("wt_dice raw=%.4f filtered=%.4f", raw_specked, post_specked));
  const double t = clock.seconds();
  report(t < 2700, "phantom_segmentation/time", fmt("%.0f s (limit 2700 s)", t));
}

// ---------------------------------------------------------------------------

void run_uncertainty(const fs::path& work) {
  Stopwatch clock;
  const auto setup = phantom_setup();
  const auto model_path = work / "phantom_model.json";
  if (!fs::exists(model_path)) {
    report(false, "uncertainty/model", "missing " + model_path.string() + " (run phantom_segmentation first)");
    return;
  }
  const auto params = load_checkpoint<float>(model_path).params;
  const auto data = phantom_data(setup);
  // stride equal to the tile size keeps 50 whole-volume draws affordable
  const auto grid = TileGrid::make(data.val[0].image.dims, setup.tile, setup.tile);

  {
    const auto stack = ttd_sample(params, data.val[0].image, 3, 0.0, grid, 7);
    float worst = 0;
    for (Region r : kRegions)
      for (float v : variance_map(stack, r).values) worst = std::max(worst, v);
    for (float v : entropy_map(stack).values) worst = std::max(worst, v);
    report(worst == 0.0f, "uncertainty/zero_rate_maps", fmt("max map value=%.3g (expect 0)", worst));
  }

  // pooled over two validation subjects
  std::array<double, 4> wrong_sum{}, right_sum{}, wrong_n{}, right_n{};
  bool monotone = true;
  std::size_t curves = 0;
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& s = data.val[k];
    const auto stack = ttd_sample(params, s.image, 50, 0.5, grid, 1000 + k);
    const auto pred = mean_prediction(stack);
    for (std::size_t r = 0; r < 3; ++r) {
      const auto map = variance_map(stack, kRegions[r]);
      const auto pm = region_mask(pred, kRegions[r]), gm = region_mask(s.labels, kRegions[r]);
      for (std::size_t i = 0; i < pm.size(); ++i) {
        if (pm[i] != gm[i]) {
          wrong_sum[r] += map.values[i];
          wrong_n[r] += 1;
        } else {
          right_sum[r] += map.values[i];
          right_n[r] += 1;
        }
      }
      std::vector<double> fine;
      for (int t = 0; t <= 100; t += 5) fine.push_back(t);
      for (const auto& g : {default_threshold_grid(), fine}) {
        monotone = monotone && uncertainty_curves(pm, gm, map.values, g, kRegions[r]).monotone;
        ++curves;
      }
    }
    const auto ent = entropy_map(stack);
    for (std::size_t i = 0; i < ent.values.size(); ++i) {
      if (pred.labels[i] != s.labels.labels[i]) {
        wrong_sum[3] += ent.values[i];
        wrong_n[3] += 1;
      } else {
        right_sum[3] += ent.values[i];
        right_n[3] += 1;
      }
    }
  }
  const char* names[4] = {"wt_variance", "tc_variance", "et_variance", "entropy"};
  for (std::size_t r = 0; r < 4; ++r) {
    const double w = wrong_n[r] > 0 ? wrong_sum[r] / wrong_n[r] : 0.0, c = right_sum[r] / std::max(right_n[r], 1.0);
    report(wrong_n[r] > 0 && w > c, std::string("uncertainty/misclassified_exceeds_correct/") + names[r],
           fmt("misclassified=%.3f correct=%.4f voxels_misclassified=%.0f", w, c, wrong_n[r]));
  }
  report(monotone, "uncertainty/ftp_ftn_monotone", "curves=" + std::to_string(curves));
  std::cout << fmt("  elapsed %.0f s", clock.seconds()) << std::endl;
}

// ---------------------------------------------------------------------------

std::vector<char> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Files under `a` (recursively) whose bytes differ from their twin under `b`.
std::size_t differing_files(const fs::path& a, const fs::path& b, std::size_t& compared) {
  std::size_t diff = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "train_log.jsonl") continue;  // log carries wall time
    const auto twin = b / fs::relative(e.path(), a);
    ++compared;
    if (!fs::exists(twin) || bytes_of(e.path()) != bytes_of(twin)) ++diff;
  }
  return diff;
}

void determinism_run(const fs::path& dir, std::size_t threads) {
  fs::remove_all(dir);
  PhantomConfig pc;
  pc.dims = {32, 32, 32};
  pc.wt_radius_min = 3;
  pc.wt_radius_max = 5;
  DatasetManifest m;
  auto subjects = generate_dataset(pc, 3, 9, &m);
  TrainingData td;
  for (auto& s : subjects) {
    const bool val = s.labels.subject_id == m.val.front();
    TrainingSubject t(znormalize_nonzero(s.image).volume, s.labels);
    (val ? td.val : td.train).push_back(std::move(t));
  }
  VNetConfig mc;
  mc.levels = 2;
  mc.base_channels = 4;
  TrainOptions o;
  o.epochs = 2;
  o.batches_per_epoch = 3;
  o.val_batches = 1;
  o.out_dir = dir / "train";
  const auto r = train<float>(td, mc, PatchSpec{16, 2, 0.5}, AugmentationPolicy{}, DiceLossConfig{}, o, 42);
  const auto& v = td.val.front();
  const auto grid = TileGrid::make(v.image.dims, 16, 8);
  const auto probs = predict_volume(r.params, v.image, grid);
  fs::create_directories(dir / "out");
  io::write_labels(decode_labels(probs), dir / "out" / "pred.nii");
  io::write_raw(io::RawVolume{v.image.dims, 4, io::DType::float32, v.image.spacing, "probs", probs.probs},
                dir / "out" / "probs.json");
  const auto stack = ttd_sample(r.params, v.image, 4, 0.5, grid, 5, threads);
  for (Region reg : kRegions)
    io::write_scalar(ScalarVolume{v.image.dims, variance_map(stack, reg).values, v.image.spacing, region_name(reg)},
                     dir / "out" / (std::string("unc_") + region_name(reg) + ".nii"));
  io::write_scalar(ScalarVolume{v.image.dims, entropy_map(stack).values, v.image.spacing, "entropy"},
                   dir / "out" / "entropy.nii");
  const auto tta = tta_sample(r.params, v.image, 3, AugmentationPolicy{0.5, 0.1, 0.9, 1.1, 0.1}, grid, 6, threads);
  io::write_scalar(ScalarVolume{v.image.dims, variance_map(tta, Region::wt).values, v.image.spacing, "tta"},
                   dir / "out" / "tta_wt.nii");
}

void run_determinism(const fs::path& work) {
  const auto a = work / "determinism_a", b = work / "determinism_b";
  determinism_run(a, 1);
  determinism_run(b, 2);
  std::size_t ckpt = 0, outs = 0;
  const auto d1 = differing_files(a / "train", b / "train", ckpt);
  const auto d2 = differing_files(a / "out", b / "out", outs);
  report(ckpt >= 4 && d1 == 0, "determinism/checkpoints",
         std::to_string(ckpt) + " files compared, " + std::to_string(d1) + " differ");
  // pred, probs manifest + payload, three variance maps, entropy, tta
  report(outs == 8 && d2 == 0, "determinism/predictions_and_maps",
         std::to_string(outs) + " files compared, " + std::to_string(d2) + " differ");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <group> [work-dir]\n";
    return 2;
  }
  const std::string group = argv[1];
  const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "vseg_acceptance";
  blas::set_threads(1);
  try {
    if (group == "gradients") run_gradients();
    else if (group == "metric_oracles") run_metric_oracles();
    else if (group == "edge_cases") run_edge_cases();
    else if (group == "memorization") run_memorization();
    else if (group == "phantom_segmentation") run_phantom_segmentation(work);
    else if (group == "uncertainty") run_uncertainty(work);
    else if (group == "determinism") run_determinism(work);
    else {
      std::cerr << "unknown group " << group << "\n";
      return 2;
    }
  } catch (const std::exception& e) {
    report(false, group + "/exception", e.what());
  }
  return failures == 0 ? 0 : 1;
}
