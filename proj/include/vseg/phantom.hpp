#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "vseg/errors.hpp"
#include "vseg/rng.hpp"
#include "vseg/volume_io.hpp"
#include "vseg/volumes.hpp"

namespace vseg {

/// Synthetic multi-modal subject: an ellipsoidal brain with one or two
/// nested ellipsoidal tumors (edema, then necrotic core, then enhancing).
struct PhantomConfig {
  Dims dims{96, 96, 96};
  std::array<double, 3> brain_radius_frac{0.42, 0.45, 0.38};
  int tumor_count_min = 1;
  int tumor_count_max = 2;
  double wt_radius_min = 9.0;
  double wt_radius_max = 13.0;
  double radius_jitter = 0.15;  // per-axis relative variation
  double tc_ratio = 0.65;       // core radius / whole-tumor radius
  double et_ratio = 0.4;        // enhancing radius / whole-tumor radius
  // intensity[modality][class], class order: healthy, edema(2), core(1), enhancing(4)
  std::array<std::array<double, 4>, kModalities> intensity{{
      {1.0, 0.8, 0.5, 0.9},   // T1
      {1.0, 0.9, 0.5, 2.0},   // T1ce
      {1.0, 1.8, 2.2, 1.4},   // T2
      {1.0, 2.0, 1.2, 1.5},   // FLAIR
  }};
  double bias_amplitude = 0.1;  // smooth multiplicative field
  double scale_min = 0.8;       // per-subject, per-modality gain
  double scale_max = 1.2;
  double noise_std = 0.05;
  // tumor voxels / brain voxels; tumor sets outside the band are redrawn
  double tumor_fraction_min = 0.01;
  double tumor_fraction_max = 0.10;

  std::array<double, 3> brain_radii() const {
    return {brain_radius_frac[0] * static_cast<double>(dims.d), brain_radius_frac[1] * static_cast<double>(dims.h),
            brain_radius_frac[2] * static_cast<double>(dims.w)};
  }

  void validate() const {
    if (dims.d < 8 || dims.h < 8 || dims.w < 8) throw ConfigError("phantom dims must be at least 8 per axis");
    for (double f : brain_radius_frac)
      if (!(f > 0.0 && f < 0.5)) throw ConfigError("phantom brain radius fractions must lie in (0, 0.5)");
    if (tumor_count_min < 0 || tumor_count_max < tumor_count_min) throw ConfigError("phantom tumor count range invalid");
    if (!(et_ratio > 0.0 && et_ratio < tc_ratio && tc_ratio < 1.0))
      throw ConfigError("phantom radii ratios must satisfy 0 < et < tc < 1");
    if (!(wt_radius_min > 0.0 && wt_radius_min <= wt_radius_max)) throw ConfigError("phantom tumor radius range invalid");
    const auto br = brain_radii();
    const double min_brain = std::min({br[0], br[1], br[2]});
    if (wt_radius_max * (1.0 + radius_jitter) >= 0.8 * min_brain)
      throw ConfigError("phantom tumors cannot fit inside the brain ellipsoid");
    if (noise_std < 0.0 || scale_min <= 0.0 || scale_max < scale_min) throw ConfigError("phantom intensity settings invalid");
    if (!(tumor_fraction_min >= 0.0 && tumor_fraction_min < tumor_fraction_max && tumor_fraction_max <= 1.0))
      throw ConfigError("phantom tumor fraction band invalid");
  }
};

struct PhantomSubject {
  MultiModalVolume image;
  LabelVolume labels;
};

namespace phantom_detail {

struct Ellipsoid {
  std::array<double, 3> center, radii;
  double level(double z, double y, double x, double scale = 1.0) const {
    const double a = (z - center[0]) / (radii[0] * scale), b = (y - center[1]) / (radii[1] * scale),
                 c = (x - center[2]) / (radii[2] * scale);
    return a * a + b * b + c * c;
  }
};

inline bool within_band(const PhantomConfig& cfg, const Ellipsoid& brain, const std::vector<Ellipsoid>& tumors) {
  std::size_t nb = 0, nt = 0;
  for (std::size_t z = 0; z < cfg.dims.d; ++z)
    for (std::size_t y = 0; y < cfg.dims.h; ++y)
      for (std::size_t x = 0; x < cfg.dims.w; ++x) {
        const double fz = static_cast<double>(z), fy = static_cast<double>(y), fx = static_cast<double>(x);
        if (brain.level(fz, fy, fx) > 1.0) continue;
        ++nb;
        for (const auto& e : tumors)
          if (e.level(fz, fy, fx) <= 1.0) {
            ++nt;
            break;
          }
      }
  const double frac = nb ? static_cast<double>(nt) / static_cast<double>(nb) : 0.0;
  return frac >= cfg.tumor_fraction_min && frac <= cfg.tumor_fraction_max;
}

}  // namespace phantom_detail

inline PhantomSubject generate_subject(const PhantomConfig& cfg, std::uint64_t seed, const std::string& id = "phantom") {
  cfg.validate();
  using phantom_detail::Ellipsoid;
  const Dims& d = cfg.dims;
  Rng rng(seed);
  const std::array<double, 3> mid{(d.d - 1) / 2.0, (d.h - 1) / 2.0, (d.w - 1) / 2.0};
  const Ellipsoid brain{mid, cfg.brain_radii()};

  std::vector<Ellipsoid> tumors;
  bool in_band = false;
  for (int draw = 0; draw < 100 && !in_band; ++draw) {
    tumors.clear();
    const int count = cfg.tumor_count_min +
                      static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.tumor_count_max - cfg.tumor_count_min + 1)));
    for (int t = 0; t < count; ++t) {
      const double r = rng.uniform(cfg.wt_radius_min, cfg.wt_radius_max);
      Ellipsoid e{{}, {}};
      for (auto& ax : e.radii) ax = r * (1.0 + rng.uniform(-cfg.radius_jitter, cfg.radius_jitter));
      const double reach = *std::max_element(e.radii.begin(), e.radii.end());
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        for (int a = 0; a < 3; ++a) e.center[a] = mid[a] + rng.uniform(-1.0, 1.0) * (brain.radii[a] - reach - 2.0);
        // Keep the tumor strictly inside the brain and apart from other tumors.
        bool ok = true;
        for (int corner = 0; corner < 6 && ok; ++corner) {
          auto p = e.center;
          p[corner / 2] += (corner % 2 ? 1.0 : -1.0) * (e.radii[corner / 2] + 1.5);
          ok = brain.level(p[0], p[1], p[2]) < 1.0;
        }
        for (const auto& other : tumors) {
          const double dz = e.center[0] - other.center[0], dy = e.center[1] - other.center[1], dx = e.center[2] - other.center[2];
          const double other_reach = *std::max_element(other.radii.begin(), other.radii.end());
          ok = ok && std::sqrt(dz * dz + dy * dy + dx * dx) > reach + other_reach + 3.0;
        }
        placed = ok;
      }
      if (!placed) throw ConfigError("phantom: could not place tumor " + std::to_string(t) + " inside the brain");
      tumors.push_back(e);
    }
    in_band = phantom_detail::within_band(cfg, brain, tumors);
  }
  if (!in_band) throw ConfigError("phantom: tumor fraction band cannot be met with the configured radii");

  std::array<double, kModalities> gain{};
  for (auto& g : gain) g = rng.uniform(cfg.scale_min, cfg.scale_max);
  std::array<double, 3> bias_phase{};
  for (auto& ph : bias_phase) ph = rng.uniform(0.0, 6.283185307179586);

  PhantomSubject s{MultiModalVolume(d, id), LabelVolume(d, id)};
  Rng noise = rng.split(1);
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) {
        const double fz = static_cast<double>(z), fy = static_cast<double>(y), fx = static_cast<double>(x);
        if (brain.level(fz, fy, fx) > 1.0) continue;
        int cls = 0;
        std::uint8_t label = 0;
        for (const auto& e : tumors) {
          if (e.level(fz, fy, fx, cfg.et_ratio) <= 1.0) {
            cls = 3;
            label = 4;
          } else if (e.level(fz, fy, fx, cfg.tc_ratio) <= 1.0 && cls < 2) {
            cls = 2;
            label = 1;
          } else if (e.level(fz, fy, fx) <= 1.0 && cls < 1) {
            cls = 1;
            label = 2;
          }
        }
        const std::size_t i = d.index(z, y, x);
        s.labels.labels[i] = label;
        const double bias = 1.0 + cfg.bias_amplitude * std::sin(fz / static_cast<double>(d.d) * 3.1 + bias_phase[0]) *
                                      std::cos(fy / static_cast<double>(d.h) * 2.7 + bias_phase[1]) *
                                      std::sin(fx / static_cast<double>(d.w) * 2.3 + bias_phase[2]);
        for (std::size_t m = 0; m < kModalities; ++m) {
          const double v = gain[m] * (cfg.intensity[m][static_cast<std::size_t>(cls)] * bias + cfg.noise_std * noise.normal());
          s.image.data[m][i] = static_cast<float>(std::max(v, 0.05));
        }
      }
  s.labels.validate();
  return s;
}

/// Subject ids and the deterministic 80/20 split; the last fifth (rounded)
/// goes to validation.
struct DatasetManifest {
  std::vector<std::string> subjects;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::uint64_t seed = 0;
  std::string format = "nifti1";
};

inline std::string phantom_subject_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "phantom_%03zu", i);
  return buf;
}

inline std::uint64_t phantom_subject_seed(std::uint64_t seed, std::size_t i) { return Rng(seed).split(i).next_u64(); }

inline DatasetManifest make_manifest(std::size_t n, std::uint64_t seed) {
  DatasetManifest m;
  m.seed = seed;
  std::size_t val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
  if (n >= 2 && val == 0) val = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = phantom_subject_id(i);
    m.subjects.push_back(id);
    (i < n - val ? m.train : m.val).push_back(id);
  }
  return m;
}

inline std::vector<PhantomSubject> generate_dataset(const PhantomConfig& cfg, std::size_t n, std::uint64_t seed,
                                                    DatasetManifest* manifest = nullptr) {
  const auto m = make_manifest(n, seed);
  std::vector<PhantomSubject> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_subject(cfg, phantom_subject_seed(seed, i), m.subjects[i]));
  if (manifest) *manifest = m;
  return out;
}

inline nlohmann::ordered_json to_json(const DatasetManifest& m) {
  return {{"format", "vseg-dataset/1"}, {"volume_format", m.format}, {"seed", m.seed},
          {"subjects", m.subjects},     {"train", m.train},           {"val", m.val}};
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset manifest " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    DatasetManifest m;
    m.subjects = j.at("subjects").get<std::vector<std::string>>();
    m.train = j.at("train").get<std::vector<std::string>>();
    m.val = j.at("val").get<std::vector<std::string>>();
    m.seed = j.value("seed", std::uint64_t{0});
    m.format = j.value("volume_format", std::string("nifti1"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline io::Format manifest_format(const DatasetManifest& m) {
  if (m.format == "nifti1") return io::Format::nifti1;
  if (m.format == "blob") return io::Format::blob;
  throw FormatError("unknown volume format '" + m.format + "' in dataset manifest");
}

inline std::filesystem::path image_path(const std::filesystem::path& dir, const std::string& id, io::Format f) {
  return dir / (id + "_img" + io::extension(f));
}
inline std::filesystem::path label_path(const std::filesystem::path& dir, const std::string& id, io::Format f) {
  return dir / (id + "_seg" + io::extension(f));
}

/// Adds `count` cubes of edema label (side `size`) at healthy brain voxels at
/// least `margin` voxels from any tumor voxel or earlier speck (Chebyshev
/// distance).
inline LabelVolume inject_specks(const LabelVolume& labels, const MultiModalVolume& image, std::size_t count,
                                 std::size_t size, std::size_t margin, Rng& rng) {
  LabelVolume out = labels;
  const Dims& d = labels.dims;
  std::vector<std::size_t> tumor;
  for (std::size_t i = 0; i < labels.labels.size(); ++i)
    if (labels.labels[i] != 0) tumor.push_back(i);
  const auto far_from_tumor = [&](std::size_t z, std::size_t y, std::size_t x) {
    for (std::size_t t : tumor) {
      const std::size_t tz = t / (d.h * d.w), ty = (t / d.w) % d.h, tx = t % d.w;
      const auto dist = std::max({z > tz ? z - tz : tz - z, y > ty ? y - ty : ty - y, x > tx ? x - tx : tx - x});
      if (dist < margin + size) return false;
    }
    return true;
  };
  std::size_t placed = 0;
  for (int attempt = 0; attempt < 10000 && placed < count; ++attempt) {
    const std::size_t z = rng.below(d.d - size), y = rng.below(d.h - size), x = rng.below(d.w - size);
    bool inside = true;
    for (std::size_t dz = 0; dz < size && inside; ++dz)
      for (std::size_t dy = 0; dy < size && inside; ++dy)
        for (std::size_t dx = 0; dx < size && inside; ++dx)
          inside = image.data[3][d.index(z + dz, y + dy, x + dx)] != 0.0f && out.labels[d.index(z + dz, y + dy, x + dx)] == 0;
    if (!inside || !far_from_tumor(z, y, x)) continue;
    for (std::size_t dz = 0; dz < size; ++dz)
      for (std::size_t dy = 0; dy < size; ++dy)
        for (std::size_t dx = 0; dx < size; ++dx) {
          out.labels[d.index(z + dz, y + dy, x + dx)] = 2;
          tumor.push_back(d.index(z + dz, y + dy, x + dx));
        }
    ++placed;
  }
  return out;
}

/// Speck lesions in the image itself: every voxel `inject_specks` turns into
/// edema is repainted with the edema intensity of each modality, so a model
/// sees small isolated lesions away from the main tumors.
inline void inject_image_specks(PhantomSubject& s, const PhantomConfig& cfg, std::size_t count, std::size_t size,
                                std::size_t margin, Rng& rng) {
  const auto labels = inject_specks(s.labels, s.image, count, size, margin, rng);
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    if (labels.labels[i] == s.labels.labels[i]) continue;
    for (std::size_t m = 0; m < kModalities; ++m) {
      const double healthy = cfg.intensity[m][0];
      s.image.data[m][i] = static_cast<float>(s.image.data[m][i] / healthy * cfg.intensity[m][1]);
    }
  }
  s.labels = labels;
}

}  // namespace vseg
