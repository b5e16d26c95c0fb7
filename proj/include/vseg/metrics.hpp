#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "vseg/errors.hpp"
#include "vseg/volumes.hpp"

namespace vseg {

/// Reported when exactly one of the two masks is empty; roughly the
/// diagonal of a 240 x 240 x 155 mm volume.
inline constexpr double kEmptyMaskHausdorff = 373.13;

namespace metrics_detail {

inline void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw DimensionMismatch(std::string(what) + ": masks have " + std::to_string(a) + " and " + std::to_string(b) + " voxels");
}

inline std::size_t count(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m) n += v != 0;
  return n;
}

}  // namespace metrics_detail

/// 2|X & Y| / (|X| + |Y|); 1 when both are empty.
inline double dice_score(const Mask& pred, const Mask& gt) {
  metrics_detail::require_same(pred.size(), gt.size(), "dice_score");
  std::size_t inter = 0, sp = 0, sg = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sp += pred[i] != 0;
    sg += gt[i] != 0;
    inter += pred[i] != 0 && gt[i] != 0;
  }
  if (sp + sg == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(sp + sg);
}

/// Mask voxels with at least one face neighbor outside the mask (or outside
/// the grid).
inline std::vector<std::size_t> surface_voxels(const Mask& mask, const Dims& dims) {
  std::vector<std::size_t> out;
  for (std::size_t z = 0; z < dims.d; ++z)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t x = 0; x < dims.w; ++x) {
        const std::size_t i = dims.index(z, y, x);
        if (!mask[i]) continue;
        const bool border = z == 0 || y == 0 || x == 0 || z + 1 == dims.d || y + 1 == dims.h || x + 1 == dims.w;
        if (border || !mask[i - 1] || !mask[i + 1] || !mask[i - dims.w] || !mask[i + dims.w] ||
            !mask[i - dims.h * dims.w] || !mask[i + dims.h * dims.w])
          out.push_back(i);
      }
  return out;
}

/// Linear-interpolated percentile (q in [0, 100]) of unsorted values.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace metrics_detail {

inline std::vector<double> directed_distances(const std::vector<std::size_t>& from, const std::vector<std::size_t>& to,
                                              const Dims& dims, const Spacing& sp) {
  std::vector<std::array<double, 3>> target;
  target.reserve(to.size());
  for (std::size_t t : to)
    target.push_back({static_cast<double>(t / (dims.h * dims.w)) * sp[0], static_cast<double>((t / dims.w) % dims.h) * sp[1],
                      static_cast<double>(t % dims.w) * sp[2]});
  std::vector<double> out;
  out.reserve(from.size());
  for (std::size_t f : from) {
    const double z = static_cast<double>(f / (dims.h * dims.w)) * sp[0], y = static_cast<double>((f / dims.w) % dims.h) * sp[1],
                 x = static_cast<double>(f % dims.w) * sp[2];
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : target) {
      const double dz = z - t[0], dy = y - t[1], dx = x - t[2];
      best = std::min(best, dz * dz + dy * dy + dx * dx);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

}  // namespace metrics_detail

/// Symmetric 95th-percentile Hausdorff distance between mask surfaces, in mm.
inline double hausdorff95(const Mask& pred, const Mask& gt, const Dims& dims, const Spacing& spacing = {1.0, 1.0, 1.0}) {
  metrics_detail::require_same(pred.size(), gt.size(), "hausdorff95");
  metrics_detail::require_same(pred.size(), dims.size(), "hausdorff95");
  const auto np = metrics_detail::count(pred), ng = metrics_detail::count(gt);
  if (np == 0 && ng == 0) return 0.0;
  if (np == 0 || ng == 0) return kEmptyMaskHausdorff;
  const auto sp = surface_voxels(pred, dims), sg = surface_voxels(gt, dims);
  const double d1 = percentile(metrics_detail::directed_distances(sp, sg, dims, spacing), 95.0);
  const double d2 = percentile(metrics_detail::directed_distances(sg, sp, dims, spacing), 95.0);
  return std::max(d1, d2);
}

struct SensSpec {
  double sensitivity = 1.0;
  double specificity = 1.0;
  bool sensitivity_defined = true;  // false when the ground truth is empty
  bool specificity_defined = true;  // false when the ground truth covers every voxel
};

/// TP/(TP+FN) and TN/(TN+FP) over every voxel of the grid. An undefined
/// rate (zero denominator) is reported as 1 and flagged.
inline SensSpec sensitivity_specificity(const Mask& pred, const Mask& gt) {
  metrics_detail::require_same(pred.size(), gt.size(), "sensitivity_specificity");
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    tp += p && g;
    tn += !p && !g;
    fp += p && !g;
    fn += !p && g;
  }
  SensSpec r;
  if (tp + fn > 0) r.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
  else r.sensitivity_defined = false;
  if (tn + fp > 0) r.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
  else r.specificity_defined = false;
  return r;
}

struct FilteredCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::size_t remaining = 0;
  double dice = 1.0;
  bool empty_after_filter = false;
};

/// Confusion counts over voxels whose uncertainty is at most T.
inline FilteredCounts filtered_counts(const Mask& pred, const Mask& gt, const std::vector<float>& unc, double T) {
  metrics_detail::require_same(pred.size(), gt.size(), "filtered_counts");
  metrics_detail::require_same(pred.size(), unc.size(), "filtered_counts");
  FilteredCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (static_cast<double>(unc[i]) > T) continue;
    ++c.remaining;
    const bool p = pred[i] != 0, g = gt[i] != 0;
    c.tp += p && g;
    c.tn += !p && !g;
    c.fp += p && !g;
    c.fn += !p && g;
  }
  c.empty_after_filter = c.remaining == 0;
  const std::size_t denom = 2 * c.tp + c.fp + c.fn;
  c.dice = denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
  return c;
}

inline const std::vector<double>& default_threshold_grid() {
  static const std::vector<double> grid{25.0, 50.0, 75.0, 100.0};
  return grid;
}

struct UncertaintyScore {
  Region region = Region::wt;
  double dice_auc = 0, ftp_ratio_auc = 0, ftn_ratio_auc = 0;
  std::vector<double> grid;
  std::vector<double> dice, ftp, ftn;  // per grid point
  std::vector<bool> excluded;          // grid points with nothing left after filtering
  bool monotone = true;                // FTP and FTN non-decreasing as T falls
};

inline void validate_threshold_grid(const std::vector<double>& grid) {
  if (grid.empty() || grid.back() != 100.0) throw ConfigError("threshold grid must end at 100");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 0.0 || grid[i] > 100.0) throw ConfigError("threshold grid values must lie in [0, 100]");
    if (i && grid[i] <= grid[i - 1]) throw ConfigError("threshold grid must be strictly ascending");
  }
}

/// Trapezoid area under (x, y) divided by the x span, so a constant curve
/// integrates to its value. A single point returns its value.
inline double normalized_trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.empty()) return 0.0;
  if (x.size() == 1) return y[0];
  double area = 0;
  for (std::size_t i = 1; i < x.size(); ++i) area += (x[i] - x[i - 1]) * (y[i] + y[i - 1]) / 2.0;
  const double span = x.back() - x.front();
  return span > 0 ? area / span : y.back();
}

/// Filtered Dice, FTP = (TP_100 - TP_T) / TP_100 and the analogous FTN over
/// the threshold grid, with their normalized trapezoid AUCs over T/100.
inline UncertaintyScore uncertainty_curves(const Mask& pred, const Mask& gt, const std::vector<float>& unc,
                                           const std::vector<double>& grid, Region region = Region::wt) {
  validate_threshold_grid(grid);
  UncertaintyScore s;
  s.region = region;
  s.grid = grid;
  const auto full = filtered_counts(pred, gt, unc, 100.0);
  std::vector<double> xs, dice_used, ftp_used, ftn_used;
  for (double T : grid) {
    const auto c = filtered_counts(pred, gt, unc, T);
    const double ftp = full.tp ? static_cast<double>(full.tp - c.tp) / static_cast<double>(full.tp) : 0.0;
    const double ftn = full.tn ? static_cast<double>(full.tn - c.tn) / static_cast<double>(full.tn) : 0.0;
    s.dice.push_back(c.dice);
    s.ftp.push_back(ftp);
    s.ftn.push_back(ftn);
    s.excluded.push_back(c.empty_after_filter);
    if (c.empty_after_filter) continue;
    xs.push_back(T / 100.0);
    dice_used.push_back(c.dice);
    ftp_used.push_back(ftp);
    ftn_used.push_back(ftn);
  }
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (s.ftp[i - 1] < s.ftp[i] || s.ftn[i - 1] < s.ftn[i]) s.monotone = false;
  s.dice_auc = normalized_trapezoid(xs, dice_used);
  s.ftp_ratio_auc = normalized_trapezoid(xs, ftp_used);
  s.ftn_ratio_auc = normalized_trapezoid(xs, ftn_used);
  return s;
}

struct RegionScore {
  Region region = Region::wt;
  double dice = 0, hd95 = 0, sensitivity = 0, specificity = 0;
  bool sensitivity_defined = true, specificity_defined = true;
};

struct SubjectReport {
  std::string subject_id;
  std::array<RegionScore, 3> regions;
  std::optional<std::array<UncertaintyScore, 3>> uncertainty;
};

/// All region metrics for one subject; `unc` holds the WT, TC, ET maps.
inline SubjectReport evaluate_subject(const LabelVolume& pred, const LabelVolume& gt,
                                      const std::array<std::vector<float>, 3>* unc = nullptr,
                                      const std::vector<double>& grid = default_threshold_grid()) {
  if (!(pred.dims == gt.dims)) throw DimensionMismatch("prediction " + to_string(pred.dims) + " vs ground truth " + to_string(gt.dims));
  SubjectReport r;
  r.subject_id = gt.subject_id.empty() ? pred.subject_id : gt.subject_id;
  if (unc) r.uncertainty.emplace();
  for (std::size_t k = 0; k < 3; ++k) {
    const Region region = kRegions[k];
    const auto p = region_mask(pred, region), g = region_mask(gt, region);
    const auto ss = sensitivity_specificity(p, g);
    r.regions[k] = {region, dice_score(p, g), hausdorff95(p, g, gt.dims, gt.spacing), ss.sensitivity, ss.specificity,
                    ss.sensitivity_defined, ss.specificity_defined};
    if (unc) (*r.uncertainty)[k] = uncertainty_curves(p, g, (*unc)[k], grid, region);
  }
  return r;
}

inline Region region_from_name(const std::string& s) {
  if (s == "WT") return Region::wt;
  if (s == "TC") return Region::tc;
  if (s == "ET") return Region::et;
  throw FormatError("unknown region '" + s + "'");
}

inline nlohmann::ordered_json to_json(const SubjectReport& r) {
  nlohmann::ordered_json j;
  j["subject_id"] = r.subject_id;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& s = r.regions[k];
    nlohmann::ordered_json e{{"dice", s.dice},
                             {"hd95", s.hd95},
                             {"sensitivity", s.sensitivity},
                             {"specificity", s.specificity},
                             {"sensitivity_defined", s.sensitivity_defined},
                             {"specificity_defined", s.specificity_defined}};
    if (r.uncertainty) {
      const auto& u = (*r.uncertainty)[k];
      std::vector<bool> excluded(u.excluded.begin(), u.excluded.end());
      e["uncertainty"] = {{"dice_auc", u.dice_auc}, {"ftp_ratio_auc", u.ftp_ratio_auc}, {"ftn_ratio_auc", u.ftn_ratio_auc},
                          {"grid", u.grid},         {"dice", u.dice},                   {"ftp", u.ftp},
                          {"ftn", u.ftn},           {"excluded", excluded},             {"monotone", u.monotone}};
    }
    j["regions"][region_name(s.region)] = e;
  }
  return j;
}

inline SubjectReport report_from_json(const nlohmann::json& j) {
  SubjectReport r;
  try {
    r.subject_id = j.at("subject_id").get<std::string>();
    const auto& regions = j.at("regions");
    bool has_unc = false;
    std::array<UncertaintyScore, 3> unc;
    for (std::size_t k = 0; k < 3; ++k) {
      const Region region = kRegions[k];
      const auto& e = regions.at(region_name(region));
      r.regions[k] = {region,
                      e.at("dice").get<double>(),
                      e.at("hd95").get<double>(),
                      e.at("sensitivity").get<double>(),
                      e.at("specificity").get<double>(),
                      e.at("sensitivity_defined").get<bool>(),
                      e.at("specificity_defined").get<bool>()};
      if (e.contains("uncertainty")) {
        has_unc = true;
        const auto& u = e.at("uncertainty");
        auto& s = unc[k];
        s.region = region;
        s.dice_auc = u.at("dice_auc").get<double>();
        s.ftp_ratio_auc = u.at("ftp_ratio_auc").get<double>();
        s.ftn_ratio_auc = u.at("ftn_ratio_auc").get<double>();
        s.grid = u.at("grid").get<std::vector<double>>();
        s.dice = u.at("dice").get<std::vector<double>>();
        s.ftp = u.at("ftp").get<std::vector<double>>();
        s.ftn = u.at("ftn").get<std::vector<double>>();
        s.excluded = u.at("excluded").get<std::vector<bool>>();
        s.monotone = u.at("monotone").get<bool>();
      }
    }
    if (has_unc) r.uncertainty = unc;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("subject report: ") + e.what());
  }
  return r;
}

/// Mean of each metric per region across subjects, one CSV row per region.
inline std::string aggregate_csv(const std::vector<SubjectReport>& reports) {
  std::ostringstream os;
  os.precision(10);
  const bool unc = !reports.empty() && std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.uncertainty.has_value(); });
  os << "region,subjects,dice,hd95,sensitivity,specificity";
  if (unc) os << ",dice_auc,ftp_ratio_auc,ftn_ratio_auc";
  os << '\n';
  for (std::size_t k = 0; k < 3; ++k) {
    std::array<double, 7> sum{};
    for (const auto& r : reports) {
      const auto& s = r.regions[k];
      sum[0] += s.dice;
      sum[1] += s.hd95;
      sum[2] += s.sensitivity;
      sum[3] += s.specificity;
      if (unc) {
        sum[4] += (*r.uncertainty)[k].dice_auc;
        sum[5] += (*r.uncertainty)[k].ftp_ratio_auc;
        sum[6] += (*r.uncertainty)[k].ftn_ratio_auc;
      }
    }
    const double n = reports.empty() ? 1.0 : static_cast<double>(reports.size());
    os << region_name(kRegions[k]) << ',' << reports.size();
    for (std::size_t i = 0; i < (unc ? 7u : 4u); ++i) os << ',' << sum[i] / n;
    os << '\n';
  }
  return os.str();
}

}  // namespace vseg
