#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "mugen/errors.hpp"

namespace mugen {

/// Row-major H x W map of doubles.
struct Map2D {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  static Map2D filled(std::size_t h, std::size_t w, double v) { return {h, w, std::vector<double>(h * w, v)}; }

  std::size_t size() const { return values.size(); }
  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
};

/// A soft prediction in [0, 1] and its binary ground truth.
struct MaskPair {
  Map2D pred;
  Map2D gt;
};

struct Confusion {
  double tp = 0, tn = 0, fp = 0, fn = 0;
};

struct PrecisionRecall {
  double precision = 1.0;
  double recall = 1.0;
};

struct SampleMetrics {
  double dice = 0, iou = 0, mae = 0, wfbeta = 0, smeasure = 0, emeasure = 0;
  bool valid = false;  // IoU > 0.5
};

struct MetricReport {
  double mdice = 0, miou = 0, mae = 0, wfbeta = 0, smeasure = 0, emeasure = 0;
  std::size_t n = 0;
};

namespace metrics {

inline constexpr double kThreshold = 0.5;
inline constexpr double kBetaSquared = 0.25;
inline constexpr std::size_t kEmeasureLevels = 256;

inline void require_pair(const Map2D& pred, const Map2D& gt) {
  if (pred.height != gt.height || pred.width != gt.width || pred.size() != gt.size() ||
      pred.size() != pred.height * pred.width) {
    throw ShapeError("metric pair dims differ: " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " vs " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  if (pred.size() == 0) throw ShapeError("metric pair is empty");
}

inline bool fg(double v) { return v > kThreshold; }

/// Pixel counts after binarizing both maps at 0.5.
inline Confusion confusion(const Map2D& pred, const Map2D& gt) {
  require_pair(pred, gt);
  Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool d = fg(pred.values[i]), g = fg(gt.values[i]);
    (d ? (g ? c.tp : c.fp) : (g ? c.fn : c.tn)) += 1.0;
  }
  return c;
}

/// 0/0 resolves to 1 for both ratios.
inline PrecisionRecall precision_recall(const Confusion& c) {
  PrecisionRecall pr;
  if (c.tp + c.fp > 0) pr.precision = c.tp / (c.tp + c.fp);
  if (c.tp + c.fn > 0) pr.recall = c.tp / (c.tp + c.fn);
  return pr;
}

inline double iou(const Map2D& pred, const Map2D& gt) {
  const auto c = confusion(pred, gt);
  const double uni = c.tp + c.fp + c.fn;
  return uni == 0 ? 1.0 : c.tp / uni;
}

inline double dice(const Map2D& pred, const Map2D& gt) {
  const auto c = confusion(pred, gt);
  const double denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2 * c.tp / denom;
}

inline double mae(const Map2D& pred, const Map2D& gt) {
  require_pair(pred, gt);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred.values[i] - gt.values[i]);
  return s / static_cast<double>(pred.size());
}

inline double fbeta(double precision, double recall, double beta2 = kBetaSquared) {
  const double denom = beta2 * precision + recall;
  return denom == 0 ? 0.0 : (1 + beta2) * precision * recall / denom;
}

/// F-beta on soft counts: TP = sum P G, FP = sum P (1 - G), FN = sum (1 - P) G.
inline double weighted_fbeta(const Map2D& pred, const Map2D& gt, double beta2 = kBetaSquared) {
  require_pair(pred, gt);
  Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred.values[i], g = gt.values[i];
    c.tp += p * g;
    c.fp += p * (1 - g);
    c.fn += (1 - p) * g;
  }
  const auto pr = precision_recall(c);
  return fbeta(pr.precision, pr.recall, beta2);
}

namespace detail {

/// 2 x / (x^2 + 1 + 2 sigma) over the selected pixels, with population std.
inline double object_score(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double mean = 0.0;
  for (double v : xs) mean += v;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double v : xs) var += (v - mean) * (v - mean);
  const double sigma = std::sqrt(var / static_cast<double>(xs.size()));
  return 2 * mean / (mean * mean + 1 + 2 * sigma);
}

/// SSIM-style similarity of one rectangular block (sample variances; blocks of one pixel
/// count as zero variance).
inline double block_ssim(const Map2D& pred, const Map2D& gt, std::size_t y0, std::size_t y1, std::size_t x0,
                         std::size_t x1) {
  const double n = static_cast<double>((y1 - y0) * (x1 - x0));
  double mx = 0, my = 0;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      mx += pred.at(y, x);
      my += gt.at(y, x);
    }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      const double dx = pred.at(y, x) - mx, dy = gt.at(y, x) - my;
      sxx += dx * dx;
      syy += dy * dy;
      sxy += dx * dy;
    }
  const double dof = n > 1 ? n - 1 : 1;
  sxx /= dof;
  syy /= dof;
  sxy /= dof;
  const double a = 4 * mx * my * sxy;
  const double b = (mx * mx + my * my) * (sxx + syy);
  if (a != 0) return a / b;
  return b == 0 ? 1.0 : 0.0;
}

/// Round half to even, matching numpy.round.
inline std::size_t round_even(double v) { return static_cast<std::size_t>(std::nearbyint(v)); }

}  // namespace detail

/// Object-level term: 0.5 S_FG + 0.5 S_BG, where S_FG scores P over the foreground and
/// S_BG scores 1 - P over the background.
inline double s_object(const Map2D& pred, const Map2D& gt) {
  std::vector<double> f, b;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (fg(gt.values[i])) {
      f.push_back(pred.values[i]);
    } else {
      b.push_back(1 - pred.values[i]);
    }
  }
  return 0.5 * detail::object_score(f) + 0.5 * detail::object_score(b);
}

/// Region-level term: split at the (rounded) foreground centroid into four blocks and
/// area-weight their SSIM-style similarities.
inline double s_region(const Map2D& pred, const Map2D& gt) {
  const std::size_t h = gt.height, w = gt.width;
  double sy = 0, sx = 0, count = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (fg(gt.at(y, x))) {
        sy += static_cast<double>(y);
        sx += static_cast<double>(x);
        count += 1;
      }
    }
  std::size_t cx, cy;
  if (count == 0) {
    cx = detail::round_even(static_cast<double>(w) / 2);
    cy = detail::round_even(static_cast<double>(h) / 2);
  } else {
    cx = std::min(w, detail::round_even(sx / count) + 1);
    cy = std::min(h, detail::round_even(sy / count) + 1);
  }
  const double area = static_cast<double>(h * w);
  const std::array<std::array<std::size_t, 4>, 4> blocks{{{0, cy, 0, cx}, {0, cy, cx, w}, {cy, h, 0, cx}, {cy, h, cx, w}}};
  double score = 0.0;
  for (const auto& [y0, y1, x0, x1] : blocks) {
    const double weight = static_cast<double>((y1 - y0) * (x1 - x0)) / area;
    if (weight > 0) score += weight * detail::block_ssim(pred, gt, y0, y1, x0, x1);
  }
  return score;
}

/// Structure measure 0.5 S_object + 0.5 S_region, clamped at 0. An all-background mask
/// scores only the background term over the whole image, an all-foreground mask only the
/// foreground term.
inline double s_measure(const Map2D& pred, const Map2D& gt) {
  require_pair(pred, gt);
  std::size_t fg_count = 0;
  for (double g : gt.values) fg_count += fg(g) ? 1 : 0;
  if (fg_count == 0) {
    std::vector<double> b(pred.size());
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = 1 - pred.values[i];
    return detail::object_score(b);
  }
  if (fg_count == gt.size()) return detail::object_score(pred.values);
  return std::max(0.0, 0.5 * s_object(pred, gt) + 0.5 * s_region(pred, gt));
}

/// Enhanced-alignment measure. For each threshold tau_i = i/256 (i = 0..255) the map is
/// binarized as P > tau_i; with mean-centred maps phi, the per-pixel alignment is
/// xi = 2 phi_G phi_F / (phi_G^2 + phi_F^2) (0/0 -> 1) and the enhanced score is
/// (1 + xi)^2 / 4. Pixels are averaged per threshold, thresholds are averaged last.
///
/// Since both binarized maps take two values, each threshold reduces to four pixel classes
/// whose counts come from a cumulative histogram of ceil(256 P).
inline double e_measure(const Map2D& pred, const Map2D& gt) {
  require_pair(pred, gt);
  constexpr std::size_t L = kEmeasureLevels;
  std::array<double, L + 1> hist_fg{}, hist_bg{};
  double g_count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double scaled = std::ceil(pred.values[i] * static_cast<double>(L));
    const std::size_t k = static_cast<std::size_t>(std::clamp(scaled, 0.0, static_cast<double>(L)));
    if (fg(gt.values[i])) {
      hist_fg[k] += 1;
      g_count += 1;
    } else {
      hist_bg[k] += 1;
    }
  }
  const double n = static_cast<double>(pred.size());
  const double mu_g = g_count / n;
  auto xi = [](double a, double b) {
    const double den = a * a + b * b;
    return den == 0 ? 1.0 : 2 * a * b / den;
  };
  auto enhanced = [&](double a, double b) {
    const double v = 1 + xi(a, b);
    return v * v / 4;
  };
  // Pixels with k > i are foreground at threshold i; walk i downward accumulating them.
  double above_fg = hist_fg[L], above_bg = hist_bg[L];
  std::array<double, L> scores{};
  for (std::size_t i = L; i-- > 0;) {
    const double tp = above_fg, fp = above_bg;
    const double fn = g_count - tp, tn = (n - g_count) - fp;
    const double mu_f = (tp + fp) / n;
    const double s = tp * enhanced(1 - mu_g, 1 - mu_f) + fn * enhanced(1 - mu_g, -mu_f) +
                     fp * enhanced(-mu_g, 1 - mu_f) + tn * enhanced(-mu_g, -mu_f);
    scores[i] = s / n;
    above_fg += hist_fg[i];
    above_bg += hist_bg[i];
  }
  double total = 0;
  for (double s : scores) total += s;
  return total / static_cast<double>(L);
}

inline SampleMetrics evaluate_pair(const MaskPair& p) {
  require_pair(p.pred, p.gt);
  SampleMetrics m;
  m.iou = iou(p.pred, p.gt);
  m.dice = dice(p.pred, p.gt);
  m.mae = mae(p.pred, p.gt);
  m.wfbeta = weighted_fbeta(p.pred, p.gt);
  m.smeasure = s_measure(p.pred, p.gt);
  m.emeasure = e_measure(p.pred, p.gt);
  m.valid = m.iou > 0.5;
  return m;
}

inline MetricReport summarize(const std::vector<SampleMetrics>& samples) {
  if (samples.empty()) throw DataError("cannot summarize metrics over an empty dataset");
  MetricReport r;
  for (const auto& s : samples) {
    r.mdice += s.dice;
    r.miou += s.iou;
    r.mae += s.mae;
    r.wfbeta += s.wfbeta;
    r.smeasure += s.smeasure;
    r.emeasure += s.emeasure;
  }
  r.n = samples.size();
  const double inv = 1.0 / static_cast<double>(r.n);
  for (double* v : {&r.mdice, &r.miou, &r.mae, &r.wfbeta, &r.smeasure, &r.emeasure}) *v *= inv;
  return r;
}

inline MetricReport evaluate(const std::vector<MaskPair>& pairs) {
  std::vector<SampleMetrics> samples;
  samples.reserve(pairs.size());
  for (const auto& p : pairs) samples.push_back(evaluate_pair(p));
  return summarize(samples);
}

template <typename F>
double mean_over(const std::vector<MaskPair>& pairs, F f) {
  if (pairs.empty()) throw DataError("metric over an empty set of pairs");
  double s = 0;
  for (const auto& p : pairs) s += f(p.pred, p.gt);
  return s / static_cast<double>(pairs.size());
}

inline double miou(const std::vector<MaskPair>& pairs) { return mean_over(pairs, iou); }
inline double mdice(const std::vector<MaskPair>& pairs) { return mean_over(pairs, dice); }
inline double mae(const std::vector<MaskPair>& pairs) {
  return mean_over(pairs, [](const Map2D& a, const Map2D& b) { return mae(a, b); });
}

inline std::string csv_header() { return "dataset,model,n,mDice,mIoU,MAE,wFbeta,Smeasure,Emeasure"; }

inline std::string csv_row(const std::string& dataset, const std::string& model, const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", r.n, r.mdice, r.miou, r.mae, r.wfbeta,
                r.smeasure, r.emeasure);
  return dataset + "," + model + "," + buf;
}

}  // namespace metrics
}  // namespace mugen
