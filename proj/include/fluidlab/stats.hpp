#pragma once

// Rollout recovery statistics and the exponential-decay null model.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "fluidlab/field.hpp"

namespace fluidlab {

struct CurveRecovery {
  std::size_t min_step = 0;  // index into the curve
  double min_value = 0.0;
  double magnitude = 0.0;    // max after the minimum, minus the minimum
};

/// The first minimum and the largest rebound after it (0 when the minimum is last).
inline CurveRecovery curve_recovery(const std::vector<double>& curve) {
  require(curve.size() >= 3, "recovery_stats: curves need at least 3 steps");
  const auto it = std::min_element(curve.begin(), curve.end());
  CurveRecovery r;
  r.min_step = static_cast<std::size_t>(it - curve.begin());
  r.min_value = *it;
  if (it + 1 != curve.end()) r.magnitude = *std::max_element(it + 1, curve.end()) - *it;
  return r;
}

struct SampleSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // n − 1 denominator
  double t = 0.0;
  double cohen_d = 0.0;
  std::optional<double> p_value;  // two-sided, one-sample t against 0
};

inline SampleSummary summarize(const std::vector<double>& xs) {
  SampleSummary s;
  s.n = xs.size();
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(s.n);
  if (s.n < 2) return s;
  // A constant sample has zero spread even when the mean rounds.
  if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs[0]; })) {
    s.mean = xs[0];
    return s;
  }
  double ss = 0.0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  if (s.std > 0.0) {
    s.t = s.mean / (s.std / std::sqrt(static_cast<double>(s.n)));
    s.cohen_d = s.mean / s.std;
    const boost::math::students_t dist(static_cast<double>(s.n - 1));
    s.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(s.t)));
  }
  return s;
}

struct RecoveryReport {
  std::vector<CurveRecovery> curves;
  double threshold = 0.01;
  double fraction = 0.0;  // share of curves with magnitude above threshold
  SampleSummary magnitudes;
};

inline RecoveryReport recovery_stats(const std::vector<std::vector<double>>& curves, double threshold = 0.01) {
  RecoveryReport r;
  r.threshold = threshold;
  std::vector<double> mags;
  std::size_t recovered = 0;
  for (const auto& c : curves) {
    r.curves.push_back(curve_recovery(c));
    mags.push_back(r.curves.back().magnitude);
    if (mags.back() > threshold) ++recovered;
  }
  if (!curves.empty()) r.fraction = static_cast<double>(recovered) / static_cast<double>(curves.size());
  r.magnitudes = summarize(mags);
  return r;
}

struct ExpFit {
  double a = 0.0;
  double b = 0.0;
  std::vector<double> null_curve;  // a·e^(−b·t) for t = 1..len
};

/// Least squares of ln y_t = ln a − b·t over t = 1..fit_steps, where
/// ssim[0] is step 1.
inline ExpFit fit_exp_null(const std::vector<double>& ssim, std::size_t fit_steps = 5) {
  require(fit_steps >= 2 && ssim.size() >= fit_steps, "fit_exp_null: need at least fit_steps values");
  double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
  for (std::size_t i = 0; i < fit_steps; ++i) {
    require(ssim[i] > 0.0, "fit_exp_null: values on the fit range must be positive");
    const double t = static_cast<double>(i + 1), y = std::log(ssim[i]);
    st += t;
    sy += y;
    stt += t * t;
    sty += t * y;
  }
  const double n = static_cast<double>(fit_steps);
  const double slope = (n * sty - st * sy) / (n * stt - st * st);
  const double intercept = (sy - slope * st) / n;
  ExpFit f;
  f.a = std::exp(intercept);
  f.b = -slope;
  for (std::size_t i = 0; i < ssim.size(); ++i) f.null_curve.push_back(f.a * std::exp(-f.b * static_cast<double>(i + 1)));
  return f;
}

}  // namespace fluidlab
