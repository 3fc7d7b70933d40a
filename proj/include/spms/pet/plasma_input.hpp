#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "spms/csv.hpp"

namespace spms::pet {

/// Sampled arterial input function C_P, interpolated piecewise linearly
/// between samples and zero before the first sample. The exponential
/// convolution needed by the tissue model is evaluated segment-analytically,
/// so it is exact for the interpolant.
class PlasmaInput {
 public:
  PlasmaInput(std::vector<double> times, std::vector<double> concentrations)
      : times_(std::move(times)), conc_(std::move(concentrations)) {
    if (times_.size() != conc_.size() || times_.size() < 2)
      throw std::invalid_argument("plasma input needs >= 2 matching samples");
    for (size_t i = 1; i < times_.size(); ++i)
      if (times_[i] <= times_[i - 1])
        throw std::invalid_argument("plasma input times must be strictly increasing");
    for (double c : conc_)
      if (c < 0.0)
        throw std::invalid_argument("plasma concentrations must be non-negative");
  }

  double support_end() const { return times_.back(); }
  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& concentrations() const { return conc_; }

  double value(double t) const {
    if (t < times_.front()) return 0.0;
    if (t >= times_.back()) return conc_.back();
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    size_t i = static_cast<size_t>(it - times_.begin());
    double w = (t - times_[i - 1]) / (times_[i] - times_[i - 1]);
    return conc_[i - 1] + w * (conc_[i] - conc_[i - 1]);
  }

  /// B(rate, t) = integral_0^t C_P(s) exp(-rate (t - s)) ds, exact for the
  /// piecewise-linear interpolant.
  double exp_convolution(double rate, double t) const {
    if (t < 0.0 || t > support_end() + 1e-9)
      throw std::invalid_argument("time outside plasma input support");
    double acc = 0.0;
    for (size_t i = 1; i < times_.size() && times_[i - 1] < t; ++i) {
      double s0 = times_[i - 1];
      double s1 = std::min(times_[i], t);
      double c0 = conc_[i - 1];
      double slope = (conc_[i] - conc_[i - 1]) / (times_[i] - times_[i - 1]);
      acc += segment_integral(rate, t, s0, s1, c0, slope);
    }
    return acc;
  }

  /// B(rate, t_j) for several increasing times in one pass, via the frame
  /// recursion B(t_j) = exp(-rate (t_j - t_{j-1})) B(t_{j-1}) + local term.
  std::vector<double> exp_convolution_series(double rate,
                                             const std::vector<double>& ts) const {
    std::vector<double> out(ts.size());
    double prev_t = 0.0;
    double prev_b = 0.0;
    size_t seg = 1;  // input segment whose right end has not been passed yet
    for (size_t j = 0; j < ts.size(); ++j) {
      double t = ts[j];
      if (t < prev_t)
        throw std::invalid_argument("series times must be non-decreasing");
      if (t > support_end() + 1e-9)
        throw std::invalid_argument("time outside plasma input support");
      double b = prev_b * std::exp(-rate * (t - prev_t));
      // contributions of input segments overlapping (prev_t, t]
      for (size_t i = seg; i < times_.size() && times_[i - 1] < t; ++i) {
        double s0 = std::max(times_[i - 1], prev_t);
        double s1 = std::min(times_[i], t);
        if (s1 <= s0) continue;
        double c0 = value(s0);
        double slope = (conc_[i] - conc_[i - 1]) / (times_[i] - times_[i - 1]);
        b += segment_integral(rate, t, s0, s1, c0, slope);
        if (times_[i] <= t) seg = i + 1;
      }
      out[j] = b;
      prev_t = t;
      prev_b = b;
    }
    return out;
  }

 private:
  // integral_{s0}^{s1} (c0 + slope (s - s0)) exp(-rate (t - s)) ds
  // = exp(-rate (t - s1)) * (c0 E0 + slope E1), h = s1 - s0,
  // E0 = (1 - exp(-rate h)) / rate, E1 = (h - E0) / rate; series forms keep
  // the small-rate limit stable.
  static double segment_integral(double rate, double t, double s0, double s1,
                                 double c0, double slope) {
    double h = s1 - s0;
    double x = rate * h;
    double e0, e1;
    if (std::abs(x) < 1e-5) {
      e0 = h * (1.0 - x / 2.0 + x * x / 6.0);
      e1 = h * h * (0.5 - x / 3.0 + x * x / 8.0);
    } else {
      e0 = -std::expm1(-x) / rate;
      e1 = (h - e0) / rate;
    }
    return std::exp(-rate * (t - s1)) * (c0 * e0 + slope * e1);
  }

  std::vector<double> times_;
  std::vector<double> conc_;
};

/// Default synthetic bolus input C_P(t) = A t exp(-b t), sampled densely
/// near the peak and at every frame boundary so the interpolant is faithful.
inline PlasmaInput synthetic_bolus_input(double amplitude, double decay_rate,
                                         double t_end,
                                         const std::vector<double>& extra_times = {},
                                         int early_samples = 24) {
  std::vector<double> ts{0.0};
  double peak = 1.0 / decay_rate;
  for (int i = 1; i <= early_samples; ++i)
    ts.push_back(4.0 * peak * i / early_samples);
  for (double t : extra_times)
    if (t > 0.0 && t <= t_end) ts.push_back(t);
  ts.push_back(t_end);
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end(),
                       [](double a, double b) { return std::abs(a - b) < 1e-9; }),
           ts.end());
  std::vector<double> cs(ts.size());
  for (size_t i = 0; i < ts.size(); ++i)
    cs[i] = amplitude * ts[i] * std::exp(-decay_rate * ts[i]);
  return PlasmaInput(std::move(ts), std::move(cs));
}

/// CSV with header `time_s,concentration`, rows ascending.
inline PlasmaInput load_plasma_input(const std::string& path) {
  auto rows = read_csv(path, "time_s,concentration");
  std::vector<double> ts, cs;
  for (const auto& r : rows) {
    ts.push_back(std::stod(r.at(0)));
    cs.push_back(std::stod(r.at(1)));
  }
  return PlasmaInput(std::move(ts), std::move(cs));
}

inline void save_plasma_input(const PlasmaInput& input, const std::string& path) {
  CsvWriter csv(path, "time_s,concentration");
  for (size_t i = 0; i < input.times().size(); ++i)
    csv.row(input.times()[i], input.concentrations()[i]);
}

}  // namespace spms::pet
