#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "spms/node_model.hpp"
#include "spms/pet/frame_schedule.hpp"
#include "spms/pet/plasma_input.hpp"
#include "spms/rng.hpp"

namespace spms::pet {

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

struct NormalNoise {
  double lambda = 1.0;  // precision
};
struct StudentTNoise {
  double tau = 1.0;  // scale
  double nu = 10.0;  // degrees of freedom; 1/nu in [0, 0.5)
};

/// Parameters of an M-compartment plasma-input model.
struct CompartmentParams {
  std::vector<double> phi;    // phi_{1:M}, 1/s
  std::vector<double> theta;  // vartheta_{1:M}, 1/s
  std::variant<NormalNoise, StudentTNoise> noise = NormalNoise{};

  int order() const { return static_cast<int>(phi.size()); }
};

/// C_T(t) = sum_i phi_i * integral_0^t C_P(s) exp(-theta_i (t - s)) ds.
inline double tissue_concentration(double t, const CompartmentParams& params,
                                   const PlasmaInput& input) {
  if (params.phi.size() != params.theta.size())
    throw std::invalid_argument("phi and theta must have equal length");
  double c = 0.0;
  for (size_t i = 0; i < params.phi.size(); ++i)
    c += params.phi[i] * input.exp_convolution(params.theta[i], t);
  return c;
}

/// C_T at every frame end of the schedule, one recursion pass per compartment.
inline std::vector<double> tissue_curve(const CompartmentParams& params,
                                        const PlasmaInput& input,
                                        const FrameSchedule& schedule) {
  std::vector<double> ts(static_cast<size_t>(schedule.frame_count()));
  for (int i = 0; i < schedule.frame_count(); ++i)
    ts[static_cast<size_t>(i)] = schedule.frame_end(i);
  std::vector<double> curve(ts.size(), 0.0);
  for (size_t i = 0; i < params.phi.size(); ++i) {
    auto b = input.exp_convolution_series(params.theta[i], ts);
    for (size_t j = 0; j < curve.size(); ++j) curve[j] += params.phi[i] * b[j];
  }
  return curve;
}

/// V_D = sum_i phi_i / theta_i, the identifiable macro-parameter.
inline double volume_of_distribution(const CompartmentParams& params) {
  double vd = 0.0;
  for (size_t i = 0; i < params.phi.size(); ++i) {
    if (params.theta[i] <= 0.0)
      throw std::invalid_argument("theta components must be positive");
    vd += params.phi[i] / params.theta[i];
  }
  return vd;
}

/// Heteroscedastic normal log-likelihood with per-frame variance
/// iota_i / lambda, iota_i = C_T(t_i) / (t_i - t_{i-1}). Returns -inf when
/// any model concentration is non-positive, so samplers can reject the
/// parameter region instead of aborting.
inline double log_likelihood_normal(std::span<const double> y,
                                    const CompartmentParams& params,
                                    const PlasmaInput& input,
                                    const FrameSchedule& schedule) {
  const auto& noise = std::get<NormalNoise>(params.noise);
  auto curve = tissue_curve(params, input, schedule);
  if (static_cast<int>(y.size()) != schedule.frame_count())
    throw std::invalid_argument("data length does not match frame count");
  double ll = 0.0;
  for (int i = 0; i < schedule.frame_count(); ++i) {
    double ct = curve[static_cast<size_t>(i)];
    if (ct <= 0.0) return neg_inf;
    double iota = ct / schedule.duration(i);
    double r = y[static_cast<size_t>(i)] - ct;
    ll += 0.5 * std::log(noise.lambda) - 0.5 * std::log(2.0 * M_PI * iota) -
          noise.lambda / (2.0 * iota) * r * r;
  }
  return ll;
}

/// Student-t log-likelihood: location C_T(t_i), scale parameterized through
/// tau and iota_i, degrees of freedom nu.
inline double log_likelihood_t(std::span<const double> y,
                               const CompartmentParams& params,
                               const PlasmaInput& input,
                               const FrameSchedule& schedule) {
  const auto& noise = std::get<StudentTNoise>(params.noise);
  if (noise.nu <= 0.0) throw std::invalid_argument("nu must be positive");
  auto curve = tissue_curve(params, input, schedule);
  if (static_cast<int>(y.size()) != schedule.frame_count())
    throw std::invalid_argument("data length does not match frame count");
  double ll = 0.0;
  double lg = std::lgamma(0.5 * (noise.nu + 1.0)) - std::lgamma(0.5 * noise.nu);
  for (int i = 0; i < schedule.frame_count(); ++i) {
    double ct = curve[static_cast<size_t>(i)];
    if (ct <= 0.0) return neg_inf;
    double iota = ct / schedule.duration(i);
    double r = y[static_cast<size_t>(i)] - ct;
    ll += lg + 0.5 * std::log(noise.tau / (iota * M_PI * noise.nu)) -
          0.5 * (noise.nu + 1.0) *
              std::log1p(noise.tau / (noise.nu * iota) * r * r);
  }
  return ll;
}

/// Prior configuration: uniform boxes on phi and theta, Gamma(alpha, beta)
/// on the precision/scale, uniform [0, 0.5) on 1/nu for t errors.
struct PriorConfig {
  double phi_lo = 1e-5, phi_hi = 1e-1;
  double theta_lo = 1e-4, theta_hi = 1e-1;  // real-data cutoff mode uses 7e-4
  double gamma_alpha = 1e-3, gamma_beta = 1e-3;
  bool student_t = false;
};

inline CompartmentParams sample_prior(int order, const PriorConfig& cfg, Rng& rng) {
  CompartmentParams p;
  std::uniform_real_distribution<double> u_phi(cfg.phi_lo, cfg.phi_hi);
  std::uniform_real_distribution<double> u_theta(cfg.theta_lo, cfg.theta_hi);
  for (int i = 0; i < order; ++i) p.phi.push_back(u_phi(rng));
  for (int i = 0; i < order; ++i) p.theta.push_back(u_theta(rng));
  std::gamma_distribution<double> gamma(cfg.gamma_alpha, 1.0 / cfg.gamma_beta);
  // Gamma(1e-3, 1e-3) puts most of its mass below the double-precision range,
  // so raw draws often underflow to exactly zero; clamp to the smallest
  // positive normal so sampled points always carry a finite log density.
  auto positive_gamma = [&]() {
    return std::max(gamma(rng), std::numeric_limits<double>::min());
  };
  if (cfg.student_t) {
    std::uniform_real_distribution<double> u_inv_nu(0.0, 0.5);
    double inv_nu = u_inv_nu(rng);
    p.noise = StudentTNoise{positive_gamma(), 1.0 / std::max(inv_nu, 1e-12)};
  } else {
    p.noise = NormalNoise{positive_gamma()};
  }
  return p;
}

inline double log_gamma_pdf(double x, double alpha, double beta) {
  if (x <= 0.0) return neg_inf;
  return alpha * std::log(beta) - std::lgamma(alpha) +
         (alpha - 1.0) * std::log(x) - beta * x;
}

/// Normalized joint log prior density. For t errors the density over nu
/// carries the 1/nu^2 Jacobian of the uniform prior on 1/nu.
inline double log_prior_density(const CompartmentParams& params,
                                const PriorConfig& cfg) {
  double lp = 0.0;
  for (double phi : params.phi) {
    if (phi < cfg.phi_lo || phi > cfg.phi_hi) return neg_inf;
    lp -= std::log(cfg.phi_hi - cfg.phi_lo);
  }
  for (double theta : params.theta) {
    if (theta < cfg.theta_lo || theta > cfg.theta_hi) return neg_inf;
    lp -= std::log(cfg.theta_hi - cfg.theta_lo);
  }
  if (const auto* t = std::get_if<StudentTNoise>(&params.noise)) {
    double inv_nu = 1.0 / t->nu;
    if (inv_nu < 0.0 || inv_nu >= 0.5) return neg_inf;
    lp += log_gamma_pdf(t->tau, cfg.gamma_alpha, cfg.gamma_beta);
    lp += std::log(2.0) - 2.0 * std::log(t->nu);  // uniform on 1/nu in [0,.5)
  } else {
    lp += log_gamma_pdf(std::get<NormalNoise>(params.noise).lambda,
                        cfg.gamma_alpha, cfg.gamma_beta);
  }
  return lp;
}

/// NodeModelFamily adapter. Parameter vector layout for order M:
///   [phi_1..phi_M, theta_1..theta_M, lambda]            (normal errors)
///   [phi_1..phi_M, theta_1..theta_M, tau, inv_nu]       (t errors)
class PetModelFamily final : public NodeModelFamily {
 public:
  PetModelFamily(PlasmaInput input, FrameSchedule schedule, PriorConfig prior,
                 int max_order = 3)
      : input_(std::move(input)), schedule_(std::move(schedule)),
        prior_(prior), max_order_(max_order) {}

  const PlasmaInput& input() const { return input_; }
  const FrameSchedule& schedule() const { return schedule_; }
  const PriorConfig& prior_config() const { return prior_; }

  int model_count() const override { return max_order_; }
  std::string model_label(int m) const override { return std::to_string(m + 1); }
  int param_dim(int m) const override {
    return 2 * (m + 1) + (prior_.student_t ? 2 : 1);
  }
  Transform transform(int m, int component) const override {
    if (prior_.student_t && component == param_dim(m) - 1)
      return Transform::logit_unit_half;
    return Transform::log_positive;
  }

  /// Compartment labels are exchangeable (the likelihood and the prior are
  /// symmetric under permuting (phi_i, theta_i) pairs), so unpacking imposes
  /// a canonical order: compartments sorted by ascending theta.
  CompartmentParams unpack(int m, std::span<const double> theta) const {
    int order = m + 1;
    std::vector<int> idx(static_cast<size_t>(order));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      return theta[static_cast<size_t>(order + a)] <
             theta[static_cast<size_t>(order + b)];
    });
    CompartmentParams p;
    p.phi.resize(static_cast<size_t>(order));
    p.theta.resize(static_cast<size_t>(order));
    for (int i = 0; i < order; ++i) {
      p.phi[static_cast<size_t>(i)] = theta[static_cast<size_t>(idx[static_cast<size_t>(i)])];
      p.theta[static_cast<size_t>(i)] =
          theta[static_cast<size_t>(order + idx[static_cast<size_t>(i)])];
    }
    if (prior_.student_t) {
      double inv_nu = theta[static_cast<size_t>(2 * order + 1)];
      p.noise = StudentTNoise{theta[static_cast<size_t>(2 * order)],
                              1.0 / std::max(inv_nu, 1e-12)};
    } else {
      p.noise = NormalNoise{theta[static_cast<size_t>(2 * order)]};
    }
    return p;
  }

  void sample_prior(int m, Rng& rng, std::span<double> theta) const override {
    CompartmentParams p = pet::sample_prior(m + 1, prior_, rng);
    int order = m + 1;
    for (int i = 0; i < order; ++i) theta[static_cast<size_t>(i)] = p.phi[static_cast<size_t>(i)];
    for (int i = 0; i < order; ++i)
      theta[static_cast<size_t>(order + i)] = p.theta[static_cast<size_t>(i)];
    if (prior_.student_t) {
      const auto& n = std::get<StudentTNoise>(p.noise);
      theta[static_cast<size_t>(2 * order)] = n.tau;
      theta[static_cast<size_t>(2 * order + 1)] = 1.0 / n.nu;
    } else {
      theta[static_cast<size_t>(2 * order)] = std::get<NormalNoise>(p.noise).lambda;
    }
  }

  // Density over the vector components; for t errors the last component is
  // 1/nu itself, uniform on [0, 0.5), so no 1/nu^2 factor appears here
  // (log_prior_density carries it for the nu parameterization).
  double log_prior(int m, std::span<const double> theta) const override {
    int order = m + 1;
    double lp = 0.0;
    for (int i = 0; i < order; ++i) {
      double phi = theta[static_cast<size_t>(i)];
      if (phi < prior_.phi_lo || phi > prior_.phi_hi) return neg_inf;
      lp -= std::log(prior_.phi_hi - prior_.phi_lo);
    }
    for (int i = 0; i < order; ++i) {
      double th = theta[static_cast<size_t>(order + i)];
      if (th < prior_.theta_lo || th > prior_.theta_hi) return neg_inf;
      lp -= std::log(prior_.theta_hi - prior_.theta_lo);
    }
    lp += log_gamma_pdf(theta[static_cast<size_t>(2 * order)],
                        prior_.gamma_alpha, prior_.gamma_beta);
    if (prior_.student_t) {
      double inv_nu = theta[static_cast<size_t>(2 * order + 1)];
      if (inv_nu < 0.0 || inv_nu >= 0.5) return neg_inf;
      lp += std::log(2.0);
    }
    return lp;
  }

  double log_likelihood(std::span<const double> y, int m,
                        std::span<const double> theta) const override {
    CompartmentParams p = unpack(m, theta);
    return prior_.student_t ? log_likelihood_t(y, p, input_, schedule_)
                            : log_likelihood_normal(y, p, input_, schedule_);
  }

  double derived_quantity(int m, std::span<const double> theta) const override {
    return volume_of_distribution(unpack(m, theta));
  }

 private:
  PlasmaInput input_;
  FrameSchedule schedule_;
  PriorConfig prior_;
  int max_order_;
};

}  // namespace spms::pet
