#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spms/field.hpp"
#include "spms/node_model.hpp"
#include "spms/rng.hpp"

namespace spms {

/// Conjugate normal-normal pixel model: latent mean mu_v ~ N(mu0[M], sigma0^2)
/// and observation y_v ~ N(mu_v, sigma^2). The marginal is available in
/// closed form, which makes this family the correctness workhorse.
struct ToyModelParams {
  std::vector<double> mu0;       // prior mean per model order
  double sigma0 = 5.0;           // prior s.d.
  double sigma = 1.0;            // observation s.d.
  std::vector<std::string> labels;  // optional display labels per order

  void validate() const {
    if (mu0.size() < 2) throw std::invalid_argument("need >= 2 model orders");
    if (sigma0 <= 0.0 || sigma <= 0.0)
      throw std::invalid_argument("sigma0 and sigma must be positive");
  }
};

inline double toy_log_likelihood(double y, double mu, const ToyModelParams& p) {
  return log_normal_pdf(y, mu, p.sigma * p.sigma);
}

inline double toy_log_prior(double mu, int m, const ToyModelParams& p) {
  return log_normal_pdf(mu, p.mu0.at(static_cast<size_t>(m)), p.sigma0 * p.sigma0);
}

inline double toy_sample_prior(int m, const ToyModelParams& p, Rng& rng) {
  std::normal_distribution<double> d(p.mu0.at(static_cast<size_t>(m)), p.sigma0);
  return d(rng);
}

/// f(y | M) = N(y; mu0[M], sigma^2 + sigma0^2).
inline double toy_exact_log_marginal(double y, int m, const ToyModelParams& p) {
  return log_normal_pdf(y, p.mu0.at(static_cast<size_t>(m)),
                        p.sigma * p.sigma + p.sigma0 * p.sigma0);
}

/// Simulates an image pixel-wise: mu_v ~ N(mu0[M_v], sigma0^2), then
/// y_v ~ N(mu_v, sigma^2). Each node uses its own RNG substream, so pixels
/// are unaffected by the orders assigned elsewhere.
inline NodeDataImage toy_simulate(const ModelField& field,
                                  const ToyModelParams& p,
                                  std::uint64_t seed) {
  p.validate();
  NodeDataImage image(field.width, field.height, 1);
  for (int v = 0; v < field.size(); ++v) {
    Rng rng = make_rng(seed, {stream::simulate, static_cast<std::uint64_t>(v)});
    double mu = toy_sample_prior(field[v], p, rng);
    std::normal_distribution<double> obs(mu, p.sigma);
    image.node_mut(v)[0] = obs(rng);
  }
  return image;
}

class ToyModelFamily final : public NodeModelFamily {
 public:
  explicit ToyModelFamily(ToyModelParams params) : params_(std::move(params)) {
    params_.validate();
  }

  const ToyModelParams& params() const { return params_; }

  int model_count() const override { return static_cast<int>(params_.mu0.size()); }
  std::string model_label(int m) const override {
    if (m >= 0 && m < static_cast<int>(params_.labels.size()))
      return params_.labels[static_cast<size_t>(m)];
    return std::to_string(m);
  }
  int param_dim(int) const override { return 1; }
  Transform transform(int, int) const override { return Transform::identity; }

  void sample_prior(int m, Rng& rng, std::span<double> theta) const override {
    theta[0] = toy_sample_prior(m, params_, rng);
  }
  double log_prior(int m, std::span<const double> theta) const override {
    return toy_log_prior(theta[0], m, params_);
  }
  double log_likelihood(std::span<const double> y, int,
                        std::span<const double> theta) const override {
    return toy_log_likelihood(y[0], theta[0], params_);
  }
  bool has_exact_marginal() const override { return true; }
  double exact_log_marginal(std::span<const double> y, int m) const override {
    return toy_exact_log_marginal(y[0], m, params_);
  }
  double derived_quantity(int, std::span<const double> theta) const override {
    return theta[0];
  }

 private:
  ToyModelParams params_;
};

}  // namespace spms
