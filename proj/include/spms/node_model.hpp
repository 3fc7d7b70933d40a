#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spms/rng.hpp"

namespace spms {

/// Per-component reparameterization used by the SMC move kernels. Moves run
/// in the unconstrained space; the Jacobian keeps the target density correct.
enum class Transform { identity, log_positive, logit_unit_half };

inline double to_unconstrained(Transform t, double x) {
  switch (t) {
    case Transform::identity: return x;
    case Transform::log_positive: return std::log(x);
    case Transform::logit_unit_half: {
      double u = x / 0.5;  // (0, 0.5) -> (0, 1)
      return std::log(u / (1.0 - u));
    }
  }
  return x;
}

inline double from_unconstrained(Transform t, double z) {
  switch (t) {
    case Transform::identity: return z;
    case Transform::log_positive: return std::exp(z);
    case Transform::logit_unit_half: return 0.5 / (1.0 + std::exp(-z));
  }
  return z;
}

/// log |d theta / d z| for the inverse map.
inline double log_jacobian(Transform t, double z) {
  switch (t) {
    case Transform::identity: return 0.0;
    case Transform::log_positive: return z;
    case Transform::logit_unit_half: {
      // theta = 0.5 * sigmoid(z); dtheta/dz = 0.5 * s * (1 - s)
      double s = 1.0 / (1.0 + std::exp(-z));
      return std::log(0.5) + std::log(s) + std::log1p(-s);
    }
  }
  return 0.0;
}

/// Abstract per-node model family: a finite model-order set, per-order
/// parameter prior and likelihood, an optional exact marginal (oracle mode)
/// and a scalar derived quantity reported by the posterior summaries.
class NodeModelFamily {
 public:
  virtual ~NodeModelFamily() = default;

  virtual int model_count() const = 0;
  virtual std::string model_label(int m) const { return std::to_string(m); }
  virtual int param_dim(int m) const = 0;
  virtual Transform transform(int m, int component) const = 0;

  virtual void sample_prior(int m, Rng& rng, std::span<double> theta) const = 0;
  virtual double log_prior(int m, std::span<const double> theta) const = 0;
  virtual double log_likelihood(std::span<const double> y, int m,
                                std::span<const double> theta) const = 0;

  virtual bool has_exact_marginal() const { return false; }
  virtual double exact_log_marginal(std::span<const double>, int) const {
    throw std::logic_error("model family has no exact marginal");
  }

  /// Scalar functional of the parameters (latent mean for the toy model,
  /// volume of distribution for the compartmental models).
  virtual double derived_quantity(int m, std::span<const double> theta) const = 0;
};

/// Per-node observation storage: `frame_count` values per node, row-major by
/// node. The toy model uses frame_count == 1.
struct NodeDataImage {
  int width = 0;
  int height = 0;
  int frame_count = 1;
  std::vector<double> values;

  NodeDataImage() = default;
  NodeDataImage(int w, int h, int k)
      : width(w), height(h), frame_count(k),
        values(static_cast<size_t>(w) * h * k, 0.0) {}

  int node_count() const { return width * height; }
  std::span<const double> node(int v) const {
    return {values.data() + static_cast<size_t>(v) * frame_count,
            static_cast<size_t>(frame_count)};
  }
  std::span<double> node_mut(int v) {
    return {values.data() + static_cast<size_t>(v) * frame_count,
            static_cast<size_t>(frame_count)};
  }
};

inline double log_normal_pdf(double x, double mean, double variance) {
  double r = x - mean;
  return -0.5 * std::log(2.0 * M_PI * variance) - r * r / (2.0 * variance);
}

}  // namespace spms
