#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "spms/node_model.hpp"
#include "spms/rng.hpp"

namespace spms {

inline double logsumexp(std::span<const double> xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - m);
  return m + std::log(acc);
}

/// ESS of a weight vector: 1 / sum(W_i^2) over normalized weights.
inline double effective_sample_size(std::span<const double> weights) {
  double sum = 0.0, sum_sq = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("weights must be non-negative");
    sum += w;
    sum_sq += w * w;
  }
  if (sum <= 0.0) throw std::invalid_argument("weights must not all be zero");
  return sum * sum / sum_sq;
}

/// Systematic (low-variance) resampling: returns ancestor indices.
inline std::vector<int> systematic_resample(std::span<const double> weights,
                                            Rng& rng) {
  int n = static_cast<int>(weights.size());
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<int> ancestors(static_cast<size_t>(n));
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng) / n;
  double cumulative = weights[0] / total;
  int i = 0;
  for (int j = 0; j < n; ++j) {
    double target = u + static_cast<double>(j) / n;
    while (cumulative < target && i < n - 1)
      cumulative += weights[static_cast<size_t>(++i)] / total;
    ancestors[static_cast<size_t>(j)] = i;
  }
  return ancestors;
}

enum class ResamplePolicy { every_step, ess_threshold };

/// Optional per-temperature instrumentation of one estimator run.
struct SmcDiagnostics {
  std::vector<double> ess;          // before the resample decision
  std::vector<double> move_accept;  // MH acceptance rate at each temperature
  int resample_count = 0;
};

struct SmcConfig {
  int particle_count = 50;         // N
  int temperature_count = 80;      // T
  double schedule_power = 5.0;     // "Prior 5": alpha(u) = u^5
  ResamplePolicy resample = ResamplePolicy::ess_threshold;
  double resample_threshold = 0.5; // trigger when ESS < threshold * N
  int move_count = 1;              // MH moves per temperature
  double step_scale = 1.0;         // multiplier on the 2.38/sqrt(dim) factor
  std::function<double(double)> schedule;  // overrides schedule_power if set
  SmcDiagnostics* diagnostics = nullptr;   // filled per temperature when set

  double alpha(int t) const {
    double u = static_cast<double>(t) / temperature_count;
    return schedule ? schedule(u) : std::pow(u, schedule_power);
  }
  void validate() const {
    if (particle_count < 2) throw std::invalid_argument("need N >= 2");
    if (temperature_count < 1) throw std::invalid_argument("need T >= 1");
    if (resample_threshold <= 0.0 || resample_threshold > 1.0)
      throw std::invalid_argument("resample threshold must be in (0,1]");
    double prev = alpha(0);
    if (std::abs(prev) > 1e-12 || std::abs(alpha(temperature_count) - 1.0) > 1e-12)
      throw std::invalid_argument("annealing schedule must map 0->0 and 1->1");
    for (int t = 1; t <= temperature_count; ++t) {
      if (alpha(t) < prev - 1e-15)
        throw std::invalid_argument("annealing schedule must be non-decreasing");
      prev = alpha(t);
    }
  }
};

/// Raised when every particle reaches -inf log-likelihood at some
/// temperature; carries the temperature index.
class EstimationFailure : public std::runtime_error {
 public:
  EstimationFailure(int temperature, const std::string& what)
      : std::runtime_error(what), temperature_(temperature) {}
  int temperature() const { return temperature_; }

 private:
  int temperature_;
};

/// Weighted parameter draws at the final temperature, kept so posterior
/// functionals (latent means, V_D) can be read off the evidence run.
struct ParticleSummary {
  int param_dim = 0;
  std::vector<double> params;   // N x param_dim, row-major
  std::vector<double> weights;  // normalized

  std::span<const double> particle(int i) const {
    return {params.data() + static_cast<size_t>(i) * param_dim,
            static_cast<size_t>(param_dim)};
  }
  int count() const { return static_cast<int>(weights.size()); }
};

struct EvidenceEstimate {
  double log_z = 0.0;
  int model = 0;
  int node = -1;
  int particle_count = 0;
  int temperature_count = 0;
  std::uint64_t seed = 0;
  ParticleSummary particles;  // empty unless retained
};

struct SummaryStats {
  double mean = 0.0;
  double variance = 0.0;
  bool degenerate = false;  // ESS < 2 warning flag
};

/// Self-normalized weighted mean/variance of a parameter functional over the
/// retained final-temperature particles.
inline SummaryStats posterior_summary(
    const EvidenceEstimate& est,
    const std::function<double(std::span<const double>)>& functional) {
  const auto& ps = est.particles;
  if (ps.count() == 0)
    throw std::invalid_argument("estimate retained no particle summary");
  SummaryStats out;
  double wsum = 0.0;
  for (int i = 0; i < ps.count(); ++i) {
    double w = ps.weights[static_cast<size_t>(i)];
    out.mean += w * functional(ps.particle(i));
    wsum += w;
  }
  out.mean /= wsum;
  for (int i = 0; i < ps.count(); ++i) {
    double d = functional(ps.particle(i)) - out.mean;
    out.variance += ps.weights[static_cast<size_t>(i)] * d * d;
  }
  out.variance /= wsum;
  out.degenerate = effective_sample_size(ps.weights) < 2.0;
  return out;
}

namespace detail {

inline constexpr std::uint64_t kPilotStream = 0x70;
inline constexpr std::uint64_t kEstimateStream = 0x71;

/// Lower-triangular Cholesky factor (row-major) of a dim x dim covariance.
/// Adds escalating diagonal jitter for near-singular inputs; falls back to
/// the diagonal square root if that still fails.
inline std::vector<double> cholesky_lower(std::vector<double> a, int dim) {
  double max_diag = 0.0;
  for (int c = 0; c < dim; ++c)
    max_diag = std::max(max_diag, a[static_cast<size_t>(c) * dim + c]);
  for (double jitter = 0.0;; jitter = jitter == 0.0 ? 1e-10 * max_diag : 10 * jitter) {
    std::vector<double> l(a.size(), 0.0);
    bool ok = true;
    for (int r = 0; r < dim && ok; ++r) {
      for (int c = 0; c <= r; ++c) {
        double s = a[static_cast<size_t>(r) * dim + c] + (r == c ? jitter : 0.0);
        for (int k = 0; k < c; ++k)
          s -= l[static_cast<size_t>(r) * dim + k] * l[static_cast<size_t>(c) * dim + k];
        if (r == c) {
          if (s <= 0.0) { ok = false; break; }
          l[static_cast<size_t>(r) * dim + c] = std::sqrt(s);
        } else {
          l[static_cast<size_t>(r) * dim + c] = s / l[static_cast<size_t>(c) * dim + c];
        }
      }
    }
    if (ok) return l;
    if (jitter > 1e-2 * std::max(max_diag, 1.0)) break;
  }
  std::vector<double> l(a.size(), 0.0);
  for (int c = 0; c < dim; ++c)
    l[static_cast<size_t>(c) * dim + c] =
        std::sqrt(std::max(a[static_cast<size_t>(c) * dim + c], 1e-12));
  return l;
}

/// Random-walk proposal factor from the weighted covariance of the
/// unconstrained particle cloud, scaled by step_scale * 2.38 / sqrt(dim).
inline std::vector<double> proposal_cholesky(const std::vector<double>& z,
                                             const std::vector<double>& weights,
                                             int n, int dim, double step_scale) {
  std::vector<double> mean(static_cast<size_t>(dim), 0.0);
  double wsum = 0.0;
  for (int i = 0; i < n; ++i) {
    double w = weights[static_cast<size_t>(i)];
    wsum += w;
    for (int c = 0; c < dim; ++c)
      mean[static_cast<size_t>(c)] += w * z[static_cast<size_t>(i) * dim + c];
  }
  for (int c = 0; c < dim; ++c) mean[static_cast<size_t>(c)] /= wsum;
  std::vector<double> cov(static_cast<size_t>(dim) * dim, 0.0);
  for (int i = 0; i < n; ++i) {
    double w = weights[static_cast<size_t>(i)] / wsum;
    for (int r = 0; r < dim; ++r) {
      double dr = z[static_cast<size_t>(i) * dim + r] - mean[static_cast<size_t>(r)];
      for (int c = 0; c <= r; ++c) {
        double dc = z[static_cast<size_t>(i) * dim + c] - mean[static_cast<size_t>(c)];
        cov[static_cast<size_t>(r) * dim + c] += w * dr * dc;
      }
    }
  }
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < r; ++c)
      cov[static_cast<size_t>(c) * dim + r] = cov[static_cast<size_t>(r) * dim + c];
  // a collapsed component would freeze its coordinate; give it a small
  // uncoupled variance instead
  for (int c = 0; c < dim; ++c) {
    if (cov[static_cast<size_t>(c) * dim + c] < 1e-12) {
      for (int k = 0; k < dim; ++k) {
        cov[static_cast<size_t>(c) * dim + k] = 0.0;
        cov[static_cast<size_t>(k) * dim + c] = 0.0;
      }
      cov[static_cast<size_t>(c) * dim + c] = 1e-6;
    }
  }
  double factor = step_scale * 2.38 / std::sqrt(static_cast<double>(dim));
  std::vector<double> l = cholesky_lower(std::move(cov), dim);
  for (double& v : l) v *= factor;
  return l;
}

struct SmcPassResult {
  double log_z = 0.0;
  std::vector<double> params;   // N x dim, final temperature
  std::vector<double> weights;  // normalized
};

/// One annealed-SMC sweep. When `frozen` is non-null its per-temperature
/// Cholesky factors drive the random-walk moves; otherwise the factors are
/// adapted from the current population (and recorded into `learned` if set).
inline SmcPassResult smc_pass(std::span<const double> node_data, int model,
                              const NodeModelFamily& family,
                              const SmcConfig& cfg, Rng& rng,
                              const std::vector<std::vector<double>>* frozen,
                              std::vector<std::vector<double>>* learned,
                              SmcDiagnostics* diagnostics) {
  const int n = cfg.particle_count;
  const int dim = family.param_dim(model);

  std::vector<double> params(static_cast<size_t>(n) * dim);
  std::vector<double> z(static_cast<size_t>(n) * dim);  // unconstrained copy
  std::vector<double> log_lik(static_cast<size_t>(n));
  std::vector<double> log_weights(static_cast<size_t>(n), -std::log(double(n)));
  std::vector<double> weights(static_cast<size_t>(n));

  auto particle = [&](std::vector<double>& store, int i) {
    return std::span<double>{store.data() + static_cast<size_t>(i) * dim,
                             static_cast<size_t>(dim)};
  };

  for (int i = 0; i < n; ++i) {
    family.sample_prior(model, rng, particle(params, i));
    log_lik[static_cast<size_t>(i)] =
        family.log_likelihood(node_data, model, particle(params, i));
  }

  double log_z = 0.0;
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  for (int t = 1; t <= cfg.temperature_count; ++t) {
    double alpha_prev = cfg.alpha(t - 1);
    double alpha_t = cfg.alpha(t);
    double d_alpha = alpha_t - alpha_prev;

    // incremental weights w_t = likelihood^(alpha_t - alpha_{t-1})
    std::vector<double> log_w_new(static_cast<size_t>(n));
    bool any_finite = false;
    for (int i = 0; i < n; ++i) {
      double incr = d_alpha * log_lik[static_cast<size_t>(i)];
      if (d_alpha == 0.0) incr = 0.0;  // avoid 0 * -inf
      log_w_new[static_cast<size_t>(i)] = log_weights[static_cast<size_t>(i)] + incr;
      if (std::isfinite(log_w_new[static_cast<size_t>(i)])) any_finite = true;
    }
    if (!any_finite)
      throw EstimationFailure(t, "all particles at -inf likelihood");
    double lse = logsumexp(log_w_new);
    log_z += lse;  // previous weights were normalized
    for (int i = 0; i < n; ++i) {
      log_weights[static_cast<size_t>(i)] = log_w_new[static_cast<size_t>(i)] - lse;
      weights[static_cast<size_t>(i)] = std::exp(log_weights[static_cast<size_t>(i)]);
    }

    double ess = effective_sample_size(weights);
    if (diagnostics) diagnostics->ess.push_back(ess);
    bool do_resample = cfg.resample == ResamplePolicy::every_step ||
                       ess < cfg.resample_threshold * n;
    if (do_resample) {
      if (diagnostics) ++diagnostics->resample_count;
      auto ancestors = systematic_resample(weights, rng);
      std::vector<double> new_params(params.size());
      std::vector<double> new_log_lik(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        int a = ancestors[static_cast<size_t>(i)];
        std::copy_n(params.data() + static_cast<size_t>(a) * dim, dim,
                    new_params.data() + static_cast<size_t>(i) * dim);
        new_log_lik[static_cast<size_t>(i)] = log_lik[static_cast<size_t>(a)];
      }
      params.swap(new_params);
      log_lik.swap(new_log_lik);
      std::fill(log_weights.begin(), log_weights.end(), -std::log(double(n)));
      std::fill(weights.begin(), weights.end(), 1.0 / n);
    }

    if (cfg.move_count == 0) continue;

    // proposal covariance: frozen from the pilot pass, or adapted from the
    // current weighted population
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < dim; ++c)
        z[static_cast<size_t>(i) * dim + c] = to_unconstrained(
            family.transform(model, c), params[static_cast<size_t>(i) * dim + c]);
    std::vector<double> chol;
    if (frozen) {
      chol = (*frozen)[static_cast<size_t>(t - 1)];
    } else {
      chol = detail::proposal_cholesky(z, weights, n, dim, cfg.step_scale);
      if (learned) learned->push_back(chol);
    }

    // MH moves targeting pi_t, random walk in the unconstrained space
    std::vector<double> prop(static_cast<size_t>(dim));
    std::vector<double> prop_z(static_cast<size_t>(dim));
    std::vector<double> eps(static_cast<size_t>(dim));
    long move_accepts = 0;
    for (int move = 0; move < cfg.move_count; ++move) {
      for (int i = 0; i < n; ++i) {
        auto cur = particle(params, i);
        double cur_lp = family.log_prior(model, cur);
        double cur_lj = 0.0;
        for (int c = 0; c < dim; ++c) eps[static_cast<size_t>(c)] = std_normal(rng);
        for (int c = 0; c < dim; ++c) {
          double step = 0.0;
          for (int k = 0; k <= c; ++k)
            step += chol[static_cast<size_t>(c) * dim + k] * eps[static_cast<size_t>(k)];
          prop_z[static_cast<size_t>(c)] = z[static_cast<size_t>(i) * dim + c] + step;
          prop[static_cast<size_t>(c)] = from_unconstrained(
              family.transform(model, c), prop_z[static_cast<size_t>(c)]);
          cur_lj += log_jacobian(family.transform(model, c),
                                 z[static_cast<size_t>(i) * dim + c]);
        }
        double prop_lp = family.log_prior(model, prop);
        double log_accept;
        double prop_ll = -std::numeric_limits<double>::infinity();
        if (std::isfinite(prop_lp)) {
          prop_ll = family.log_likelihood(node_data, model, prop);
          double prop_lj = 0.0;
          for (int c = 0; c < dim; ++c)
            prop_lj += log_jacobian(family.transform(model, c),
                                    prop_z[static_cast<size_t>(c)]);
          double cur_tempered =
              alpha_t * log_lik[static_cast<size_t>(i)];
          double prop_tempered = alpha_t * prop_ll;
          if (alpha_t == 0.0) cur_tempered = prop_tempered = 0.0;
          log_accept = (prop_lp + prop_tempered + prop_lj) -
                       (cur_lp + cur_tempered + cur_lj);
        } else {
          log_accept = -std::numeric_limits<double>::infinity();
        }
        if (std::log(unif(rng)) < log_accept) {
          ++move_accepts;
          std::copy(prop.begin(), prop.end(), cur.begin());
          std::copy(prop_z.begin(), prop_z.end(),
                    z.begin() + static_cast<size_t>(i) * dim);
          log_lik[static_cast<size_t>(i)] = prop_ll;
        }
      }
    }
    if (diagnostics)
      diagnostics->move_accept.push_back(
          static_cast<double>(move_accepts) /
          (static_cast<double>(n) * std::max(1, cfg.move_count)));
  }

  SmcPassResult out;
  out.log_z = log_z;
  out.params = std::move(params);
  out.weights = std::move(weights);
  return out;
}

}  // namespace detail

/// Annealed SMC evidence estimator for one node's data and one model order.
/// Targets pi_t proportional to prior * likelihood^alpha(t/T); accumulates
/// log Z-hat from the incremental weights; MH moves keep each pi_t invariant.
///
/// Runs in two passes: a small pilot pass (independent RNG substream) adapts
/// per-temperature full-covariance random-walk proposals, and the estimating
/// pass replays the schedule with those kernels frozen. Because the kernels
/// are independent of the estimating pass's randomness, the natural-space
/// estimate is unbiased under every-step systematic resampling; kernel
/// parameters adapted within the estimating run itself would correlate with
/// the weights and bias Z-hat upward.
inline EvidenceEstimate estimate_evidence(std::span<const double> node_data,
                                          int model,
                                          const NodeModelFamily& family,
                                          const SmcConfig& cfg,
                                          std::uint64_t seed,
                                          bool keep_particles = false) {
  cfg.validate();
  std::vector<std::vector<double>> kernels;
  if (cfg.move_count > 0) {
    SmcConfig pilot = cfg;
    pilot.diagnostics = nullptr;
    pilot.particle_count =
        std::min(cfg.particle_count, std::max(16, cfg.particle_count / 4));
    Rng pilot_rng(derive_seed(seed, {detail::kPilotStream}));
    detail::smc_pass(node_data, model, family, pilot, pilot_rng, nullptr,
                     &kernels, nullptr);
  }
  Rng rng(derive_seed(seed, {detail::kEstimateStream}));
  detail::SmcPassResult pass = detail::smc_pass(
      node_data, model, family, cfg, rng,
      cfg.move_count > 0 ? &kernels : nullptr, nullptr, cfg.diagnostics);

  EvidenceEstimate est;
  est.log_z = pass.log_z;
  est.model = model;
  est.particle_count = cfg.particle_count;
  est.temperature_count = cfg.temperature_count;
  est.seed = seed;
  if (keep_particles) {
    est.particles.param_dim = family.param_dim(model);
    est.particles.params = std::move(pass.params);
    est.particles.weights = std::move(pass.weights);
  }
  return est;
}

}  // namespace spms
