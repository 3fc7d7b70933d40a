#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spms/csv.hpp"
#include "spms/node_model.hpp"
#include "spms/rng.hpp"
#include "spms/smc.hpp"

namespace spms {

/// Produces one log-evidence estimate per request. Instrumented with draw and
/// failure counters so estimate-count invariants are directly assertable. The
/// (node, model, epoch) key fully determines the RNG substream, making results
/// independent of scheduling and worker count.
class EvidenceSource {
 public:
  virtual ~EvidenceSource() = default;

  /// nullopt signals an estimation failure (all particles at -inf), which the
  /// samplers treat as an effective Z-hat of zero.
  std::optional<EvidenceEstimate> estimate(int node, int model, int epoch) {
    ++draws_;
    try {
      auto est = estimate_impl(node, model, epoch);
      if (est.particles.count() > 0) accumulate_derived(node, model, est);
      return est;
    } catch (const EstimationFailure&) {
      ++failures_;
      return std::nullopt;
    }
  }

  virtual int model_count() const = 0;
  virtual int node_count() const = 0;

  long draw_count() const { return draws_.load(); }
  long failure_count() const { return failures_.load(); }
  void reset_counters() {
    draws_ = 0;
    failures_ = 0;
  }

  /// Mean of the per-estimate posterior means of the family's derived
  /// quantity (e.g. V_D), averaged over every successful estimate drawn for
  /// (node, model). Valid as E[quantity | y_node, model] because each
  /// contributing particle set targets that same conditional posterior.
  double derived_conditional_mean(int node, int model) const {
    std::lock_guard<std::mutex> lock(derived_mutex_);
    size_t k = static_cast<size_t>(node) * model_count() + model;
    if (k >= derived_count_.size() || derived_count_[k] == 0)
      throw std::invalid_argument("no particle summaries for this node/model");
    return derived_sum_[k] / derived_count_[k];
  }
  bool has_derived(int node, int model) const {
    std::lock_guard<std::mutex> lock(derived_mutex_);
    size_t k = static_cast<size_t>(node) * model_count() + model;
    return k < derived_count_.size() && derived_count_[k] > 0;
  }

 protected:
  virtual EvidenceEstimate estimate_impl(int node, int model, int epoch) = 0;

  void accumulate_derived(int node, int model, const EvidenceEstimate& est) {
    double mean = derived_mean_of(est);
    std::lock_guard<std::mutex> lock(derived_mutex_);
    size_t need = static_cast<size_t>(node_count()) * model_count();
    if (derived_sum_.size() < need) {
      derived_sum_.resize(need, 0.0);
      derived_count_.resize(need, 0);
    }
    size_t k = static_cast<size_t>(node) * model_count() + model;
    derived_sum_[k] += mean;
    derived_count_[k] += 1;
  }
  virtual double derived_mean_of(const EvidenceEstimate&) const { return 0.0; }

 private:
  std::atomic<long> draws_{0};
  std::atomic<long> failures_{0};
  mutable std::mutex derived_mutex_;
  std::vector<double> derived_sum_;
  std::vector<long> derived_count_;
};

/// Annealed-SMC estimates, one independent substream per (node, model, epoch).
class SmcEvidenceSource final : public EvidenceSource {
 public:
  SmcEvidenceSource(const NodeDataImage& data, const NodeModelFamily& family,
                    SmcConfig cfg, std::uint64_t master_seed,
                    bool keep_particles = false,
                    std::uint64_t stream_salt = 0)
      : data_(data), family_(family), cfg_(std::move(cfg)),
        seed_(master_seed), keep_particles_(keep_particles),
        salt_(stream_salt) {
    cfg_.validate();
  }

  int model_count() const override { return family_.model_count(); }
  int node_count() const override { return data_.node_count(); }
  const SmcConfig& config() const { return cfg_; }

 protected:
  EvidenceEstimate estimate_impl(int node, int model, int epoch) override {
    std::uint64_t seed = derive_seed(
        seed_, {stream::estimate, salt_, static_cast<std::uint64_t>(node),
                static_cast<std::uint64_t>(model),
                static_cast<std::uint64_t>(epoch)});
    auto est = estimate_evidence(data_.node(node), model, family_, cfg_, seed,
                                 keep_particles_);
    est.node = node;
    return est;
  }
  double derived_mean_of(const EvidenceEstimate& est) const override {
    int m = est.model;
    return posterior_summary(est, [&](std::span<const double> theta) {
             return family_.derived_quantity(m, theta);
           })
        .mean;
  }

 private:
  const NodeDataImage& data_;
  const NodeModelFamily& family_;
  SmcConfig cfg_;
  std::uint64_t seed_;
  bool keep_particles_;
  std::uint64_t salt_;
};

/// Zero-variance source returning the family's exact log-marginal; used to
/// test that the samplers' invariant distribution is the true posterior.
class OracleEvidenceSource final : public EvidenceSource {
 public:
  OracleEvidenceSource(const NodeDataImage& data, const NodeModelFamily& family)
      : data_(data), family_(family) {
    if (!family.has_exact_marginal())
      throw std::invalid_argument("family has no exact marginal for oracle mode");
  }

  int model_count() const override { return family_.model_count(); }
  int node_count() const override { return data_.node_count(); }

 protected:
  EvidenceEstimate estimate_impl(int node, int model, int) override {
    EvidenceEstimate est;
    est.log_z = family_.exact_log_marginal(data_.node(node), model);
    est.model = model;
    est.node = node;
    return est;
  }

 private:
  const NodeDataImage& data_;
  const NodeModelFamily& family_;
};

/// Dense |V| x |M| matrix of log-evidence values plus estimator metadata.
struct EvidenceMatrix {
  int node_count = 0;
  int model_count = 0;
  std::vector<double> log_z;  // node-major
  std::vector<int> n_particles;
  std::vector<int> n_temperatures;
  std::vector<std::uint64_t> seeds;

  EvidenceMatrix() = default;
  EvidenceMatrix(int nodes, int models)
      : node_count(nodes), model_count(models),
        log_z(static_cast<size_t>(nodes) * models, 0.0),
        n_particles(static_cast<size_t>(nodes) * models, 0),
        n_temperatures(static_cast<size_t>(nodes) * models, 0),
        seeds(static_cast<size_t>(nodes) * models, 0) {}

  size_t index(int v, int m) const {
    return static_cast<size_t>(v) * model_count + m;
  }
  double& at(int v, int m) { return log_z[index(v, m)]; }
  double at(int v, int m) const { return log_z[index(v, m)]; }
  void set(int v, int m, const EvidenceEstimate& est) {
    log_z[index(v, m)] = est.log_z;
    n_particles[index(v, m)] = est.particle_count;
    n_temperatures[index(v, m)] = est.temperature_count;
    seeds[index(v, m)] = est.seed;
  }
};

inline void save_evidence_matrix(const EvidenceMatrix& mat,
                                 const std::string& path) {
  CsvWriter csv(path, "node,model,log_z,n_particles,n_temperatures,seed");
  for (int v = 0; v < mat.node_count; ++v)
    for (int m = 0; m < mat.model_count; ++m)
      csv.row(v, m, mat.at(v, m), mat.n_particles[mat.index(v, m)],
              mat.n_temperatures[mat.index(v, m)], mat.seeds[mat.index(v, m)]);
}

inline EvidenceMatrix load_evidence_matrix(const std::string& path,
                                           int node_count, int model_count) {
  auto rows = read_csv(path, "node,model,log_z,n_particles,n_temperatures,seed");
  EvidenceMatrix mat(node_count, model_count);
  std::vector<bool> seen(mat.log_z.size(), false);
  for (const auto& r : rows) {
    int v = std::stoi(r.at(0));
    int m = std::stoi(r.at(1));
    if (v < 0 || v >= node_count || m < 0 || m >= model_count)
      throw std::invalid_argument(path + ": entry outside matrix bounds");
    mat.at(v, m) = std::stod(r.at(2));
    mat.n_particles[mat.index(v, m)] = std::stoi(r.at(3));
    mat.n_temperatures[mat.index(v, m)] = std::stoi(r.at(4));
    mat.seeds[mat.index(v, m)] = std::stoull(r.at(5));
    seen[mat.index(v, m)] = true;
  }
  for (bool s : seen)
    if (!s) throw std::invalid_argument(path + ": missing matrix entry");
  return mat;
}

}  // namespace spms
