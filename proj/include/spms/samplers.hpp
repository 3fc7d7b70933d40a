#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spms/csv.hpp"
#include "spms/evidence.hpp"
#include "spms/field.hpp"
#include "spms/lattice.hpp"
#include "spms/parallel.hpp"
#include "spms/potts.hpp"
#include "spms/rng.hpp"

namespace spms {

/// Chain state extended with the evidence estimates the pseudo-marginal
/// acceptance ratios run on. NWPM keeps one estimate per node, tagged with
/// that node's current model order; NWSE/NWMA keep the full node-by-model
/// matrix.
struct AugmentedState {
  ModelField field;
  std::vector<double> node_log_z;   // NWPM: one entry per node
  std::vector<int> node_model_tag;  // NWPM: order each entry belongs to
  EvidenceMatrix matrix;            // NWSE / NWMA
  long iteration = 0;
};

/// An evidence refresh event: stored estimate for (node, model) replaced.
struct RefreshEvent {
  long iteration = 0;
  int node = 0;
  int model = 0;
  double log_z = 0.0;
};

/// Delta-encoded record of the model-order field per graphical iteration,
/// plus acceptance counters, per-iteration wall clock and the evidence
/// refresh log. Memory is bounded by the number of actual changes.
class ChainTrace {
 public:
  ChainTrace(int width, int height, int model_count)
      : width_(width), height_(height), model_count_(model_count),
        counts_(static_cast<size_t>(width) * height * model_count, 0) {}

  void record(const ModelField& field, double elapsed_s, long draws) {
    if (field.width != width_ || field.height != height_)
      throw std::invalid_argument("field does not match trace dimensions");
    if (iterations_ == 0) {
      base_ = field;
    } else {
      std::vector<std::pair<int, int>> delta;
      for (int v = 0; v < field.size(); ++v)
        if (field[v] != current_[v]) delta.emplace_back(v, field[v]);
      deltas_.push_back(std::move(delta));
    }
    current_ = field;
    for (int v = 0; v < field.size(); ++v)
      ++counts_[static_cast<size_t>(v) * model_count_ + field[v]];
    elapsed_s_.push_back(elapsed_s);
    draws_per_iter_.push_back(draws);
    ++iterations_;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int model_count() const { return model_count_; }
  long iteration_count() const { return iterations_; }
  const ModelField& last_field() const { return current_; }
  const std::vector<double>& elapsed_s() const { return elapsed_s_; }
  const std::vector<long>& draws_per_iteration() const { return draws_per_iter_; }

  /// Number of sweeps in which node v held order m.
  long count(int v, int m) const {
    return counts_[static_cast<size_t>(v) * model_count_ + m];
  }

  /// Visits the field after each recorded iteration, in order (1-based).
  void for_each(const std::function<void(long iter, const ModelField&)>& fn) const {
    if (iterations_ == 0) return;
    ModelField f = base_;
    fn(1, f);
    for (size_t i = 0; i < deltas_.size(); ++i) {
      for (auto [v, m] : deltas_[i]) f[v] = m;
      fn(static_cast<long>(i) + 2, f);
    }
  }

  ModelField field_at(long iter) const {  // 1-based; O(iter) replay
    if (iter < 1 || iter > iterations_)
      throw std::invalid_argument("iteration out of range");
    ModelField f = base_;
    for (long i = 0; i + 2 <= iter; ++i)
      for (auto [v, m] : deltas_[static_cast<size_t>(i)]) f[v] = m;
    return f;
  }

  long accepts = 0;        // Q1 / NWPM state-move acceptances
  long proposals = 0;      // Q1 / NWPM state-move proposals
  long block_accepts = 0;  // NWMA Q2 block acceptances
  long block_proposals = 0;
  std::vector<RefreshEvent> refresh_log;

  double accept_rate() const {
    return proposals > 0 ? static_cast<double>(accepts) / proposals : 0.0;
  }

 private:
  int width_;
  int height_;
  int model_count_;
  long iterations_ = 0;
  ModelField base_;
  ModelField current_;
  std::vector<std::vector<std::pair<int, int>>> deltas_;
  std::vector<long> counts_;
  std::vector<double> elapsed_s_;
  std::vector<long> draws_per_iter_;
};

/// Result of a spatial sampler run: the trace plus the final augmented state.
struct RunResult {
  ChainTrace trace;
  AugmentedState state;
};

struct SamplerConfig {
  double coupling = 0.0;           // Potts J
  long iterations = 100;           // graphical iterations n
  int refresh_period = 1;          // NWMA kappa
  int workers = 1;                 // parallel evidence jobs
  double failure_budget = 1e-3;    // max failed-estimate fraction
  std::uint64_t seed = 1;          // chain proposal/acceptance stream
  std::uint64_t chain_salt = 0;    // distinguishes replicate chains
};

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline void check_failure_budget(const EvidenceSource& source, long draws0,
                                 long failures0, double budget) {
  long draws = source.draw_count() - draws0;
  long failures = source.failure_count() - failures0;
  if (draws > 0 && failures > budget * draws && failures > 0)
    throw std::runtime_error(
        "evidence estimation failures exceeded budget: " +
        std::to_string(failures) + " of " + std::to_string(draws));
}

inline int propose_other_order(int current, int model_count, Rng& rng) {
  std::uniform_int_distribution<int> d(0, model_count - 2);
  int m = d(rng);
  return m >= current ? m + 1 : m;
}

}  // namespace detail

/// Per-node maximizer of log Z-hat + log prior(M); ties toward the smaller
/// order. With a uniform model prior this is the spatially independent
/// posterior-mode selection.
inline ModelField independent_select(const EvidenceMatrix& matrix, int width,
                                     int height,
                                     std::span<const double> log_model_prior = {}) {
  if (width * height != matrix.node_count)
    throw std::invalid_argument("matrix does not match lattice dimensions");
  if (!log_model_prior.empty() &&
      static_cast<int>(log_model_prior.size()) != matrix.model_count)
    throw std::invalid_argument("model prior size mismatch");
  ModelField out(width, height);
  for (int v = 0; v < matrix.node_count; ++v) {
    int best = 0;
    double best_val = detail::kNegInf;
    for (int m = 0; m < matrix.model_count; ++m) {
      double val = matrix.at(v, m) +
                   (log_model_prior.empty() ? 0.0 : log_model_prior[static_cast<size_t>(m)]);
      if (val > best_val) {
        best_val = val;
        best = m;
      }
    }
    out[v] = best;
  }
  return out;
}

/// Builds the full node-by-model evidence matrix; jobs are independent
/// (per-(node, model, epoch) substreams), so the worker count never changes
/// the result. Failed estimates enter as -inf.
inline EvidenceMatrix build_evidence_matrix(EvidenceSource& source, int epoch,
                                            int workers) {
  int nodes = source.node_count();
  int models = source.model_count();
  EvidenceMatrix matrix(nodes, models);
  parallel_for(nodes * models, workers, [&](int job) {
    int v = job / models;
    int m = job % models;
    auto est = source.estimate(v, m, epoch);
    if (est) {
      matrix.set(v, m, *est);
    } else {
      matrix.at(v, m) = detail::kNegInf;
    }
  });
  return matrix;
}

/// Node-wise pseudo-marginal chain: a Metropolis-within-Gibbs raster sweep
/// where each proposal draws a fresh evidence estimate for the proposed
/// order and accepts with min(1, (Z-hat*/Z-hat) * exp(J * d_agreements)).
/// The first graphical iteration estimates the evidence of the initial field
/// (one draw per node), so a run of n iterations draws exactly n*|V|
/// estimates.
inline RunResult nwpm_run(EvidenceSource& source, const LatticeGraph& graph,
                          const SamplerConfig& cfg, const ModelField& init) {
  if (cfg.iterations < 1) throw std::invalid_argument("need >= 1 iteration");
  if (init.width != graph.width() || init.height != graph.height())
    throw std::invalid_argument("initial field does not match graph");
  int nodes = graph.node_count();
  int models = source.model_count();
  if (models < 2) throw std::invalid_argument("need >= 2 model orders");

  long draws0 = source.draw_count();
  long failures0 = source.failure_count();
  Rng rng = make_rng(cfg.seed, {stream::chain, cfg.chain_salt});
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  AugmentedState state;
  state.field = init;
  state.node_log_z.assign(static_cast<size_t>(nodes), detail::kNegInf);
  state.node_model_tag.assign(static_cast<size_t>(nodes), -1);

  ChainTrace trace(graph.width(), graph.height(), models);
  using clock = std::chrono::steady_clock;

  for (long iter = 1; iter <= cfg.iterations; ++iter) {
    auto t0 = clock::now();
    long draws_before = source.draw_count();
    if (iter == 1) {
      // initialization sweep: estimate the evidence of the starting orders
      parallel_for(nodes, cfg.workers, [&](int v) {
        auto est = source.estimate(v, state.field[v], static_cast<int>(iter));
        state.node_log_z[static_cast<size_t>(v)] =
            est ? est->log_z : detail::kNegInf;
        state.node_model_tag[static_cast<size_t>(v)] = state.field[v];
      });
    } else {
      for (int v = 0; v < nodes; ++v) {
        int current = state.field[v];
        int proposed = detail::propose_other_order(current, models, rng);
        double u = unif(rng);
        auto est = source.estimate(v, proposed, static_cast<int>(iter));
        double prop_log_z = est ? est->log_z : detail::kNegInf;
        double log_ratio = prop_log_z - state.node_log_z[static_cast<size_t>(v)] +
                           cfg.coupling *
                               agreement_delta(graph, state.field, v, proposed);
        ++trace.proposals;
        if (std::log(u) < log_ratio) {
          ++trace.accepts;
          state.field[v] = proposed;
          state.node_log_z[static_cast<size_t>(v)] = prop_log_z;
          state.node_model_tag[static_cast<size_t>(v)] = proposed;
          trace.refresh_log.push_back({iter, v, proposed, prop_log_z});
        }
      }
    }
    state.iteration = iter;
    double elapsed = std::chrono::duration<double>(clock::now() - t0).count();
    trace.record(state.field, elapsed, source.draw_count() - draws_before);
    detail::check_failure_budget(source, draws0, failures0, cfg.failure_budget);
  }
  return {std::move(trace), std::move(state)};
}

/// Multiple-augmentation chain: keeps one stored estimate per (node, model).
/// Every sweep applies the stored-estimate state move Q1 at each node; every
/// refresh_period-th sweep additionally applies the block refresh Q2 at every
/// node (fresh estimates for all orders, accepted with the current-order
/// ratio). refresh_period > iterations gives the single-estimation chain.
inline RunResult nwma_run(EvidenceSource& source, const LatticeGraph& graph,
                          const SamplerConfig& cfg, const ModelField& init,
                          const EvidenceMatrix* precomputed = nullptr) {
  if (cfg.iterations < 1) throw std::invalid_argument("need >= 1 iteration");
  if (cfg.refresh_period < 1) throw std::invalid_argument("refresh period must be >= 1");
  if (init.width != graph.width() || init.height != graph.height())
    throw std::invalid_argument("initial field does not match graph");
  int nodes = graph.node_count();
  int models = source.model_count();
  if (models < 2) throw std::invalid_argument("need >= 2 model orders");

  long draws0 = source.draw_count();
  long failures0 = source.failure_count();
  Rng rng = make_rng(cfg.seed, {stream::chain, cfg.chain_salt});
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  AugmentedState state;
  state.field = init;
  state.matrix = precomputed ? *precomputed
                             : build_evidence_matrix(source, 0, cfg.workers);
  if (state.matrix.node_count != nodes || state.matrix.model_count != models)
    throw std::invalid_argument("evidence matrix does not match problem size");

  ChainTrace trace(graph.width(), graph.height(), models);
  using clock = std::chrono::steady_clock;
  int refresh_epoch = 0;

  for (long iter = 1; iter <= cfg.iterations; ++iter) {
    auto t0 = clock::now();
    long draws_before = source.draw_count();

    // Q1: state move per node using stored estimates only
    for (int v = 0; v < nodes; ++v) {
      int current = state.field[v];
      int proposed = detail::propose_other_order(current, models, rng);
      double log_ratio = state.matrix.at(v, proposed) -
                         state.matrix.at(v, current) +
                         cfg.coupling *
                             agreement_delta(graph, state.field, v, proposed);
      ++trace.proposals;
      if (std::log(unif(rng)) < log_ratio) {
        ++trace.accepts;
        state.field[v] = proposed;
      }
    }

    // Q2: block estimate refresh at every node on schedule
    if (iter % cfg.refresh_period == 0) {
      ++refresh_epoch;
      std::vector<double> fresh(static_cast<size_t>(nodes) * models);
      std::vector<EvidenceEstimate> fresh_meta(static_cast<size_t>(nodes) * models);
      parallel_for(nodes * models, cfg.workers, [&](int job) {
        int v = job / models;
        int m = job % models;
        auto est = source.estimate(v, m, refresh_epoch);
        size_t k = static_cast<size_t>(v) * models + m;
        if (est) {
          fresh[k] = est->log_z;
          fresh_meta[k] = *est;
        } else {
          fresh[k] = detail::kNegInf;
          fresh_meta[k].log_z = detail::kNegInf;
          fresh_meta[k].node = v;
          fresh_meta[k].model = m;
        }
      });
      for (int v = 0; v < nodes; ++v) {
        int current = state.field[v];
        size_t kc = static_cast<size_t>(v) * models + current;
        double log_ratio = fresh[kc] - state.matrix.at(v, current);
        ++trace.block_proposals;
        if (std::log(unif(rng)) < log_ratio) {
          ++trace.block_accepts;
          for (int m = 0; m < models; ++m) {
            size_t k = static_cast<size_t>(v) * models + m;
            state.matrix.set(v, m, fresh_meta[k]);
            trace.refresh_log.push_back({iter, v, m, fresh[k]});
          }
        }
      }
    }

    state.iteration = iter;
    double elapsed = std::chrono::duration<double>(clock::now() - t0).count();
    trace.record(state.field, elapsed, source.draw_count() - draws_before);
    detail::check_failure_budget(source, draws0, failures0, cfg.failure_budget);
  }
  return {std::move(trace), std::move(state)};
}

/// Single-estimation chain: the node-by-model matrix is estimated once and
/// the chain then runs on the stored values only. Identical code path to the
/// multiple-augmentation chain with the refresh schedule pushed past the end,
/// so with shared seeding the two traces coincide.
inline RunResult nwse_run(EvidenceSource& source, const LatticeGraph& graph,
                          const SamplerConfig& cfg, const ModelField& init,
                          const EvidenceMatrix* precomputed = nullptr) {
  SamplerConfig one_shot = cfg;
  one_shot.refresh_period =
      static_cast<int>(std::min<long>(cfg.iterations + 1,
                                      std::numeric_limits<int>::max()));
  return nwma_run(source, graph, one_shot, init, precomputed);
}

enum class InitMode { prior_gibbs, independent_argmax, file };

/// Draws an initial field from the Potts prior: uniform start, then a fixed
/// number of Gibbs sweeps.
inline ModelField init_field_prior_gibbs(const LatticeGraph& graph,
                                         const PottsParams& params, int sweeps,
                                         std::uint64_t seed,
                                         std::uint64_t salt = 0) {
  if (sweeps < 0) throw std::invalid_argument("sweep count must be >= 0");
  Rng rng = make_rng(seed, {stream::init_field, salt});
  // The sweep chain starts from the all-zero reference field. Below the
  // critical coupling the sweeps forget the start state quickly; above it the
  // prior is practically non-ergodic for single-site dynamics, and the chain
  // stays on the magnetized branch containing the reference state rather than
  // in an arbitrary unconverged mixture of branches.
  ModelField field(graph.width(), graph.height());
  for (int s = 0; s < sweeps; ++s) gibbs_sweep(field, params, graph, rng);
  return field;
}

inline ModelField init_field_from_file(const std::string& path,
                                       const LatticeGraph& graph) {
  ModelField field = load_field_grid(path);
  if (field.width != graph.width() || field.height != graph.height())
    throw std::invalid_argument(path + ": field dimensions do not match graph");
  return field;
}

/// Long-form trace CSV: one row per (iteration, node).
inline void save_trace_csv(const ChainTrace& trace, const std::string& path) {
  CsvWriter csv(path, "iteration,node,model");
  trace.for_each([&](long iter, const ModelField& field) {
    for (int v = 0; v < field.size(); ++v) csv.row(iter, v, field[v]);
  });
}

}  // namespace spms
