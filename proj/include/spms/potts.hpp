#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "spms/field.hpp"
#include "spms/lattice.hpp"
#include "spms/rng.hpp"

namespace spms {

struct PottsParams {
  double coupling = 0.0;  // J >= 0
  int state_count = 2;    // D = |M| >= 2

  PottsParams(double j, int d) : coupling(j), state_count(d) {
    if (j < 0.0) throw std::invalid_argument("coupling must be non-negative");
    if (d < 2) throw std::invalid_argument("state count must be >= 2");
  }
};

/// Phase-transition coupling for a D-state Potts model on the 2-D square
/// lattice: log(1 + sqrt(D)).
inline double critical_coupling(int state_count) {
  if (state_count < 2)
    throw std::invalid_argument("state count must be >= 2");
  return std::log(1.0 + std::sqrt(static_cast<double>(state_count)));
}

/// Unnormalized log mass: J * #{edges <u,v> with equal orders}.
inline double log_prior_unnorm(const ModelField& field,
                               const PottsParams& params,
                               const LatticeGraph& graph) {
  if (field.width != graph.width() || field.height != graph.height())
    throw std::invalid_argument("field does not match graph dimensions");
  int agreements = 0;
  for (auto [u, v] : graph.edges())
    if (field[u] == field[v]) ++agreements;
  return params.coupling * agreements;
}

/// Change in the number of agreeing edges when node v switches from its
/// current order to new_order; only neighbors of v are touched.
inline int agreement_delta(const LatticeGraph& graph, const ModelField& field,
                           int v, int new_order) {
  int delta = 0;
  int old_order = field[v];
  for (int u : graph.neighbors(v)) {
    if (field[u] == new_order) ++delta;
    if (field[u] == old_order) --delta;
  }
  return delta;
}

/// Full conditional p(M_v = m | rest): proportional to
/// exp(J * #{u in d(v) : M_u = m}). Sums to 1.
inline std::vector<double> full_conditional(int v, const ModelField& field,
                                            const PottsParams& params,
                                            const LatticeGraph& graph) {
  graph.check_node(v);
  std::vector<double> probs(static_cast<size_t>(params.state_count));
  double norm = 0.0;
  for (int m = 0; m < params.state_count; ++m) {
    int count = 0;
    for (int u : graph.neighbors(v))
      if (field[u] == m) ++count;
    probs[static_cast<size_t>(m)] = std::exp(params.coupling * count);
    norm += probs[static_cast<size_t>(m)];
  }
  for (auto& p : probs) p /= norm;
  return probs;
}

inline int sample_categorical(const std::vector<double>& probs, Rng& rng) {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (size_t m = 0; m < probs.size(); ++m) {
    acc += probs[m];
    if (u < acc) return static_cast<int>(m);
  }
  return static_cast<int>(probs.size()) - 1;
}

/// One Gibbs sweep (Glauber dynamics) in fixed raster order; mutates the
/// field in place.
inline void gibbs_sweep(ModelField& field, const PottsParams& params,
                        const LatticeGraph& graph, Rng& rng) {
  for (int v = 0; v < graph.node_count(); ++v)
    field[v] = sample_categorical(full_conditional(v, field, params, graph), rng);
}

struct PottsTable {
  std::vector<double> probs;  // indexed by mixed-radix configuration id
  double zeta = 0.0;          // partition function
};

/// Mixed-radix encoding of a configuration; node v contributes
/// order(v) * D^v.
inline std::uint64_t encode_field(const ModelField& field, int state_count) {
  std::uint64_t id = 0;
  for (int v = field.size() - 1; v >= 0; --v)
    id = id * static_cast<std::uint64_t>(state_count) +
         static_cast<std::uint64_t>(field[v]);
  return id;
}

inline ModelField decode_field(std::uint64_t id, int state_count, int width,
                               int height) {
  ModelField field(width, height);
  for (int v = 0; v < field.size(); ++v) {
    field[v] = static_cast<int>(id % static_cast<std::uint64_t>(state_count));
    id /= static_cast<std::uint64_t>(state_count);
  }
  return field;
}

/// Exact normalized Potts table by exhaustive enumeration; guarded to
/// D^|V| <= 2^20 states.
inline PottsTable enumerate_exact(const LatticeGraph& graph,
                                  const PottsParams& params) {
  double log_states = graph.node_count() * std::log(static_cast<double>(params.state_count));
  if (log_states > 20.0 * std::log(2.0) + 1e-9)
    throw std::length_error("Potts state space too large to enumerate");
  std::uint64_t n = 1;
  for (int v = 0; v < graph.node_count(); ++v)
    n *= static_cast<std::uint64_t>(params.state_count);

  PottsTable table;
  table.probs.resize(n);
  for (std::uint64_t id = 0; id < n; ++id) {
    ModelField f = decode_field(id, params.state_count, graph.width(), graph.height());
    double w = std::exp(log_prior_unnorm(f, params, graph));
    table.probs[id] = w;
    table.zeta += w;
  }
  for (auto& p : table.probs) p /= table.zeta;
  return table;
}

}  // namespace spms
