#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spms/csv.hpp"
#include "spms/evidence.hpp"
#include "spms/field.hpp"
#include "spms/samplers.hpp"

namespace spms {

/// Marginal per-node model-order frequencies and their modal field.
struct SelectionResult {
  ModelField selected;
  int model_count = 0;
  std::vector<double> frequency;  // node-major rows on the simplex

  double freq(int v, int m) const {
    return frequency[static_cast<size_t>(v) * model_count + m];
  }
};

/// Per node, the most frequent order across the trace; ties toward the
/// smaller order.
inline SelectionResult modal_select(const ChainTrace& trace) {
  if (trace.iteration_count() == 0)
    throw std::invalid_argument("empty chain trace");
  SelectionResult out;
  out.model_count = trace.model_count();
  out.selected = ModelField(trace.width(), trace.height());
  int nodes = trace.width() * trace.height();
  out.frequency.resize(static_cast<size_t>(nodes) * out.model_count);
  for (int v = 0; v < nodes; ++v) {
    long best_count = -1;
    int best = 0;
    for (int m = 0; m < out.model_count; ++m) {
      long c = trace.count(v, m);
      out.frequency[static_cast<size_t>(v) * out.model_count + m] =
          static_cast<double>(c) / trace.iteration_count();
      if (c > best_count) {
        best_count = c;
        best = m;
      }
    }
    out.selected[v] = best;
  }
  return out;
}

/// Modal selection straight from a long-form trace CSV (`iteration,node,model`).
inline SelectionResult modal_select_csv(const std::string& path, int width,
                                        int height, int model_count) {
  auto rows = read_csv(path, "iteration,node,model");
  if (rows.empty()) throw std::invalid_argument(path + ": empty trace");
  int nodes = width * height;
  std::vector<long> counts(static_cast<size_t>(nodes) * model_count, 0);
  long iterations = 0;
  for (const auto& r : rows) {
    long iter = std::stol(r.at(0));
    int v = std::stoi(r.at(1));
    int m = std::stoi(r.at(2));
    if (v < 0 || v >= nodes || m < 0 || m >= model_count)
      throw std::invalid_argument(path + ": trace entry out of range");
    iterations = std::max(iterations, iter);
    ++counts[static_cast<size_t>(v) * model_count + m];
  }
  SelectionResult out;
  out.model_count = model_count;
  out.selected = ModelField(width, height);
  out.frequency.resize(counts.size());
  for (int v = 0; v < nodes; ++v) {
    long row_total = 0;
    for (int m = 0; m < model_count; ++m)
      row_total += counts[static_cast<size_t>(v) * model_count + m];
    if (row_total != iterations)
      throw std::invalid_argument(path + ": node " + std::to_string(v) +
                                  " missing iterations");
    long best_count = -1;
    int best = 0;
    for (int m = 0; m < model_count; ++m) {
      long c = counts[static_cast<size_t>(v) * model_count + m];
      out.frequency[static_cast<size_t>(v) * model_count + m] =
          static_cast<double>(c) / iterations;
      if (c > best_count) {
        best_count = c;
        best = m;
      }
    }
    out.selected[v] = best;
  }
  return out;
}

/// 100 * (#matching nodes) / |V|.
inline double percent_correct(const ModelField& selected,
                              const ModelField& truth) {
  if (selected.width != truth.width || selected.height != truth.height)
    throw std::invalid_argument("field dimensions do not match");
  int matches = 0;
  for (int v = 0; v < selected.size(); ++v)
    if (selected[v] == truth[v]) ++matches;
  return 100.0 * matches / selected.size();
}

enum class VdMode { model_averaged, posterior_modal };

/// Volume-of-distribution map from a selection result and the evidence
/// source's stored conditional posterior means E[V_D | y_v, M].
/// model-averaged: sum_M P(M_v=M | chain) * E[V_D | y_v, M];
/// posterior-modal: E[V_D | y_v, modal order].
inline std::vector<double> vd_map(const SelectionResult& sel,
                                  const EvidenceSource& source, VdMode mode) {
  int nodes = sel.selected.size();
  std::vector<double> out(static_cast<size_t>(nodes), 0.0);
  for (int v = 0; v < nodes; ++v) {
    if (mode == VdMode::posterior_modal) {
      int m = sel.selected[v];
      if (!source.has_derived(v, m))
        throw std::invalid_argument("no particle summary for modal order at node " +
                                    std::to_string(v));
      out[static_cast<size_t>(v)] = source.derived_conditional_mean(v, m);
    } else {
      double acc = 0.0;
      for (int m = 0; m < sel.model_count; ++m) {
        double f = sel.freq(v, m);
        if (f == 0.0) continue;
        if (!source.has_derived(v, m))
          throw std::invalid_argument(
              "no particle summary for a visited order at node " +
              std::to_string(v));
        acc += f * source.derived_conditional_mean(v, m);
      }
      out[static_cast<size_t>(v)] = acc;
    }
  }
  return out;
}

/// Root of the mean squared per-pixel error.
inline double rmse(const std::vector<double>& map,
                   const std::vector<double>& truth) {
  if (map.size() != truth.size() || map.empty())
    throw std::invalid_argument("map dimensions do not match");
  double acc = 0.0;
  for (size_t i = 0; i < map.size(); ++i) {
    double d = map[i] - truth[i];
    acc += d * d;
  }
  return std::sqrt(acc / map.size());
}

/// Lower bound on the probability of selecting the correct model by argmax
/// over independent evidence estimators whose means are separated by at
/// least delta with common standard deviation sigma_star:
/// 1 - (|M| - 1) / (1 + delta^2 / (2 sigma_star^2)). May be negative; it is
/// still a valid lower bound and is returned as-is.
inline double selection_bound(double delta, double sigma_star, int m_count) {
  if (delta <= 0.0 || sigma_star <= 0.0)
    throw std::invalid_argument("delta and sigma_star must be positive");
  if (m_count < 2) throw std::invalid_argument("need >= 2 models");
  double ratio = delta * delta / (2.0 * sigma_star * sigma_star);
  return 1.0 - (m_count - 1) / (1.0 + ratio);
}

/// Map serialization: CSV `node,value`.
inline void save_map_csv(const std::vector<double>& values,
                         const std::string& path) {
  CsvWriter csv(path, "node,value");
  for (size_t v = 0; v < values.size(); ++v) csv.row(v, values[v]);
}

inline std::vector<double> load_map_csv(const std::string& path) {
  auto rows = read_csv(path, "node,value");
  std::vector<double> values(rows.size(), 0.0);
  for (const auto& r : rows) {
    size_t v = static_cast<size_t>(std::stol(r.at(0)));
    if (v >= values.size()) throw std::invalid_argument(path + ": node id gap");
    values[v] = std::stod(r.at(1));
  }
  return values;
}

/// Plain-text PGM (P2) grayscale preview; values mapped linearly from
/// [lo, hi] to [0, 255].
inline void save_pgm(const std::vector<double>& values, int width, int height,
                     const std::string& path, double lo, double hi) {
  if (static_cast<size_t>(width) * height != values.size())
    throw std::invalid_argument("pgm dimensions do not match value count");
  if (!(hi > lo)) throw std::invalid_argument("need hi > lo for pgm scaling");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "P2\n" << width << " " << height << "\n255\n";
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double v = values[static_cast<size_t>(y) * width + x];
      int g = static_cast<int>(std::lround(255.0 * (v - lo) / (hi - lo)));
      out << std::clamp(g, 0, 255) << (x + 1 < width ? " " : "\n");
    }
  }
}

/// Model-order preview: orders mapped to evenly spaced gray levels.
inline void save_field_pgm(const ModelField& field, int model_count,
                           const std::string& path) {
  std::vector<double> values(static_cast<size_t>(field.size()));
  for (int v = 0; v < field.size(); ++v)
    values[static_cast<size_t>(v)] = field[v];
  save_pgm(values, field.width, field.height, path, 0.0,
           std::max(1, model_count - 1));
}

}  // namespace spms
