#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "spms/evidence.hpp"
#include "spms/field.hpp"
#include "spms/lattice.hpp"
#include "spms/metrics.hpp"
#include "spms/parallel.hpp"
#include "spms/pet/compartment_model.hpp"
#include "spms/pet/frame_schedule.hpp"
#include "spms/pet/plasma_input.hpp"
#include "spms/pet/simulate.hpp"
#include "spms/potts.hpp"
#include "spms/samplers.hpp"
#include "spms/smc.hpp"
#include "spms/toy_model.hpp"

namespace spms {

inline constexpr const char* kVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Built-in study geometry and schedules
// ---------------------------------------------------------------------------

/// Default 20x20 ground-truth geometry: four homogeneous regions of varying
/// complexity — background (label 0), one large square block (1) and two
/// smaller rectangular blocks (2, 3).
inline RegionMask default_region_mask() {
  RegionMask mask;
  mask.width = 20;
  mask.height = 20;
  mask.labels.assign(400, 0);
  auto block = [&](int x0, int x1, int y0, int y1, int label) {
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        mask.labels[static_cast<size_t>(y) * 20 + x] = label;
  };
  block(2, 9, 2, 9, 1);     // large 8x8 square block
  block(13, 18, 3, 6, 2);   // small 6x4 rectangle
  block(6, 13, 14, 16, 3);  // small 8x3 rectangle
  return mask;
}

/// Acquisition frame durations in seconds: a 30 s background frame followed
/// by (3x10, 7x30, 12x120, 6x300, 75, 11x120, 210, 5x300, 450, 2x600).
/// The source lists these as 32 frames of increasing duration, but the
/// stated multiplicities expand to 50 entries including the background; the
/// expansion is used as written.
inline std::vector<double> default_frame_durations() {
  std::vector<double> d;
  auto rep = [&](int n, double len) { d.insert(d.end(), n, len); };
  rep(1, 30);   // variable-length background, taken as 30 s
  rep(3, 10);
  rep(7, 30);
  rep(12, 120);
  rep(6, 300);
  rep(1, 75);
  rep(11, 120);
  rep(1, 210);
  rep(5, 300);
  rep(1, 450);
  rep(2, 600);
  return d;
}

/// Ground-truth micro-parameters per compartment count (1, 2, 3).
inline pet::TruthTable default_pet_truth() {
  pet::TruthTable t;
  t.by_order.push_back({{4.9e-3}, {5e-4}, pet::NormalNoise{1.0}});
  t.by_order.push_back({{4.9e-3, 1.8e-3}, {5e-4, 0.011}, pet::NormalNoise{1.0}});
  t.by_order.push_back(
      {{4.4e-3, 1e-4, 1.4e-3}, {4.5e-4, 2.7e-3, 1e-2}, pet::NormalNoise{1.0}});
  return t;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string name = "custom";
  std::string study = "toy";  // toy | pet
  int width = 20;
  int height = 20;
  std::string mask_path;  // empty -> built-in mask (upscaled if needed)

  // toy family
  std::vector<double> toy_mu0 = {5.0, -5.0};
  double toy_sigma0 = 5.0;
  double toy_sigma = 1.0;
  std::vector<std::string> toy_labels = {"A", "B"};
  std::vector<int> region_orders = {0, 1, 1, 1};  // model order per region label

  // pet family
  std::string plasma_path;    // empty -> synthetic bolus
  std::string schedule_path;  // empty -> built-in schedule
  double noise_level = 0.5;
  int pet_model_count = 3;
  bool student_t = false;

  // spatial prior
  double coupling = 0.4;
  std::vector<double> coupling_sweep;  // empty -> {coupling}

  // samplers to run; each of: indep | nwpm | nwse | nwma
  std::vector<std::string> samplers = {"nwpm"};
  long iterations = 100;
  int refresh_period = 10;   // nwma
  std::string init_mode = "prior-gibbs";  // prior-gibbs | independent-argmax | file
  std::string init_path;
  int init_sweeps = 50;

  // SMC evidence estimator
  int particles = 50;
  int temperatures = 80;
  double schedule_power = 5.0;
  double resample_threshold = 0.5;
  bool resample_every_step = false;
  int move_count = 1;
  // Optional per-sampler budget overrides. The one-shot / stored-matrix
  // samplers draw far fewer estimates than the NWPM chain, so studies
  // typically give them a larger SMC budget. 0 -> fall through:
  // nwma -> matrix -> indep -> (particles, temperatures).
  int indep_particles = 0;
  int indep_temperatures = 0;
  int matrix_particles = 0;  // nwse (and default for nwma)
  int matrix_temperatures = 0;
  int nwma_particles = 0;
  int nwma_temperatures = 0;

  int replicates = 20;
  std::uint64_t seed = 1;
  int workers = 1;
  std::string out_dir = "out";
  bool write_traces = false;
  bool keep_particles = false;  // retain particle summaries (V_D maps)

  void validate() const {
    if (study != "toy" && study != "pet")
      throw std::invalid_argument("study must be 'toy' or 'pet'");
    if (width < 1 || height < 1)
      throw std::invalid_argument("lattice dimensions must be positive");
    if (study == "toy" && toy_mu0.size() < 2)
      throw std::invalid_argument("toy family needs >= 2 model orders");
    if (study == "pet" && (pet_model_count < 2 || pet_model_count > 3))
      throw std::invalid_argument("pet model count must be 2 or 3");
    if (coupling < 0.0) throw std::invalid_argument("coupling must be >= 0");
    for (double j : coupling_sweep)
      if (j < 0.0) throw std::invalid_argument("coupling must be >= 0");
    if (samplers.empty()) throw std::invalid_argument("no samplers configured");
    for (const auto& s : samplers)
      if (s != "indep" && s != "nwpm" && s != "nwse" && s != "nwma")
        throw std::invalid_argument("unknown sampler '" + s + "'");
    if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
    if (refresh_period < 1) throw std::invalid_argument("refresh period must be >= 1");
    if (init_mode != "prior-gibbs" && init_mode != "independent-argmax" &&
        init_mode != "file")
      throw std::invalid_argument("unknown init mode '" + init_mode + "'");
    if (init_mode == "file" && init_path.empty())
      throw std::invalid_argument("file init mode needs init_path");
    if (particles < 2 || temperatures < 1)
      throw std::invalid_argument("invalid SMC budget");
    if (replicates < 1) throw std::invalid_argument("replicates must be >= 1");
    if (workers < 1) throw std::invalid_argument("workers must be >= 1");
    if (noise_level <= 0.0) throw std::invalid_argument("noise level must be > 0");
    int labels_needed = 4;
    if (static_cast<int>(region_orders.size()) < labels_needed)
      throw std::invalid_argument("need a model order for each of 4 regions");
    int orders = study == "toy" ? static_cast<int>(toy_mu0.size()) : pet_model_count;
    for (int o : region_orders)
      if (o < 0 || o >= orders)
        throw std::invalid_argument("region order outside model space");
  }

  std::vector<double> couplings() const {
    return coupling_sweep.empty() ? std::vector<double>{coupling} : coupling_sweep;
  }

  SmcConfig smc() const {
    SmcConfig c;
    c.particle_count = particles;
    c.temperature_count = temperatures;
    c.schedule_power = schedule_power;
    c.resample_threshold = resample_threshold;
    c.resample = resample_every_step ? ResamplePolicy::every_step
                                     : ResamplePolicy::ess_threshold;
    c.move_count = move_count;
    return c;
  }
  SmcConfig smc_indep() const {
    SmcConfig c = smc();
    if (indep_particles > 0) c.particle_count = indep_particles;
    if (indep_temperatures > 0) c.temperature_count = indep_temperatures;
    return c;
  }
  SmcConfig smc_matrix() const {
    SmcConfig c = smc_indep();
    if (matrix_particles > 0) c.particle_count = matrix_particles;
    if (matrix_temperatures > 0) c.temperature_count = matrix_temperatures;
    return c;
  }
  SmcConfig smc_nwma() const {
    SmcConfig c = smc_matrix();
    if (nwma_particles > 0) c.particle_count = nwma_particles;
    if (nwma_temperatures > 0) c.temperature_count = nwma_temperatures;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{
      {"name", c.name},
      {"study", c.study},
      {"width", c.width},
      {"height", c.height},
      {"mask_path", c.mask_path},
      {"toy_mu0", c.toy_mu0},
      {"toy_sigma0", c.toy_sigma0},
      {"toy_sigma", c.toy_sigma},
      {"toy_labels", c.toy_labels},
      {"region_orders", c.region_orders},
      {"plasma_path", c.plasma_path},
      {"schedule_path", c.schedule_path},
      {"noise_level", c.noise_level},
      {"pet_model_count", c.pet_model_count},
      {"student_t", c.student_t},
      {"coupling", c.coupling},
      {"coupling_sweep", c.coupling_sweep},
      {"samplers", c.samplers},
      {"iterations", c.iterations},
      {"refresh_period", c.refresh_period},
      {"init_mode", c.init_mode},
      {"init_path", c.init_path},
      {"init_sweeps", c.init_sweeps},
      {"particles", c.particles},
      {"temperatures", c.temperatures},
      {"schedule_power", c.schedule_power},
      {"resample_threshold", c.resample_threshold},
      {"resample_every_step", c.resample_every_step},
      {"move_count", c.move_count},
      {"indep_particles", c.indep_particles},
      {"indep_temperatures", c.indep_temperatures},
      {"matrix_particles", c.matrix_particles},
      {"matrix_temperatures", c.matrix_temperatures},
      {"nwma_particles", c.nwma_particles},
      {"nwma_temperatures", c.nwma_temperatures},
      {"replicates", c.replicates},
      {"seed", c.seed},
      {"workers", c.workers},
      {"out_dir", c.out_dir},
      {"write_traces", c.write_traces},
      {"keep_particles", c.keep_particles}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  ExperimentConfig defaults;
  auto get = [&](const char* key, auto& field, const auto& fallback) {
    field = j.value(key, fallback);
  };
  get("name", c.name, defaults.name);
  get("study", c.study, defaults.study);
  get("width", c.width, defaults.width);
  get("height", c.height, defaults.height);
  get("mask_path", c.mask_path, defaults.mask_path);
  get("toy_mu0", c.toy_mu0, defaults.toy_mu0);
  get("toy_sigma0", c.toy_sigma0, defaults.toy_sigma0);
  get("toy_sigma", c.toy_sigma, defaults.toy_sigma);
  get("toy_labels", c.toy_labels, defaults.toy_labels);
  get("region_orders", c.region_orders, defaults.region_orders);
  get("plasma_path", c.plasma_path, defaults.plasma_path);
  get("schedule_path", c.schedule_path, defaults.schedule_path);
  get("noise_level", c.noise_level, defaults.noise_level);
  get("pet_model_count", c.pet_model_count, defaults.pet_model_count);
  get("student_t", c.student_t, defaults.student_t);
  get("coupling", c.coupling, defaults.coupling);
  get("coupling_sweep", c.coupling_sweep, defaults.coupling_sweep);
  get("samplers", c.samplers, defaults.samplers);
  get("iterations", c.iterations, defaults.iterations);
  get("refresh_period", c.refresh_period, defaults.refresh_period);
  get("init_mode", c.init_mode, defaults.init_mode);
  get("init_path", c.init_path, defaults.init_path);
  get("init_sweeps", c.init_sweeps, defaults.init_sweeps);
  get("particles", c.particles, defaults.particles);
  get("temperatures", c.temperatures, defaults.temperatures);
  get("schedule_power", c.schedule_power, defaults.schedule_power);
  get("resample_threshold", c.resample_threshold, defaults.resample_threshold);
  get("resample_every_step", c.resample_every_step, defaults.resample_every_step);
  get("move_count", c.move_count, defaults.move_count);
  get("indep_particles", c.indep_particles, defaults.indep_particles);
  get("indep_temperatures", c.indep_temperatures, defaults.indep_temperatures);
  get("matrix_particles", c.matrix_particles, defaults.matrix_particles);
  get("matrix_temperatures", c.matrix_temperatures, defaults.matrix_temperatures);
  get("nwma_particles", c.nwma_particles, defaults.nwma_particles);
  get("nwma_temperatures", c.nwma_temperatures, defaults.nwma_temperatures);
  get("replicates", c.replicates, defaults.replicates);
  get("seed", c.seed, defaults.seed);
  get("workers", c.workers, defaults.workers);
  get("out_dir", c.out_dir, defaults.out_dir);
  get("write_traces", c.write_traces, defaults.write_traces);
  get("keep_particles", c.keep_particles, defaults.keep_particles);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  ExperimentConfig cfg = j.get<ExperimentConfig>();
  cfg.validate();
  return cfg;
}

inline void save_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  nlohmann::json j = cfg;
  out << j.dump(2) << "\n";
}

/// FNV-1a over the canonical JSON dump; identifies a config in manifests.
/// Execution details that cannot change any result (output directory, worker
/// count, trace dumping) are normalized out so reruns hash identically.
inline std::string config_hash(const ExperimentConfig& cfg) {
  ExperimentConfig canonical = cfg;
  canonical.out_dir = "";
  canonical.workers = 1;
  canonical.write_traces = false;
  nlohmann::json j = canonical;
  std::string dump = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

inline std::vector<std::string> preset_names() {
  return {"toy-study1", "toy-study1-large", "toy-study2", "pet-sim",
          "pet-sim-desk"};
}

inline ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  if (name == "toy-study1") {
    // coupling sweep at fixed SMC budget, chain replicates on one image
    c.study = "toy";
    c.samplers = {"nwpm"};
    c.iterations = 100;
    c.particles = 50;
    c.temperatures = 80;
    c.replicates = 50;
    c.seed = 34;
    for (int i = 0; i <= 25; ++i) c.coupling_sweep.push_back(0.2 * i);
  } else if (name == "toy-study1-large") {
    c.study = "toy";
    c.width = 100;
    c.height = 100;
    c.toy_mu0 = {7.0, 0.0, -7.0};
    c.toy_labels = {"C", "D", "E"};
    c.region_orders = {0, 1, 2, 2};
    c.samplers = {"nwpm"};
    c.iterations = 100;
    c.particles = 50;
    c.temperatures = 80;
    c.replicates = 50;
    for (int i = 0; i <= 25; ++i) c.coupling_sweep.push_back(0.2 * i);
  } else if (name == "toy-study2") {
    c.study = "toy";
    c.samplers = {"indep", "nwpm", "nwse", "nwma"};
    c.iterations = 200;
    c.particles = 50;
    c.temperatures = 80;
    c.matrix_particles = 200;  // stored-matrix samplers run a larger budget
    c.matrix_temperatures = 500;
    c.refresh_period = 10;
    c.replicates = 100;
    c.coupling = 0.4;
    c.seed = 34;
  } else if (name == "pet-sim") {
    c.study = "pet";
    c.region_orders = {1, 2, 0, 0};  // orders are 0-based compartment counts - 1
    c.samplers = {"indep", "nwpm", "nwse", "nwma"};
    c.iterations = 100;
    c.particles = 100;
    c.temperatures = 400;
    c.indep_particles = 400;
    c.indep_temperatures = 600;
    c.nwma_particles = 200;
    c.nwma_temperatures = 600;
    c.refresh_period = 50;
    c.replicates = 30;
    c.coupling = 0.4;
    c.keep_particles = true;
  } else if (name == "pet-sim-desk") {
    // reduced variant sized for a single desktop core
    c.study = "pet";
    c.width = 10;
    c.height = 10;
    c.region_orders = {1, 2, 0, 0};
    c.samplers = {"indep", "nwpm", "nwse", "nwma"};
    c.iterations = 20;
    c.particles = 100;
    c.temperatures = 200;
    c.move_count = 1;
    c.indep_particles = 400;
    c.indep_temperatures = 300;
    c.nwma_particles = 200;
    c.nwma_temperatures = 300;
    c.refresh_period = 10;
    c.replicates = 10;
    c.coupling = 0.4;
    c.keep_particles = true;
  } else {
    throw std::invalid_argument("unknown preset '" + name + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Problem assembly and simulation
// ---------------------------------------------------------------------------

/// Everything a sampler run needs: graph, ground truth, simulated data, the
/// node model family and (for PET) the true V_D map.
struct StudyProblem {
  LatticeGraph graph{1, 1};
  ModelField truth;
  NodeDataImage data;
  std::unique_ptr<NodeModelFamily> family;
  std::vector<double> vd_truth;  // PET only; per-node true V_D
  // PET inputs kept alive for the family
  std::optional<pet::PlasmaInput> plasma;
  std::optional<pet::FrameSchedule> schedule;
};

inline RegionMask study_mask(const ExperimentConfig& cfg) {
  RegionMask mask =
      cfg.mask_path.empty() ? default_region_mask() : load_region_mask(cfg.mask_path);
  if (mask.width != cfg.width || mask.height != cfg.height)
    mask = resample_mask(mask, cfg.width, cfg.height);
  for (size_t label = 0; label < cfg.region_orders.size(); ++label)
    mask.order_of_label[static_cast<int>(label)] =
        cfg.region_orders[label];
  return mask;
}

inline StudyProblem build_problem(const ExperimentConfig& cfg) {
  cfg.validate();
  StudyProblem p;
  p.graph = LatticeGraph(cfg.width, cfg.height);
  p.truth = ground_truth_field(study_mask(cfg));

  if (cfg.study == "toy") {
    ToyModelParams params;
    params.mu0 = cfg.toy_mu0;
    params.sigma0 = cfg.toy_sigma0;
    params.sigma = cfg.toy_sigma;
    params.labels = cfg.toy_labels;
    p.data = toy_simulate(p.truth, params, cfg.seed);
    p.family = std::make_unique<ToyModelFamily>(params);
    return p;
  }

  // PET study
  p.schedule = cfg.schedule_path.empty()
                   ? pet::schedule_from_durations(default_frame_durations())
                   : pet::load_frame_schedule(cfg.schedule_path);
  std::vector<double> boundaries(p.schedule->ends.begin() + 1,
                                 p.schedule->ends.end());
  p.plasma = cfg.plasma_path.empty()
                 ? pet::synthetic_bolus_input(1.0, 1.0 / 60.0,
                                              p.schedule->total_end(), boundaries)
                 : pet::load_plasma_input(cfg.plasma_path);

  pet::TruthTable truth_table = default_pet_truth();
  truth_table.by_order.resize(static_cast<size_t>(cfg.pet_model_count));
  p.data = pet::simulate_pet_image(p.truth, truth_table, *p.plasma, *p.schedule,
                                   cfg.noise_level, cfg.seed);
  p.vd_truth.resize(static_cast<size_t>(p.truth.size()));
  for (int v = 0; v < p.truth.size(); ++v)
    p.vd_truth[static_cast<size_t>(v)] =
        pet::volume_of_distribution(truth_table.at(p.truth[v]));

  pet::PriorConfig prior;
  prior.student_t = cfg.student_t;
  p.family = std::make_unique<pet::PetModelFamily>(
      *p.plasma, *p.schedule, prior, cfg.pet_model_count);
  return p;
}

// ---------------------------------------------------------------------------
// Study driver
// ---------------------------------------------------------------------------

struct ReplicateOutcome {
  double coupling = 0.0;
  std::string sampler;
  int replicate = 0;
  bool failed = false;
  std::string error;
  double percent_correct = 0.0;
  double accept_rate = 0.0;
  double elapsed_s = 0.0;
  long evidence_draws = 0;
  double vd_rmse_averaged = std::numeric_limits<double>::quiet_NaN();
  double vd_rmse_modal = std::numeric_limits<double>::quiet_NaN();
  // cumulative percent-correct after each graphical iteration
  std::vector<double> percent_correct_curve;
};

struct StudyReport {
  std::vector<ReplicateOutcome> outcomes;
  int failed_replicates = 0;
};

namespace detail {

/// Cumulative modal percent-correct after each iteration of a trace.
inline std::vector<double> cumulative_percent_correct(const ChainTrace& trace,
                                                      const ModelField& truth) {
  int nodes = truth.size();
  int models = trace.model_count();
  std::vector<long> counts(static_cast<size_t>(nodes) * models, 0);
  std::vector<double> curve;
  curve.reserve(static_cast<size_t>(trace.iteration_count()));
  trace.for_each([&](long, const ModelField& field) {
    int correct = 0;
    for (int v = 0; v < nodes; ++v) {
      size_t row = static_cast<size_t>(v) * models;
      ++counts[row + field[v]];
      long best_count = -1;
      int best = 0;
      for (int m = 0; m < models; ++m)
        if (counts[row + m] > best_count) {
          best_count = counts[row + m];
          best = m;
        }
      if (best == truth[v]) ++correct;
    }
    curve.push_back(100.0 * correct / nodes);
  });
  return curve;
}

inline std::uint64_t sampler_salt(const std::string& sampler, double coupling,
                                  int replicate) {
  // distinct evidence/chain substreams per (sampler, coupling, replicate)
  std::uint64_t h = mix64(static_cast<std::uint64_t>(replicate) + 1);
  for (char ch : sampler) h = mix64(h ^ static_cast<std::uint64_t>(ch));
  std::uint64_t jbits;
  static_assert(sizeof(double) == sizeof(std::uint64_t));
  std::memcpy(&jbits, &coupling, sizeof(jbits));
  return mix64(h ^ jbits);
}

}  // namespace detail

/// Runs one (sampler, coupling, replicate) cell against a prepared problem.
inline ReplicateOutcome run_replicate(const ExperimentConfig& cfg,
                                      const StudyProblem& problem,
                                      const std::string& sampler, double coupling,
                                      int replicate,
                                      const std::string& trace_path = "") {
  ReplicateOutcome out;
  out.coupling = coupling;
  out.sampler = sampler;
  out.replicate = replicate;

  std::uint64_t salt = detail::sampler_salt(sampler, coupling, replicate);
  SmcConfig smc_cfg = sampler == "indep"  ? cfg.smc_indep()
                      : sampler == "nwse" ? cfg.smc_matrix()
                      : sampler == "nwma" ? cfg.smc_nwma()
                                          : cfg.smc();
  SmcEvidenceSource source(problem.data, *problem.family, smc_cfg, cfg.seed,
                           cfg.keep_particles, salt);

  auto t0 = std::chrono::steady_clock::now();
  try {
    if (sampler == "indep") {
      EvidenceMatrix matrix = build_evidence_matrix(source, 0, cfg.workers);
      ModelField selected =
          independent_select(matrix, cfg.width, cfg.height);
      out.percent_correct = percent_correct(selected, problem.truth);
      out.evidence_draws = source.draw_count();
      out.percent_correct_curve = {out.percent_correct};
      if (cfg.keep_particles && !problem.vd_truth.empty()) {
        SelectionResult sel;
        sel.selected = selected;
        sel.model_count = source.model_count();
        sel.frequency.assign(
            static_cast<size_t>(selected.size()) * sel.model_count, 0.0);
        // independent selection has no chain; use softmax posterior weights
        for (int v = 0; v < selected.size(); ++v) {
          std::vector<double> row(static_cast<size_t>(sel.model_count));
          for (int m = 0; m < sel.model_count; ++m) row[static_cast<size_t>(m)] = matrix.at(v, m);
          double lse = logsumexp(row);
          for (int m = 0; m < sel.model_count; ++m)
            sel.frequency[static_cast<size_t>(v) * sel.model_count + m] =
                std::exp(row[static_cast<size_t>(m)] - lse);
        }
        out.vd_rmse_averaged =
            rmse(vd_map(sel, source, VdMode::model_averaged), problem.vd_truth);
        out.vd_rmse_modal =
            rmse(vd_map(sel, source, VdMode::posterior_modal), problem.vd_truth);
      }
    } else {
      SamplerConfig run_cfg;
      run_cfg.coupling = coupling;
      run_cfg.iterations = cfg.iterations;
      run_cfg.refresh_period = cfg.refresh_period;
      run_cfg.workers = cfg.workers;
      run_cfg.seed = cfg.seed;
      run_cfg.chain_salt = salt;

      ModelField init(cfg.width, cfg.height);
      if (cfg.init_mode == "prior-gibbs") {
        init = init_field_prior_gibbs(
            problem.graph, PottsParams(coupling, source.model_count()),
            cfg.init_sweeps, cfg.seed, salt);
      } else if (cfg.init_mode == "independent-argmax") {
        SmcEvidenceSource init_source(problem.data, *problem.family,
                                      cfg.smc_indep(), cfg.seed, false,
                                      mix64(salt ^ 0xA11));
        init = independent_select(
            build_evidence_matrix(init_source, 0, cfg.workers), cfg.width,
            cfg.height);
      } else {
        init = init_field_from_file(cfg.init_path, problem.graph);
      }

      RunResult result = sampler == "nwpm"
                             ? nwpm_run(source, problem.graph, run_cfg, init)
                         : sampler == "nwse"
                             ? nwse_run(source, problem.graph, run_cfg, init)
                             : nwma_run(source, problem.graph, run_cfg, init);

      SelectionResult sel = modal_select(result.trace);
      out.percent_correct = percent_correct(sel.selected, problem.truth);
      out.accept_rate = result.trace.accept_rate();
      out.evidence_draws = source.draw_count();
      out.percent_correct_curve =
          detail::cumulative_percent_correct(result.trace, problem.truth);
      if (cfg.keep_particles && !problem.vd_truth.empty()) {
        out.vd_rmse_averaged =
            rmse(vd_map(sel, source, VdMode::model_averaged), problem.vd_truth);
        out.vd_rmse_modal =
            rmse(vd_map(sel, source, VdMode::posterior_modal), problem.vd_truth);
      }
      if (!trace_path.empty()) save_trace_csv(result.trace, trace_path);
    }
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
  }
  out.elapsed_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

/// Full study: every (coupling, sampler, replicate) cell, aggregated CSVs and
/// a machine-readable manifest in cfg.out_dir.
inline StudyReport run_study(const ExperimentConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  fs::create_directories(cfg.out_dir + "/replicates");

  StudyProblem problem = build_problem(cfg);
  save_field_csv(problem.truth, cfg.out_dir + "/truth_field.csv");
  if (cfg.study == "pet") {
    pet::save_image_binary(problem.data, cfg.out_dir + "/data.peti");
    save_map_csv(problem.vd_truth, cfg.out_dir + "/vd_truth.csv");
  } else {
    pet::save_image_csv(problem.data, cfg.out_dir + "/data.csv");
  }

  // flat job list over (coupling, sampler, replicate)
  struct Job {
    double coupling;
    std::string sampler;
    int replicate;
  };
  std::vector<Job> jobs;
  for (double j : cfg.couplings())
    for (const auto& s : cfg.samplers)
      for (int r = 0; r < cfg.replicates; ++r) jobs.push_back({j, s, r});

  StudyReport report;
  report.outcomes.resize(jobs.size());
  parallel_for(static_cast<int>(jobs.size()), cfg.workers, [&](int i) {
    const Job& job = jobs[static_cast<size_t>(i)];
    std::string trace_path;
    if (cfg.write_traces) {
      std::ostringstream os;
      os << cfg.out_dir << "/replicates/J" << job.coupling << "_" << job.sampler
         << "_rep" << job.replicate << "_trace.csv";
      trace_path = os.str();
    }
    // replicate cells are parallel at this level; estimates inside run serially
    ExperimentConfig cell = cfg;
    cell.workers = 1;
    report.outcomes[static_cast<size_t>(i)] = run_replicate(
        cell, problem, job.sampler, job.coupling, job.replicate, trace_path);
  });

  std::string hash = config_hash(cfg);
  {
    CsvWriter csv(cfg.out_dir + "/summary.csv",
                  "coupling,sampler,replicate,failed,percent_correct,accept_rate,"
                  "elapsed_s,evidence_draws,vd_rmse_averaged,vd_rmse_modal");
    csv.comment("config_hash=" + hash);
    for (const auto& o : report.outcomes) {
      csv.row(o.coupling, o.sampler, o.replicate, o.failed ? 1 : 0,
              o.percent_correct, o.accept_rate, o.elapsed_s, o.evidence_draws,
              o.vd_rmse_averaged, o.vd_rmse_modal);
      if (o.failed) ++report.failed_replicates;
    }
  }

  // aggregate per (coupling, sampler)
  {
    CsvWriter csv(cfg.out_dir + "/aggregate.csv",
                  "coupling,sampler,n,mean_percent_correct,sd_percent_correct,"
                  "mean_accept_rate,mean_elapsed_per_iteration_s,"
                  "mean_vd_rmse_averaged,mean_vd_rmse_modal");
    csv.comment("config_hash=" + hash);
    for (double j : cfg.couplings())
      for (const auto& s : cfg.samplers) {
        int n = 0;
        double sum = 0, sum_sq = 0, acc = 0, el = 0, va = 0, vm = 0;
        int n_vd = 0;
        for (const auto& o : report.outcomes) {
          if (o.failed || o.coupling != j || o.sampler != s) continue;
          ++n;
          sum += o.percent_correct;
          sum_sq += o.percent_correct * o.percent_correct;
          acc += o.accept_rate;
          el += o.elapsed_s / static_cast<double>(cfg.iterations);
          if (std::isfinite(o.vd_rmse_averaged)) {
            va += o.vd_rmse_averaged;
            vm += o.vd_rmse_modal;
            ++n_vd;
          }
        }
        double mean = n ? sum / n : 0.0;
        double sd = n > 1 ? std::sqrt((sum_sq - n * mean * mean) / (n - 1)) : 0.0;
        csv.row(j, s, n, mean, sd, n ? acc / n : 0.0, n ? el / n : 0.0,
                n_vd ? va / n_vd : std::numeric_limits<double>::quiet_NaN(),
                n_vd ? vm / n_vd : std::numeric_limits<double>::quiet_NaN());
      }
  }

  // mean cumulative percent-correct per iteration (per coupling and sampler)
  {
    CsvWriter csv(cfg.out_dir + "/curve.csv",
                  "coupling,sampler,iteration,mean_percent_correct");
    csv.comment("config_hash=" + hash);
    for (double j : cfg.couplings())
      for (const auto& s : cfg.samplers) {
        std::vector<double> acc;
        int n = 0;
        for (const auto& o : report.outcomes) {
          if (o.failed || o.coupling != j || o.sampler != s) continue;
          if (acc.size() < o.percent_correct_curve.size())
            acc.resize(o.percent_correct_curve.size(), 0.0);
          for (size_t i = 0; i < o.percent_correct_curve.size(); ++i)
            acc[i] += o.percent_correct_curve[i];
          ++n;
        }
        for (size_t i = 0; i < acc.size(); ++i)
          csv.row(j, s, i + 1, n ? acc[i] / n : 0.0);
      }
  }

  // manifest
  {
    nlohmann::json manifest;
    manifest["config"] = cfg;
    manifest["config_hash"] = hash;
    manifest["version"] = kVersion;
    manifest["master_seed"] = cfg.seed;
    manifest["outputs"] = {"truth_field.csv",
                           cfg.study == "pet" ? "data.peti" : "data.csv",
                           "summary.csv", "aggregate.csv", "curve.csv"};
    manifest["failed_replicates"] = report.failed_replicates;
    std::ofstream out(cfg.out_dir + "/manifest.json");
    out << manifest.dump(2) << "\n";
  }

  double failure_rate = jobs.empty() ? 0.0
                                     : static_cast<double>(report.failed_replicates) /
                                           static_cast<double>(jobs.size());
  if (failure_rate > 0.10)
    throw std::runtime_error("more than 10% of replicates failed");
  return report;
}

// ---------------------------------------------------------------------------
// Variance probe
// ---------------------------------------------------------------------------

struct VarianceProbeRow {
  int particles = 0;
  int temperatures = 0;
  double variance = 0.0;
  double se = 0.0;  // jackknife-free s.e. of the sample variance
  double mean_log_z = 0.0;
};

/// Replicated log-evidence variance over a grid of (N, T) budgets; the usual
/// way to size N so var(log Z-hat) is near one.
inline std::vector<VarianceProbeRow> probe_variance(
    std::span<const double> node_data, int model, const NodeModelFamily& family,
    const std::vector<std::pair<int, int>>& grid, int replicates,
    const SmcConfig& base, std::uint64_t seed, int workers = 1) {
  if (replicates < 2) throw std::invalid_argument("need >= 2 replicates");
  std::vector<VarianceProbeRow> rows(grid.size());
  for (size_t g = 0; g < grid.size(); ++g) {
    SmcConfig cfg = base;
    cfg.particle_count = grid[g].first;
    cfg.temperature_count = grid[g].second;
    std::vector<double> log_z(static_cast<size_t>(replicates));
    parallel_for(replicates, workers, [&](int r) {
      std::uint64_t s = derive_seed(
          seed, {stream::replicate, static_cast<std::uint64_t>(g),
                 static_cast<std::uint64_t>(r)});
      log_z[static_cast<size_t>(r)] =
          estimate_evidence(node_data, model, family, cfg, s).log_z;
    });
    double mean = 0.0;
    for (double x : log_z) mean += x;
    mean /= replicates;
    double m2 = 0.0, m4 = 0.0;
    for (double x : log_z) {
      double d = x - mean;
      m2 += d * d;
      m4 += d * d * d * d;
    }
    double var = m2 / (replicates - 1);
    m2 /= replicates;
    m4 /= replicates;
    rows[g].particles = cfg.particle_count;
    rows[g].temperatures = cfg.temperature_count;
    rows[g].variance = var;
    rows[g].mean_log_z = mean;
    // large-sample s.e. of the sample variance
    rows[g].se = std::sqrt(std::max(0.0, m4 - m2 * m2) / replicates);
  }
  return rows;
}

inline void save_variance_probe(const std::vector<VarianceProbeRow>& rows,
                                const std::string& path) {
  CsvWriter csv(path, "n_particles,n_temperatures,variance,se,mean_log_z");
  for (const auto& r : rows)
    csv.row(r.particles, r.temperatures, r.variance, r.se, r.mean_log_z);
}

}  // namespace spms
