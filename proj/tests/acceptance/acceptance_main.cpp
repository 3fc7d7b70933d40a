// Acceptance suite: each test case checks one numbered criterion and prints a
// single [PASS]/[FAIL] line. Statistical tolerances are pinned as constants
// next to each criterion. The expensive study-level criteria share cached
// study runs (toy comparison study, reduced PET study).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spms/experiment.hpp"

using namespace spms;

namespace {

bool g_ok = true;

#define ACC(expr)                \
  do {                           \
    bool acc_e = (expr);         \
    CHECK(acc_e);                \
    if (!acc_e) g_ok = false;    \
  } while (0)

void report(int criterion, const std::string& what) {
  std::cout << (g_ok ? "[PASS]" : "[FAIL]") << " criterion " << criterion
            << ": " << what << std::endl;
  g_ok = true;
}

ToyModelParams toy_params() {
  ToyModelParams p;
  p.mu0 = {5.0, -5.0};
  return p;
}

double mean_outcome(const std::vector<ReplicateOutcome>& outs,
                    const std::string& sampler, double coupling,
                    double ReplicateOutcome::*field) {
  double sum = 0.0;
  int n = 0;
  for (const auto& o : outs) {
    if (o.failed || o.sampler != sampler || o.coupling != coupling) continue;
    sum += o.*field;
    ++n;
  }
  REQUIRE(n > 0);
  return sum / n;
}

std::vector<ReplicateOutcome> run_cells(const ExperimentConfig& cfg) {
  StudyProblem problem = build_problem(cfg);
  std::vector<ReplicateOutcome> outs;
  for (double j : cfg.couplings())
    for (const auto& s : cfg.samplers)
      for (int r = 0; r < cfg.replicates; ++r)
        outs.push_back(run_replicate(cfg, problem, s, j, r));
  return outs;
}

// Toy comparison study at acceptance scale: all four samplers, 20 replicates.
const std::vector<ReplicateOutcome>& toy_study2_outcomes() {
  static const std::vector<ReplicateOutcome> outs = [] {
    ExperimentConfig cfg = preset("toy-study2");
    cfg.replicates = 20;
    return run_cells(cfg);
  }();
  return outs;
}

// Reduced 10x10 PET study: all four samplers, 10 replicates.
const std::vector<ReplicateOutcome>& pet_desk_outcomes() {
  static const std::vector<ReplicateOutcome> outs = [] {
    ExperimentConfig cfg = preset("pet-sim-desk");
    return run_cells(cfg);
  }();
  return outs;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("criterion 8: critical coupling") {
  ACC(std::abs(critical_coupling(2) - 0.881) <= 0.001);
  ACC(critical_coupling(2) == doctest::Approx(std::log(1.0 + std::sqrt(2.0))));
  report(8, "critical_coupling(2) = 0.881 +/- 0.001");
}

TEST_CASE("criterion 10: Gibbs long-run vs exact enumeration") {
  const double kTvTol = 0.01;
  LatticeGraph g(2, 2);
  for (double j : {0.0, 0.8}) {
    PottsParams p(j, 2);
    PottsTable table = enumerate_exact(g, p);
    ModelField f(2, 2, 0);
    Rng rng(101);
    const int burn = 500, sweeps = 200000;
    std::vector<double> freq(16, 0.0);
    for (int s = 0; s < burn; ++s) gibbs_sweep(f, p, g, rng);
    for (int s = 0; s < sweeps; ++s) {
      gibbs_sweep(f, p, g, rng);
      freq[encode_field(f, 2)] += 1.0 / sweeps;
    }
    double tv = 0.0;
    for (int id = 0; id < 16; ++id) tv += std::abs(freq[id] - table.probs[id]);
    ACC(tv / 2 <= kTvTol);
  }
  report(10, "2x2 Gibbs frequencies within TV 0.01 of enumeration at J in {0, 0.8}");
}

TEST_CASE("criterion 9: selection bound Monte Carlo") {
  const int kDraws = 100000;
  Rng rng(2209);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (double ratio : {0.5, 1.0, 2.0, 4.0}) {
    for (int m_count : {2, 3, 5}) {
      // correct model's evidence leads the runners-up by exactly delta
      double delta = ratio;  // sigma* = 1
      long correct = 0;
      for (int d = 0; d < kDraws; ++d) {
        double best_other = -std::numeric_limits<double>::infinity();
        for (int m = 1; m < m_count; ++m)
          best_other = std::max(best_other, noise(rng));
        if (delta + noise(rng) > best_other) ++correct;
      }
      double freq = static_cast<double>(correct) / kDraws;
      double se = std::sqrt(freq * (1.0 - freq) / kDraws);
      double bound = selection_bound(delta, 1.0, m_count);
      ACC(freq >= bound - 3.0 * se);
    }
  }
  report(9, "argmax frequency >= Proposition-2 bound - 3 s.e. on the 12-cell grid");
}

TEST_CASE("criterion 11: estimate-count accounting") {
  ModelField field(4, 3);
  for (int v = 0; v < field.size(); ++v) field[v] = v % 2;
  NodeDataImage img = toy_simulate(field, toy_params(), 11);
  ToyModelFamily fam(toy_params());
  SmcConfig scfg;
  scfg.particle_count = 20;
  scfg.temperature_count = 10;
  LatticeGraph g(4, 3);
  ModelField init(4, 3, 0);
  const long n = 12, nodes = 12, models = 2, kappa = 5;

  SamplerConfig cfg;
  cfg.iterations = n;
  cfg.refresh_period = static_cast<int>(kappa);
  {
    SmcEvidenceSource src(img, fam, scfg, 5);
    nwpm_run(src, g, cfg, init);
    ACC(src.draw_count() == n * nodes);
  }
  {
    SmcEvidenceSource src(img, fam, scfg, 5);
    nwse_run(src, g, cfg, init);
    ACC(src.draw_count() == nodes * models);
  }
  {
    SmcEvidenceSource src(img, fam, scfg, 5);
    nwma_run(src, g, cfg, init);
    ACC(src.draw_count() == nodes * models * (1 + n / kappa));
  }
  report(11, "evidence draws equal n|V| (NWPM), |V||M| (NWSE), |V||M|(1+floor(n/k)) (NWMA)");
}

TEST_CASE("criterion 2: toy SMC unbiasedness") {
  const int kReps = 500;
  const double kSigmas = 4.0;
  ToyModelFamily fam(toy_params());
  std::vector<double> y{3.0};
  double exact = std::exp(toy_exact_log_marginal(3.0, 0, fam.params()));
  SmcConfig cfg;
  cfg.particle_count = 50;
  cfg.temperature_count = 80;
  cfg.schedule_power = 5.0;
  cfg.resample = ResamplePolicy::every_step;
  double sum = 0.0, sum_sq = 0.0;
  for (int r = 0; r < kReps; ++r) {
    double z = std::exp(estimate_evidence(y, 0, fam, cfg, 7000 + r).log_z);
    sum += z;
    sum_sq += z * z;
  }
  double mean = sum / kReps;
  double se = std::sqrt((sum_sq - sum * sum / kReps) / (kReps - 1) / kReps);
  ACC(std::abs(mean - exact) <= kSigmas * se);
  report(2, "natural-space estimator mean within 4 s.e. of the exact toy marginal "
            "(500 reps, N=50, T=80, every-step)");
}

TEST_CASE("criterion 1: oracle posterior correctness on a 3x3 lattice") {
  const double kTvTol = 0.02;
  const long kSweeps = 100000;
  const double coupling = 0.4;

  ModelField truth(3, 3);
  for (int v = 0; v < 9; ++v) truth[v] = v % 2;
  NodeDataImage img = toy_simulate(truth, toy_params(), 33);
  ToyModelFamily fam(toy_params());
  LatticeGraph g(3, 3);

  // brute-force posterior over all 512 configurations
  std::vector<double> log_post(512);
  for (std::uint64_t id = 0; id < 512; ++id) {
    ModelField f = decode_field(id, 2, 3, 3);
    double lp = log_prior_unnorm(f, PottsParams(coupling, 2), g);
    for (int v = 0; v < 9; ++v)
      lp += toy_exact_log_marginal(img.node(v)[0], f[v], fam.params());
    log_post[id] = lp;
  }
  double lse = logsumexp(log_post);
  std::vector<double> post(512);
  for (size_t id = 0; id < 512; ++id) post[id] = std::exp(log_post[id] - lse);

  SamplerConfig cfg;
  cfg.coupling = coupling;
  cfg.iterations = kSweeps;
  cfg.refresh_period = 10;
  ModelField init(3, 3, 0);
  int sampler_idx = 0;
  for (const char* sampler : {"nwpm", "nwse", "nwma"}) {
    OracleEvidenceSource src(img, fam);
    cfg.seed = 900 + sampler_idx++;
    RunResult res = sampler == std::string("nwpm")
                        ? nwpm_run(src, g, cfg, init)
                    : sampler == std::string("nwse")
                        ? nwse_run(src, g, cfg, init)
                        : nwma_run(src, g, cfg, init);
    std::vector<double> freq(512, 0.0);
    res.trace.for_each([&](long, const ModelField& f) {
      freq[encode_field(f, 2)] += 1.0 / kSweeps;
    });
    double tv = 0.0;
    for (size_t id = 0; id < 512; ++id) tv += std::abs(freq[id] - post[id]);
    ACC(tv / 2 <= kTvTol);
  }
  report(1, "NWPM/NWSE/NWMA with exact evidences match the enumerated posterior "
            "within TV 0.02 (3x3, J=0.4, 1e5 sweeps)");
}

TEST_CASE("criterion 12: determinism across runs and worker counts") {
  ExperimentConfig cfg;
  cfg.study = "toy";
  cfg.width = 8;
  cfg.height = 8;
  cfg.samplers = {"indep", "nwpm", "nwma"};
  cfg.iterations = 6;
  cfg.particles = 20;
  cfg.temperatures = 10;
  cfg.init_sweeps = 5;
  cfg.replicates = 2;
  cfg.refresh_period = 3;
  cfg.seed = 12;
  cfg.write_traces = true;

  auto run_into = [&](const std::string& dir, int workers) {
    ExperimentConfig c = cfg;
    c.out_dir = dir;
    c.workers = workers;
    std::filesystem::remove_all(dir);
    run_study(c);
  };
  const std::string a = "/tmp/spms_acc_det_a";
  const std::string b = "/tmp/spms_acc_det_b";
  const std::string c = "/tmp/spms_acc_det_w8";
  run_into(a, 1);
  run_into(b, 1);
  run_into(c, 8);

  // deterministic artifact set: ground truth, data, modal-accuracy curves and
  // every chain trace (summary/aggregate additionally carry wall-clock times)
  std::vector<std::string> files = {"/truth_field.csv", "/data.csv",
                                    "/curve.csv"};
  for (const auto& entry :
       std::filesystem::directory_iterator(a + "/replicates"))
    files.push_back("/replicates/" + entry.path().filename().string());
  REQUIRE(files.size() > 3);
  for (const auto& f : files) {
    ACC(slurp(a + f) == slurp(b + f));
    ACC(slurp(a + f) == slurp(c + f));
  }
  for (const auto& dir : {a, b, c}) std::filesystem::remove_all(dir);
  report(12, "byte-identical traces, data and curves across two runs and workers 1 vs 8");
}

TEST_CASE("criterion 3: toy coupling sweep peaks at J=0.4") {
  const double kTarget = 94.0, kTol = 5.0;
  ExperimentConfig cfg = preset("toy-study1");
  cfg.coupling_sweep = {0.0, 0.4, 2.0};
  cfg.replicates = 20;
  std::vector<ReplicateOutcome> outs = run_cells(cfg);
  double at0 = mean_outcome(outs, "nwpm", 0.0, &ReplicateOutcome::percent_correct);
  double at04 = mean_outcome(outs, "nwpm", 0.4, &ReplicateOutcome::percent_correct);
  double at2 = mean_outcome(outs, "nwpm", 2.0, &ReplicateOutcome::percent_correct);
  std::cout << "  toy study 1 mean percent-correct: J=0 " << at0 << ", J=0.4 "
            << at04 << ", J=2 " << at2 << "\n";
  ACC(std::abs(at04 - kTarget) <= kTol);
  ACC(at04 > at0);
  ACC(at04 > at2);
  report(3, "mean percent-correct 94 +/- 5 at J=0.4, beating J=0 and J=2 (20 reps)");
}

TEST_CASE("criterion 4: toy NWPM vs independent selection gap") {
  const double kGap = 8.0;
  const double kNwpmTarget = 92.0, kIndepTarget = 79.0, kTol = 5.0;
  const auto& outs = toy_study2_outcomes();
  double nwpm = mean_outcome(outs, "nwpm", 0.4, &ReplicateOutcome::percent_correct);
  double indep = mean_outcome(outs, "indep", 0.4, &ReplicateOutcome::percent_correct);
  std::cout << "  toy study 2 mean percent-correct: nwpm " << nwpm << ", indep "
            << indep << "\n";
  ACC(nwpm >= indep + kGap);
  ACC(std::abs(nwpm - kNwpmTarget) <= kTol);
  ACC(std::abs(indep - kIndepTarget) <= kTol);
  report(4, "NWPM >= independent + 8 points, targets 92 vs 79 +/- 5 (20 reps)");
}

TEST_CASE("criterion 5: NWSE/NWMA parity with NWPM on toy and PET") {
  const double kParity = 4.0;
  {
    const auto& outs = toy_study2_outcomes();
    double nwpm = mean_outcome(outs, "nwpm", 0.4, &ReplicateOutcome::percent_correct);
    double nwse = mean_outcome(outs, "nwse", 0.4, &ReplicateOutcome::percent_correct);
    double nwma = mean_outcome(outs, "nwma", 0.4, &ReplicateOutcome::percent_correct);
    std::cout << "  toy parity: nwpm " << nwpm << ", nwse " << nwse << ", nwma "
              << nwma << "\n";
    ACC(std::abs(nwse - nwpm) <= kParity);
    ACC(std::abs(nwma - nwpm) <= kParity);
  }
  {
    const auto& outs = pet_desk_outcomes();
    double nwpm = mean_outcome(outs, "nwpm", 0.4, &ReplicateOutcome::percent_correct);
    double nwse = mean_outcome(outs, "nwse", 0.4, &ReplicateOutcome::percent_correct);
    double nwma = mean_outcome(outs, "nwma", 0.4, &ReplicateOutcome::percent_correct);
    std::cout << "  pet parity: nwpm " << nwpm << ", nwse " << nwse << ", nwma "
              << nwma << "\n";
    ACC(std::abs(nwse - nwpm) <= kParity);
    ACC(std::abs(nwma - nwpm) <= kParity);
  }
  report(5, "NWSE and NWMA within 4 points of NWPM on both studies");
}

TEST_CASE("criterion 6: PET NWPM vs independent selection gap") {
  const double kGap = 10.0;
  const auto& outs = pet_desk_outcomes();
  double nwpm = mean_outcome(outs, "nwpm", 0.4, &ReplicateOutcome::percent_correct);
  double indep = mean_outcome(outs, "indep", 0.4, &ReplicateOutcome::percent_correct);
  std::cout << "  pet desk mean percent-correct: nwpm " << nwpm << ", indep "
            << indep << "\n";
  ACC(nwpm >= indep + kGap);
  report(6, "10x10 PET study: NWPM >= independent + 10 points (10 reps)");
}

TEST_CASE("criterion 7: V_D accuracy") {
  const double kOrderingSlack = 1.05;  // overlap tolerance on the RMSE ordering
  const double kVdTarget = 9.8, kVdRelTol = 0.05;
  {
    const auto& outs = pet_desk_outcomes();
    double nwpm =
        mean_outcome(outs, "nwpm", 0.4, &ReplicateOutcome::vd_rmse_averaged);
    double indep =
        mean_outcome(outs, "indep", 0.4, &ReplicateOutcome::vd_rmse_averaged);
    std::cout << "  V_D RMSE (model-averaged): nwpm " << nwpm << ", indep "
              << indep << "\n";
    ACC(nwpm <= indep * kOrderingSlack);
  }
  {
    // low-noise 1-compartment data: per-pixel posterior V_D near the truth
    ExperimentConfig cfg;
    cfg.study = "pet";
    cfg.width = 2;
    cfg.height = 2;
    cfg.region_orders = {0, 0, 0, 0};
    cfg.noise_level = 0.01;
    cfg.seed = 4;
    StudyProblem p = build_problem(cfg);
    SmcConfig scfg;
    scfg.particle_count = 100;
    scfg.temperature_count = 200;
    scfg.move_count = 2;
    for (int v = 0; v < 4; ++v) {
      auto est = estimate_evidence(p.data.node(v), 0, *p.family, scfg,
                                   600 + v, true);
      double vd = posterior_summary(est, [&](std::span<const double> th) {
                    return p.family->derived_quantity(0, th);
                  }).mean;
      ACC(std::abs(vd - kVdTarget) <= kVdRelTol * kVdTarget);
    }
  }
  report(7, "NWPM V_D RMSE <= independent (5% slack); low-noise 1-comp V_D "
            "within 5% of 9.8");
}
