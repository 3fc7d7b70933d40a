#include <doctest.h>

#include <array>
#include <cmath>
#include <numeric>

#include "spms/potts.hpp"

using namespace spms;

TEST_CASE("potts params validated") {
  CHECK_THROWS_AS(PottsParams(-0.1, 2), std::invalid_argument);
  CHECK_THROWS_AS(PottsParams(0.4, 1), std::invalid_argument);
  CHECK_NOTHROW(PottsParams(0.0, 2));
}

TEST_CASE("critical coupling values") {
  CHECK(critical_coupling(2) == doctest::Approx(0.8814).epsilon(1e-3));
  CHECK(critical_coupling(3) == doctest::Approx(1.0051).epsilon(1e-3));
  CHECK(critical_coupling(4) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK_THROWS_AS(critical_coupling(1), std::invalid_argument);
}

TEST_CASE("unnormalized log prior") {
  LatticeGraph g(2, 2);
  ModelField constant(2, 2, 1);
  CHECK(log_prior_unnorm(constant, PottsParams(1.0, 2), g) ==
        doctest::Approx(4.0));
  ModelField checker(2, 2);
  checker.orders = {0, 1, 1, 0};
  CHECK(log_prior_unnorm(checker, PottsParams(0.7, 2), g) == doctest::Approx(0.0));
  CHECK(log_prior_unnorm(constant, PottsParams(0.0, 2), g) == doctest::Approx(0.0));
  ModelField wrong(3, 2, 0);
  CHECK_THROWS_AS(log_prior_unnorm(wrong, PottsParams(1.0, 2), g),
                  std::invalid_argument);
}

TEST_CASE("log prior invariant under global relabeling") {
  LatticeGraph g(3, 3);
  ModelField f(3, 3);
  f.orders = {0, 1, 2, 2, 1, 0, 0, 0, 2};
  PottsParams p(0.9, 3);
  double before = log_prior_unnorm(f, p, g);
  // apply the cyclic permutation 0->1->2->0
  ModelField relabeled = f;
  for (int v = 0; v < f.size(); ++v) relabeled[v] = (f[v] + 1) % 3;
  CHECK(log_prior_unnorm(relabeled, p, g) == doctest::Approx(before).epsilon(1e-14));
}

TEST_CASE("full conditional examples") {
  SUBCASE("J=0 is uniform") {
    LatticeGraph g(3, 3);
    ModelField f(3, 3, 0);
    auto probs = full_conditional(4, f, PottsParams(0.0, 3), g);
    for (double p : probs) CHECK(p == doctest::Approx(1.0 / 3));
  }
  SUBCASE("all four neighbors agree, J=0.4") {
    LatticeGraph g(3, 3);
    ModelField f(3, 3, 0);
    f[4] = 1;  // center differs; all neighbors in state 0
    auto probs = full_conditional(4, f, PottsParams(0.4, 2), g);
    double expect = std::exp(1.6) / (std::exp(1.6) + 1.0);
    CHECK(probs[0] == doctest::Approx(expect).epsilon(1e-4));
    CHECK(probs[0] == doctest::Approx(0.8320).epsilon(1e-3));
  }
  SUBCASE("2-2 neighbor split is symmetric") {
    LatticeGraph g(3, 3);
    ModelField f(3, 3, 0);
    f[g.node_id(1, 0)] = 1;
    f[g.node_id(2, 1)] = 1;
    auto probs = full_conditional(4, f, PottsParams(1.3, 2), g);
    CHECK(probs[0] == doctest::Approx(0.5));
    CHECK(probs[1] == doctest::Approx(0.5));
  }
  SUBCASE("sums to one") {
    LatticeGraph g(4, 4);
    ModelField f(4, 4);
    for (int v = 0; v < f.size(); ++v) f[v] = v % 3;
    for (int v = 0; v < f.size(); ++v) {
      auto probs = full_conditional(v, f, PottsParams(0.8, 3), g);
      double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("invalid node throws") {
    LatticeGraph g(2, 2);
    ModelField f(2, 2, 0);
    CHECK_THROWS_AS(full_conditional(4, f, PottsParams(0.4, 2), g),
                    std::invalid_argument);
  }
}

TEST_CASE("full conditional depends only on neighbor states") {
  LatticeGraph g(4, 4);
  ModelField f(4, 4, 0);
  int v = g.node_id(1, 1);
  auto before = full_conditional(v, f, PottsParams(0.6, 2), g);
  f[g.node_id(3, 3)] = 1;  // not a neighbor of v
  auto after = full_conditional(v, f, PottsParams(0.6, 2), g);
  CHECK(before == after);  // bit-for-bit
  f[g.node_id(1, 0)] = 1;  // a neighbor of v
  auto changed = full_conditional(v, f, PottsParams(0.6, 2), g);
  CHECK(before != changed);
}

TEST_CASE("agreement delta matches full recomputation") {
  LatticeGraph g(4, 3);
  PottsParams p(0.5, 3);
  Rng rng(11);
  ModelField f(4, 3);
  std::uniform_int_distribution<int> d(0, 2);
  for (int v = 0; v < f.size(); ++v) f[v] = d(rng);
  for (int trial = 0; trial < 200; ++trial) {
    int v = std::uniform_int_distribution<int>(0, f.size() - 1)(rng);
    int m = d(rng);
    double before = log_prior_unnorm(f, p, g);
    int delta = agreement_delta(g, f, v, m);
    ModelField after = f;
    after[v] = m;
    CHECK(log_prior_unnorm(after, p, g) - before ==
          doctest::Approx(p.coupling * delta).epsilon(1e-10));
    f = after;
  }
}

TEST_CASE("encode/decode round-trip") {
  LatticeGraph g(3, 2);
  Rng rng(3);
  std::uniform_int_distribution<int> d(0, 2);
  for (int trial = 0; trial < 50; ++trial) {
    ModelField f(3, 2);
    for (int v = 0; v < f.size(); ++v) f[v] = d(rng);
    std::uint64_t id = encode_field(f, 3);
    CHECK(decode_field(id, 3, 3, 2) == f);
  }
  // ids enumerate the whole space without collision
  CHECK(encode_field(decode_field(100, 3, 3, 2), 3) == 100);
}

TEST_CASE("exact enumeration") {
  SUBCASE("1x2 lattice at J=log 3 gives table (3,1,1,3)/8") {
    LatticeGraph g(1, 2);
    PottsTable table = enumerate_exact(g, PottsParams(std::log(3.0), 2));
    REQUIRE(table.probs.size() == 4);
    CHECK(table.zeta == doctest::Approx(8.0));
    // ids: 00 -> 0, 10 -> 1, 01 -> 2, 11 -> 3
    CHECK(table.probs[0] == doctest::Approx(3.0 / 8));
    CHECK(table.probs[1] == doctest::Approx(1.0 / 8));
    CHECK(table.probs[2] == doctest::Approx(1.0 / 8));
    CHECK(table.probs[3] == doctest::Approx(3.0 / 8));
  }
  SUBCASE("J=0 is uniform") {
    LatticeGraph g(2, 2);
    PottsTable table = enumerate_exact(g, PottsParams(0.0, 2));
    for (double p : table.probs) CHECK(p == doctest::Approx(1.0 / 16));
  }
  SUBCASE("zeta matches independent agreement count") {
    LatticeGraph g(2, 2);
    PottsParams p(0.8, 2);
    PottsTable table = enumerate_exact(g, p);
    double zeta = 0.0;
    for (std::uint64_t id = 0; id < 16; ++id) {
      ModelField f = decode_field(id, 2, 2, 2);
      int agreements = 0;
      for (auto [u, v] : g.edges())
        if (f[u] == f[v]) ++agreements;
      zeta += std::exp(p.coupling * agreements);
    }
    CHECK(table.zeta == doctest::Approx(zeta).epsilon(1e-12));
  }
  SUBCASE("capacity guard") {
    LatticeGraph g(5, 5);
    CHECK_THROWS_AS(enumerate_exact(g, PottsParams(0.4, 3)), std::length_error);
    CHECK_NOTHROW(enumerate_exact(LatticeGraph(4, 4), PottsParams(0.4, 2)));
  }
}

namespace {

// Exact one-sweep push-forward of a distribution over all configurations
// under deterministic raster-scan Gibbs.
std::vector<double> sweep_pushforward(const std::vector<double>& dist,
                                      const LatticeGraph& g,
                                      const PottsParams& p) {
  std::vector<double> cur = dist;
  for (int v = 0; v < g.node_count(); ++v) {
    std::vector<double> next(cur.size(), 0.0);
    for (std::uint64_t id = 0; id < cur.size(); ++id) {
      if (cur[id] == 0.0) continue;
      ModelField f = decode_field(id, p.state_count, g.width(), g.height());
      auto probs = full_conditional(v, f, p, g);
      for (int m = 0; m < p.state_count; ++m) {
        ModelField f2 = f;
        f2[v] = m;
        next[encode_field(f2, p.state_count)] += cur[id] * probs[static_cast<size_t>(m)];
      }
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace

TEST_CASE("Gibbs sweep leaves the exact Potts distribution invariant") {
  LatticeGraph g(2, 2);
  PottsParams p(0.8, 2);
  PottsTable table = enumerate_exact(g, p);
  auto pushed = sweep_pushforward(table.probs, g, p);
  for (size_t id = 0; id < pushed.size(); ++id)
    CHECK(pushed[id] == doctest::Approx(table.probs[id]).epsilon(1e-10));
}

TEST_CASE("Gibbs long-run frequencies match enumeration (2x2, J=0.8)") {
  LatticeGraph g(2, 2);
  PottsParams p(0.8, 2);
  PottsTable table = enumerate_exact(g, p);
  ModelField f(2, 2, 0);
  Rng rng(17);
  std::vector<double> freq(16, 0.0);
  const int burn = 200, sweeps = 60000;
  for (int s = 0; s < burn; ++s) gibbs_sweep(f, p, g, rng);
  for (int s = 0; s < sweeps; ++s) {
    gibbs_sweep(f, p, g, rng);
    freq[encode_field(f, 2)] += 1.0 / sweeps;
  }
  double tv = 0.0;
  for (int id = 0; id < 16; ++id) tv += std::abs(freq[id] - table.probs[id]);
  CHECK(tv / 2 < 0.01);
}

TEST_CASE("Gibbs with J=0 gives i.i.d. uniform marginals") {
  LatticeGraph g(3, 3);
  PottsParams p(0.0, 3);
  ModelField f(3, 3, 0);
  Rng rng(23);
  const int sweeps = 10000;
  std::array<long, 3> counts{0, 0, 0};
  for (int s = 0; s < sweeps; ++s) {
    gibbs_sweep(f, p, g, rng);
    for (int v = 0; v < f.size(); ++v) ++counts[static_cast<size_t>(f[v])];
  }
  // chi-squared with 2 dof; 99% quantile 9.21
  double total = 9.0 * sweeps;
  double chi2 = 0.0;
  for (long c : counts) {
    double expect = total / 3.0;
    chi2 += (c - expect) * (c - expect) / expect;
  }
  CHECK(chi2 < 9.21);
}

TEST_CASE("Gibbs on a 1x1 lattice is uniform") {
  LatticeGraph g(1, 1);
  PottsParams p(3.0, 2);  // no edges, so J is irrelevant
  ModelField f(1, 1, 0);
  Rng rng(5);
  long ones = 0;
  const int sweeps = 20000;
  for (int s = 0; s < sweeps; ++s) {
    gibbs_sweep(f, p, g, rng);
    ones += f[0];
  }
  double frac = static_cast<double>(ones) / sweeps;
  CHECK(frac == doctest::Approx(0.5).epsilon(0.05));
}
