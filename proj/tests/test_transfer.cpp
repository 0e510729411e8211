#include "rwrp/transfer.hpp"
#include "support/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace rwrp;

namespace {

StepGeometry geom12() { return build_geometry(1, {{1}, {2}}); }

PotentialSpec zero_potential(int ell = 0) {
  if (ell == 0) return PotentialSpec::site([](double) { return 0.0; });
  return PotentialSpec::general(
      [](const EnvironmentModel&, const LatticeVec&, const std::vector<LatticeVec>&) {
        return 0.0;
      },
      ell, 0);
}

// Random potential spec over all variants, for the randomized DP/brute-force
// equality suite.
PotentialSpec random_spec(std::mt19937_64& rng, const StepGeometry& geom) {
  switch (rng() % 5) {
    case 0:
      return PotentialSpec::site_identity(0.5 + 0.1 * (double)(rng() % 10));
    case 1:
      return PotentialSpec::step(
          [](double w, const LatticeVec& z) { return w + 0.3 * (double)z[0]; },
          0.5 + 0.1 * (double)(rng() % 10));
    case 2: {
      std::vector<double> h(geom.d);
      for (auto& v : h) v = 0.1 * (double)(rng() % 7) - 0.3;
      return PotentialSpec::stretched([](double w) { return std::tanh(w); }, h, 0.8);
    }
    case 3: {
      // Site-dependent kernel: softmax of scaled site value over steps.
      const size_t nR = geom.steps.size();
      return PotentialSpec::rwre(
          [nR](double w) {
            std::vector<double> q(nR);
            double s = 0;
            for (size_t i = 0; i < nR; ++i) s += q[i] = std::exp(0.3 * w * (double)i);
            for (auto& v : q) v /= s;
            return q;
          },
          geom.steps);
    }
    default:
      return PotentialSpec::general(
          [](const EnvironmentModel& env, const LatticeVec& x, const std::vector<LatticeVec>& z) {
            double v = env.value(x);
            LatticeVec y = x;
            if (!z.empty())
              for (size_t j = 0; j < y.size(); ++j) y[j] += z[0][j];
            return 0.4 * v + (z.empty() ? 0.0 : 0.2 * env.value(y));
          },
          (int)(rng() % 2), 1, 0.9);
  }
}

EnvironmentModel random_env(std::mt19937_64& rng, int d) {
  if (rng() % 2 == 0) {
    switch (rng() % 3) {
      case 0:
        return EnvironmentModel::iid(d, Marginal::gaussian(0, 0.7), rng());
      case 1:
        return EnvironmentModel::iid(d, Marginal::bernoulli(0.4, -1, 1), rng());
      default:
        return EnvironmentModel::iid(d, Marginal::discrete({-0.5, 0.2, 1.0}, {0.3, 0.3, 0.4}),
                                     rng());
    }
  }
  LatticeVec period(d);
  long long cells = 1;
  for (auto& l : period) {
    l = 1 + (long long)(rng() % 3);
    cells *= l;
  }
  std::vector<double> table((size_t)cells);
  for (auto& v : table) v = 0.25 * (double)(rng() % 9) - 1.0;
  return EnvironmentModel::periodic(period, table);
}

}  // namespace

TEST_CASE("free walk has zero log partition at every layer") {
  auto g = geom12();
  auto env = EnvironmentModel::iid(1, Marginal::gaussian(0, 1), 5);
  for (int ell : {0, 1, 2}) {
    auto spec = zero_potential(ell);
    auto layers = run_dp(env, spec, g, 6);
    REQUIRE(layers.size() == 7);
    for (const auto& l : layers)
      CHECK_THAT(layer_log_sum(l), Catch::Matchers::WithinAbs(0.0, 1e-12));
  }
}

TEST_CASE("constant potential shifts by nc") {
  auto g = build_geometry(2, {{1, 0}, {0, 1}, {1, 1}});
  auto env = EnvironmentModel::iid(2, Marginal::constant(0.35), 0);
  auto spec = PotentialSpec::site_identity(1.0);  // g == 0.35 everywhere
  for (long long n : {0, 1, 4, 9})
    CHECK_THAT(log_partition_line(env, spec, g, n),
               Catch::Matchers::WithinAbs(0.35 * (double)n, 1e-10));
}

TEST_CASE("dp equals brute force on the worked example") {
  auto g = geom12();
  auto env = EnvironmentModel::periodic({2}, {0.0, 1.0});
  auto spec = PotentialSpec::site_identity(1.0);
  double dp = log_partition_line(env, spec, g, 6);
  double bf = brute_force_log_partition(env, spec, g, 6);
  CHECK_THAT(dp, Catch::Matchers::WithinAbs(bf, 1e-9));
}

TEST_CASE("dp equals brute force over a randomized suite") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    int d = 1 + (int)(rng() % 2);
    StepGeometry g;
    if (d == 1) {
      g = (rng() % 2) ? build_geometry(1, {{1}, {2}}, {0.3, 0.7}) : build_geometry(1, {{1}, {3}});
    } else {
      g = (rng() % 2) ? build_geometry(2, {{1, 0}, {0, 1}})
                      : build_geometry(2, {{1, 0}, {0, 1}, {1, 1}}, {0.2, 0.3, 0.5});
    }
    auto env = random_env(rng, d);
    auto spec = random_spec(rng, g);
    long long n = 1 + (long long)(rng() % 7);
    INFO("trial " << trial << " d=" << d << " ell=" << spec.ell << " n=" << n);
    double dp = log_partition_line(env, spec, g, n);
    double bf = brute_force_log_partition(env, spec, g, n);
    CHECK_THAT(dp, Catch::Matchers::WithinAbs(bf, 1e-9));
    // Point restriction agrees too, at a deterministic reachable endpoint.
    auto layers = run_dp(env, spec, g, n);
    const auto& final_layer = layers.back();
    REQUIRE(!final_layer.w.empty());
    LatticeVec target = final_layer.w.begin()->first.x;
    PathPlan plan;
    plan.n = n;
    plan.endpoint = target;
    auto pt = log_partition_point(env, spec, g, n, plan);
    REQUIRE(pt.has_value());
    double bf_pt = brute_force_log_partition(env, spec, g, n, target);
    CHECK_THAT(*pt, Catch::Matchers::WithinAbs(bf_pt, 1e-9));
  }
}

TEST_CASE("log partition decomposes over endpoints") {
  std::mt19937_64 rng(77);
  auto g = build_geometry(2, {{1, 0}, {0, 1}, {1, 1}});
  auto env = random_env(rng, 2);
  auto spec = random_spec(rng, g);
  long long n = 6;
  auto layers = run_dp(env, spec, g, n);
  std::map<LatticeVec, LogAcc> byx;
  for (const auto& [st, w] : layers.back().w) byx[st.x].add(w);
  LogAcc total;
  for (auto& [x, acc] : byx) total.add(acc.value());
  CHECK_THAT(total.value(),
             Catch::Matchers::WithinAbs(log_partition_line(env, spec, g, n), 1e-10));
}

TEST_CASE("constant shift invariance") {
  auto g = geom12();
  auto env = EnvironmentModel::periodic({3}, {0.2, -0.4, 0.9});
  double c = 0.618;
  auto spec0 = PotentialSpec::site_identity(1.0);
  auto specc = PotentialSpec::site([c](double w) { return w + c; }, 1.0);
  for (long long n : {1, 5, 11})
    CHECK_THAT(log_partition_line(env, specc, g, n),
               Catch::Matchers::WithinAbs(log_partition_line(env, spec0, g, n) + c * (double)n, 1e-10));
}

TEST_CASE("tilt identity holds exactly at finite n") {
  std::mt19937_64 rng(4242);
  auto g = geom12();
  for (int trial = 0; trial < 15; ++trial) {
    auto env = random_env(rng, 1);
    auto spec = random_spec(rng, g);
    long long n = 2 + (long long)(rng() % 30);
    double t = -1.5 + 0.1 * (double)(rng() % 31);
    auto layers = run_dp(env, spec, g, n);
    DPOptions tilted;
    tilted.tilt = {t};
    auto tlayers = run_dp(env, spec, g, n, tilted);
    std::map<LatticeVec, LogAcc> base, shift;
    for (const auto& [st, w] : layers.back().w) base[st.x].add(w);
    for (const auto& [st, w] : tlayers.back().w) shift[st.x].add(w);
    REQUIRE(base.size() == shift.size());
    for (auto& [x, acc] : base) {
      REQUIRE(shift.count(x) == 1);
      CHECK_THAT(shift[x].value(),
                 Catch::Matchers::WithinAbs(acc.value() + t * (double)x[0], 1e-9));
    }
  }
}

TEST_CASE("monotonicity in the potential") {
  auto g = geom12();
  auto env = EnvironmentModel::iid(1, Marginal::bernoulli(0.5, 0.0, 1.0), 8);
  auto lo = PotentialSpec::site_identity(1.0);
  auto hi = PotentialSpec::site([](double w) { return w + 0.25; }, 1.0);
  for (long long n : {3, 7})
    CHECK(log_partition_line(env, lo, g, n) <= log_partition_line(env, hi, g, n));
}

TEST_CASE("endpoint distribution basics") {
  auto g = geom12();
  auto env = EnvironmentModel::iid(1, Marginal::constant(0), 0);
  auto spec = zero_potential();
  {
    auto dist = endpoint_distribution(env, spec, g, 0);
    REQUIRE(dist.size() == 1);
    CHECK(dist.count({0}) == 1);
    CHECK(dist[{0}] == 1.0);
  }
  {
    auto dist = endpoint_distribution(env, spec, g, 2);
    REQUIRE(dist.size() == 3);
    CHECK_THAT(dist[{2}], Catch::Matchers::WithinAbs(0.25, 1e-12));
    CHECK_THAT(dist[{3}], Catch::Matchers::WithinAbs(0.5, 1e-12));
    CHECK_THAT(dist[{4}], Catch::Matchers::WithinAbs(0.25, 1e-12));
  }
}

TEST_CASE("endpoint distribution of a random-conductance walk") {
  auto g = geom12();
  auto env = EnvironmentModel::iid(1, Marginal::constant(0), 0);
  auto spec = PotentialSpec::rwre([](double) { return std::vector<double>{0.3, 0.7}; }, g.steps);
  auto dist = endpoint_distribution(env, spec, g, 2);
  REQUIRE(dist.size() == 3);
  CHECK_THAT(dist[{2}], Catch::Matchers::WithinAbs(0.09, 1e-12));
  CHECK_THAT(dist[{3}], Catch::Matchers::WithinAbs(0.42, 1e-12));
  CHECK_THAT(dist[{4}], Catch::Matchers::WithinAbs(0.49, 1e-12));
}

TEST_CASE("endpoint distributions sum to one over reachable points") {
  std::mt19937_64 rng(999);
  auto g = build_geometry(2, {{1, 0}, {0, 1}, {1, 1}}, {0.25, 0.25, 0.5});
  auto env = random_env(rng, 2);
  auto spec = random_spec(rng, g);
  long long n = 5;
  auto dist = endpoint_distribution(env, spec, g, n);
  double s = 0;
  for (const auto& [x, p] : dist) {
    CHECK(p > 0);
    s += p;
  }
  CHECK_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));
  // Supported exactly on the reachable set.
  auto layers = run_dp(env, spec, g, n);
  std::set<LatticeVec> reach;
  for (const auto& [st, w] : layers.back().w) reach.insert(st.x);
  CHECK(dist.size() == reach.size());
}

TEST_CASE("point mass at the binomial endpoint") {
  auto g = geom12();
  auto env = EnvironmentModel::iid(1, Marginal::constant(0), 0);
  auto spec = zero_potential();
  auto plan = path_endpoint(g, RatVec{Rat(3, 2)}, 4);
  REQUIRE(plan.endpoint == LatticeVec{6});
  auto v = log_partition_point(env, spec, g, 4, plan);
  REQUIRE(v.has_value());
  CHECK_THAT(*v, Catch::Matchers::WithinAbs(std::log(6.0 / 16.0), 1e-12));
}

TEST_CASE("extreme velocity forces pure repetition") {
  auto g = geom12();
  auto env = EnvironmentModel::periodic({3}, {0.3, -0.2, 0.7});
  auto spec = PotentialSpec::site_identity(1.0);
  long long n = 9;
  auto plan = path_endpoint(g, RatVec{Rat(2)}, n);
  auto v = log_partition_point(env, spec, g, n, plan);
  REQUIRE(v.has_value());
  double expect = (double)n * std::log(0.5);
  for (long long k = 0; k < n; ++k) expect += env.value({2 * k});
  CHECK_THAT(*v, Catch::Matchers::WithinAbs(expect, 1e-12));
  // Constant environment: per-step value is log kernel + c.
  auto cons = EnvironmentModel::iid(1, Marginal::constant(0.4), 0);
  auto v2 = log_partition_point(cons, spec, g, n, plan);
  REQUIRE(v2.has_value());
  CHECK_THAT(*v2 / (double)n, Catch::Matchers::WithinAbs(std::log(0.5) + 0.4, 1e-12));
}

TEST_CASE("unreachable endpoints are typed, not -inf") {
  auto g = build_geometry(1, {{2}});
  auto env = EnvironmentModel::iid(1, Marginal::constant(0), 0);
  auto spec = zero_potential();
  PathPlan plan;
  plan.n = 2;
  plan.endpoint = {3};
  CHECK_FALSE(log_partition_point(env, spec, g, 2, plan).has_value());
  plan.endpoint = {4};
  auto v = log_partition_point(env, spec, g, 2, plan);
  REQUIRE(v.has_value());
  CHECK_THAT(*v, Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("state budget is enforced with an estimate") {
  auto g = build_geometry(2, {{1, 0}, {0, 1}, {1, 1}});
  auto env = EnvironmentModel::iid(2, Marginal::constant(0), 0);
  auto spec = zero_potential();
  DPOptions opts;
  opts.max_states = 5;
  try {
    log_partition_line(env, spec, g, 6, opts);
    FAIL("expected BudgetExceeded");
  } catch (const BudgetExceeded& e) {
    CHECK(e.estimate > 5);
  }
}

TEST_CASE("pruning is opt-in and reported") {
  auto g = geom12();
  auto env = EnvironmentModel::iid(1, Marginal::gaussian(0, 1), 21);
  auto spec = PotentialSpec::site_identity(1.0);
  double exact = log_partition_line(env, spec, g, 12);
  DPOptions opts;
  opts.prune = true;
  DPRunInfo info;
  double pruned = log_partition_line(env, spec, g, 12, opts, &info);
  // Default window is 60 decades: nothing at this size is near the cliff.
  CHECK(pruned == exact);
  opts.prune_delta = 2.0;  // deliberately brutal window to force drops
  double rough = log_partition_line(env, spec, g, 12, opts, &info);
  CHECK(info.pruned_states > 0);
  CHECK(std::fabs(rough - exact) < 1.5);
  CHECK(rough <= exact + 1e-12);  // pruning only removes mass
}

TEST_CASE("spectral free energy closed forms") {
  auto g = geom12();
  {
    auto env = EnvironmentModel::periodic({1}, {0.37});
    auto spec = PotentialSpec::site_identity(1.0);
    CHECK_THAT(perron_free_energy(env, spec, g), Catch::Matchers::WithinAbs(0.37, 1e-12));
  }
  {
    auto env = EnvironmentModel::periodic({1}, {0.0});
    auto spec = PotentialSpec::site_identity(1.0);
    double t = 0.8;
    double expect = std::log(0.5 * std::exp(t * 1) + 0.5 * std::exp(t * 2));
    CHECK_THAT(perron_free_energy(env, spec, g, {t}), Catch::Matchers::WithinAbs(expect, 1e-12));
    // Memory-one lift gives the same answer.
    auto spec1 = PotentialSpec::general(
        [](const EnvironmentModel& e, const LatticeVec& x, const std::vector<LatticeVec>&) {
          return e.value(x);
        },
        1, 0, 1.0);
    CHECK_THAT(perron_free_energy(env, spec1, g, {t}), Catch::Matchers::WithinAbs(expect, 1e-11));
  }
}

TEST_CASE("spectral free energy matches the 2x2 eigenvalue") {
  auto g = geom12();
  auto env = EnvironmentModel::periodic({2}, {0.0, 1.0});
  auto spec = PotentialSpec::site_identity(1.0);
  // Residue chain: from 0 both steps land as {1,0}; from 1 they land as {0,1};
  // entries carry e^{g(residue)}.
  double a00 = 0.5 * std::exp(0.0), a01 = 0.5 * std::exp(0.0);
  double a10 = 0.5 * std::exp(1.0), a11 = 0.5 * std::exp(1.0);
  double rho = oracles::rho_2x2(a00, a01, a10, a11);
  CHECK_THAT(perron_free_energy(env, spec, g), Catch::Matchers::WithinAbs(std::log(rho), 1e-12));
}

TEST_CASE("reducible transfer graphs are rejected with components") {
  auto g = build_geometry(1, {{2}});
  auto env = EnvironmentModel::periodic({2}, {0.0, 1.0});
  auto spec = PotentialSpec::site_identity(1.0);
  try {
    perron_free_energy(env, spec, g);
    FAIL("expected ReducibleModel");
  } catch (const ReducibleModel& e) {
    CHECK(e.components.size() == 2);
  }
}

TEST_CASE("finite-n free energy converges to the spectral value") {
  auto g = geom12();
  auto env = EnvironmentModel::periodic({2}, {0.0, 1.0});
  auto spec = PotentialSpec::site_identity(1.0);
  double rho = perron_free_energy(env, spec, g);
  auto series = estimate_free_energy(env, spec, g, FreeEnergyTarget::line(),
                                     {60, 120, 240, 360, 500});
  CHECK_THAT(series.extrapolate, Catch::Matchers::WithinAbs(rho, 1e-3));
  // And pointwise: |F_n/n - log rho| <= 5/n along the schedule.
  for (size_t i = 0; i < series.ns.size(); ++i)
    CHECK(std::fabs(series.values[i] - rho) <= 5.0 / (double)series.ns[i]);
}

TEST_CASE("free walk extrapolates to zero at the mean velocity") {
  auto g = geom12();
  auto env = EnvironmentModel::iid(1, Marginal::constant(0), 0);
  auto spec = zero_potential();
  // Mean velocity of the uniform kernel on {1,2} is 3/2.
  auto series = estimate_free_energy(env, spec, g, FreeEnergyTarget::point(RatVec{Rat(3, 2)}),
                                     {100, 200, 400, 600});
  CHECK_THAT(series.extrapolate, Catch::Matchers::WithinAbs(0.0, 1e-2));
}

TEST_CASE("extreme-velocity series matches the ray average exactly") {
  auto g = geom12();
  auto env = EnvironmentModel::periodic({2}, {0.25, -0.5});
  auto spec = PotentialSpec::site_identity(1.0);
  auto series = estimate_free_energy(env, spec, g, FreeEnergyTarget::point(RatVec{Rat(2)}),
                                     {10, 20, 40});
  for (size_t i = 0; i < series.ns.size(); ++i) {
    long long n = series.ns[i];
    double expect = std::log(0.5);
    double avg = 0;
    for (long long k = 0; k < n; ++k) avg += env.value({2 * k});
    expect += avg / (double)n;
    CHECK_THAT(series.values[i], Catch::Matchers::WithinAbs(expect, 1e-12));
  }
}

TEST_CASE("runs are deterministic") {
  std::mt19937_64 rng(31337);
  auto g = geom12();
  auto env = random_env(rng, 1);
  auto spec = random_spec(rng, g);
  double a = log_partition_line(env, spec, g, 14);
  double b = log_partition_line(env, spec, g, 14);
  CHECK(a == b);
}
