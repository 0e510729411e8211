#include "rwrp/environment.hpp"
#include "rwrp/numeric.hpp"
#include "rwrp/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <random>

using namespace rwrp;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

StepGeometry geom12() { return build_geometry(1, {{1}, {2}}); }

}  // namespace

TEST_CASE("log accumulator") {
  LogAcc acc;
  CHECK(acc.value() == kNegInf);
  acc.add(kNegInf);
  CHECK(acc.empty());
  acc.add(0.0);
  acc.add(0.0);
  CHECK_THAT(acc.value(), Catch::Matchers::WithinAbs(std::log(2.0), 1e-15));
  // Huge spread: must not overflow.
  LogAcc big;
  big.add(1000.0);
  big.add(-1000.0);
  CHECK_THAT(big.value(), Catch::Matchers::WithinAbs(1000.0, 1e-12));
  CHECK_THAT(log_sum_exp({std::log(1.0), std::log(2.0), std::log(3.0)}),
             Catch::Matchers::WithinAbs(std::log(6.0), 1e-14));
}

TEST_CASE("a + b/n fit recovers exact coefficients") {
  std::vector<long long> ns{10, 20, 40, 80, 160};
  std::vector<double> ys;
  for (auto n : ns) ys.push_back(3.5 - 2.25 / (double)n);
  auto fit = fit_a_plus_b_over_n(ns, ys);
  CHECK_THAT(fit.a, Catch::Matchers::WithinAbs(3.5, 1e-12));
  CHECK_THAT(fit.b, Catch::Matchers::WithinAbs(-2.25, 1e-10));
  CHECK(fit.a_err < 1e-12);
}

TEST_CASE("inverse normal CDF against the forward CDF") {
  // Round trip through the independent erfc-based forward CDF. Only the left
  // tail is testable this way: near p = 1 the forward CDF itself saturates in
  // double precision, so the right tail is covered by the symmetry law below.
  for (double x = -8.0; x <= 0.0; x += 0.0625) {
    double p = normal_cdf(x);
    CHECK_THAT(inv_normal_cdf(p), Catch::Matchers::WithinAbs(x, 2e-9 * std::max(1.0, std::fabs(x))));
  }
  for (double p : {1e-5, 1e-3, 0.02, 0.1, 0.25, 0.4999})
    CHECK_THAT(inv_normal_cdf(1.0 - p), Catch::Matchers::WithinAbs(-inv_normal_cdf(p), 1e-10));
  CHECK(inv_normal_cdf(0.5) == 0.0);
  CHECK_THAT(inv_normal_cdf(0.975), Catch::Matchers::WithinAbs(1.959963984540054, 1e-12));
  CHECK_THROWS(inv_normal_cdf(0.0));
  CHECK_THROWS(inv_normal_cdf(1.0));
}

TEST_CASE("ordered parallel map is thread-count independent") {
  std::function<double(size_t)> fn = [](size_t i) { return std::sqrt((double)i) - 0.5 * (double)i; };
  auto base = parallel_map_ordered<double>(1000, fn);
  setenv("RWRP_THREADS", "3", 1);
  auto threaded = parallel_map_ordered<double>(1000, fn);
  setenv("RWRP_THREADS", "1", 1);
  CHECK(base == threaded);
}

TEST_CASE("env_value basics") {
  auto cons = EnvironmentModel::iid(2, Marginal::constant(2.0), 7);
  CHECK(env_value(cons, {3, -5}) == 2.0);
  CHECK(env_value(cons, {0, 0}) == 2.0);

  auto per = EnvironmentModel::periodic({2}, {10.0, 20.0});
  CHECK(env_value(per, {5}) == 20.0);
  CHECK(env_value(per, {-1}) == 20.0);
  CHECK(env_value(per, {-2}) == 10.0);

  auto iid = EnvironmentModel::iid(1, Marginal::gaussian(0, 1), 42);
  CHECK(env_value(iid, {17}) == env_value(iid, {17}));
  CHECK(env_value(iid, {17}) != env_value(iid, {18}));  // a.s. distinct
}

TEST_CASE("periodic model repeats exactly along every period shift") {
  auto per = EnvironmentModel::periodic({2, 3}, {1, 2, 3, 4, 5, 6});
  std::mt19937_64 rng(5);
  for (int it = 0; it < 200; ++it) {
    LatticeVec x{(long long)(rng() % 41) - 20, (long long)(rng() % 41) - 20};
    for (long long k1 : {-2, 0, 3})
      for (long long k2 : {-1, 0, 2}) {
        LatticeVec y{x[0] + 2 * k1, x[1] + 3 * k2};
        CHECK(env_value(per, x) == env_value(per, y));
      }
  }
}

TEST_CASE("iid marginals have the advertised moments") {
  const int N = 100000;
  auto check_marginal = [&](const Marginal& m, uint64_t seed) {
    auto env = EnvironmentModel::iid(1, m, seed);
    std::vector<double> xs((size_t)N);
    for (int i = 0; i < N; ++i) xs[(size_t)i] = env.value({i});
    auto ms = mean_se(xs);
    double sd = std::sqrt(m.moment_var());
    INFO("marginal kind " << (int)m.kind);
    CHECK(std::fabs(ms.mean - m.moment_mean()) <= 4.0 * sd / std::sqrt((double)N) + 1e-12);
    // Plug-in standard error for the sample variance.
    double v = 0, m4 = 0;
    for (double x : xs) {
      double e = x - ms.mean;
      v += e * e;
      m4 += e * e * e * e;
    }
    v /= N;
    m4 /= N;
    double se_var = std::sqrt(std::max(m4 - v * v, 0.0) / N);
    CHECK(std::fabs(v - m.moment_var()) <= 4.0 * se_var + 1e-12);
  };
  check_marginal(Marginal::gaussian(1.5, 2.0), 11);
  check_marginal(Marginal::bernoulli(0.3, -1.0, 2.0), 12);
  check_marginal(Marginal::discrete({-1, 0, 3}, {0.2, 0.5, 0.3}), 13);
  check_marginal(Marginal::constant(4.0), 14);
}

TEST_CASE("marginal log mgf closed forms") {
  auto g = Marginal::gaussian(0.25, 1.5);
  CHECK_THAT(g.log_mgf(0.8), Catch::Matchers::WithinAbs(0.8 * 0.25 + 0.5 * 0.64 * 2.25, 1e-14));
  auto b = Marginal::bernoulli(0.3, -1.0, 2.0);
  CHECK_THAT(b.log_mgf(0.5),
             Catch::Matchers::WithinAbs(std::log(0.3 * std::exp(1.0) + 0.7 * std::exp(-0.5)), 1e-14));
  auto d = Marginal::discrete({-1, 2}, {0.25, 0.75});
  CHECK_THAT(d.log_mgf(-0.4),
             Catch::Matchers::WithinAbs(std::log(0.25 * std::exp(0.4) + 0.75 * std::exp(-0.8)), 1e-14));
  CHECK(Marginal::constant(3.0).log_mgf(2.0) == 6.0);
}

TEST_CASE("potential_eval examples") {
  auto cons = EnvironmentModel::iid(1, Marginal::constant(2.0), 0);
  auto site = PotentialSpec::site_identity(1.0);
  for (long long x : {-3, 0, 11}) CHECK(potential_eval(cons, site, {x}, {}) == 2.0);

  auto stretched = PotentialSpec::stretched([](double) { return 0.0; }, {1.0});
  CHECK(potential_eval(cons, stretched, {0}, {{2}}) == 2.0);

  auto g12 = geom12();
  auto rwre = PotentialSpec::rwre(
      [](double) { return std::vector<double>{0.5, 0.5}; }, g12.steps);
  for (long long x : {-1, 0, 5})
    for (const auto& z : g12.steps)
      CHECK_THAT(potential_eval(cons, rwre, {x}, {z}),
                 Catch::Matchers::WithinAbs(std::log(0.5), 1e-15));
}

TEST_CASE("inverse temperature multiplies the potential") {
  auto env = EnvironmentModel::periodic({3}, {0.5, -1.0, 2.0});
  auto s1 = PotentialSpec::site_identity(1.0);
  auto s2 = PotentialSpec::site_identity(2.5);
  for (long long x = -5; x <= 5; ++x)
    CHECK(potential_eval(env, s2, {x}, {}) == 2.5 * potential_eval(env, s1, {x}, {}));
}

TEST_CASE("rwre kernel validation") {
  auto cons = EnvironmentModel::iid(1, Marginal::constant(0.0), 0);
  auto g12 = geom12();
  auto bad_sum = PotentialSpec::rwre([](double) { return std::vector<double>{0.5, 0.4}; },
                                     g12.steps);
  CHECK_THROWS_AS(potential_eval(cons, bad_sum, {0}, {{1}}), EnvironmentError);
  auto bad_pos = PotentialSpec::rwre([](double) { return std::vector<double>{1.0, 0.0}; },
                                     g12.steps);
  CHECK_THROWS_AS(potential_eval(cons, bad_pos, {0}, {{1}}), EnvironmentError);
}

TEST_CASE("shift covariance of the potential") {
  auto base = EnvironmentModel::iid(2, Marginal::gaussian(0, 1), 99);
  auto spec = PotentialSpec::step(
      [](double w, const LatticeVec& z) { return w * (double)(z[0] - z[1]); }, 0.7);
  std::mt19937_64 rng(31);
  std::vector<LatticeVec> steps{{1, 0}, {0, 1}, {1, 1}};
  for (int it = 0; it < 1000; ++it) {
    LatticeVec x{(long long)(rng() % 21) - 10, (long long)(rng() % 21) - 10};
    LatticeVec y{(long long)(rng() % 21) - 10, (long long)(rng() % 21) - 10};
    const auto& z = steps[rng() % 3];
    LatticeVec xy{x[0] + y[0], x[1] + y[1]};
    // Evaluating at x+y equals evaluating the y-shifted environment at x.
    CHECK(potential_eval(base, spec, xy, {z}) ==
          potential_eval(base.shifted(y), spec, x, {z}));
  }
}

TEST_CASE("environments reject malformed input") {
  CHECK_THROWS_AS(EnvironmentModel::periodic({2}, {1.0}), EnvironmentError);
  CHECK_THROWS_AS(EnvironmentModel::periodic({0}, {}), EnvironmentError);
  CHECK_THROWS_AS(Marginal::discrete({1.0}, {0.5}), EnvironmentError);
  CHECK_THROWS_AS(Marginal::bernoulli(1.5, 0, 1), EnvironmentError);
  auto env = EnvironmentModel::iid(2, Marginal::constant(0), 0);
  CHECK_THROWS_AS(env.value({1}), EnvironmentError);
  auto spec = PotentialSpec::site_identity();
  CHECK_THROWS_AS(potential_eval(env, spec, {0, 0}, {{1, 0}}), EnvironmentError);
}

TEST_CASE("unbounded potentials with loops available are refused") {
  auto loops = build_geometry(1, {{-1}, {1}});
  auto directed = geom12();
  auto gauss = EnvironmentModel::iid(1, Marginal::gaussian(0, 1), 3);
  auto spec = PotentialSpec::site_identity(1.0);
  CHECK_THROWS_AS(check_admissible(gauss, spec, loops), EnvironmentError);
  CHECK_NOTHROW(check_admissible(gauss, spec, directed));
  // Bounded marginals are always fine.
  auto bern = EnvironmentModel::iid(1, Marginal::bernoulli(0.5, -1, 1), 3);
  CHECK_NOTHROW(check_admissible(bern, spec, loops));
}
