#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "eaware/scheduler.hpp"

using namespace eaware;

namespace {

OperatorStats stats(double mu_df, double var_df, double mu_ln_e, double var_ln_e, std::size_t n = 1) {
  return OperatorStats{mu_df, var_df, mu_ln_e, var_ln_e, n};
}

}  // namespace

TEST_CASE("EWMA update from a zero estimate") {
  const auto s = update_stats(stats(0, 0, 0, 0), 10.0, {1.0}, 0.9);
  CHECK(std::abs(s.mu_df - 1.0) < 1e-12);
  CHECK(std::abs(s.var_df - 8.1) < 1e-12);
  CHECK(s.mu_ln_e == 0.0);
  CHECK(s.var_ln_e == 0.0);
  CHECK(s.n_samples == 2);
}

TEST_CASE("EWMA log-energy update at E = 1 J stays at zero") {
  const auto s = update_stats(stats(3, 1, 0, 0), 3.0, {1.0}, 0.9);
  CHECK(s.mu_ln_e == 0.0);
  CHECK(s.var_ln_e == 0.0);
}

TEST_CASE("EWMA variance uses the updated mean") {
  const double a = 0.7;
  const auto s = update_stats(stats(2, 0.5, std::log(2.0), 0.25), -1.0, {8.0}, a);
  const double mu = a * 2 + (1 - a) * -1.0;
  const double mle = a * std::log(2.0) + (1 - a) * std::log(8.0);
  CHECK(std::abs(s.mu_df - mu) < 1e-12);
  CHECK(std::abs(s.var_df - (a * 0.5 + (1 - a) * (-1.0 - mu) * (-1.0 - mu))) < 1e-12);
  CHECK(std::abs(s.mu_ln_e - mle) < 1e-12);
  CHECK(std::abs(s.var_ln_e - (a * 0.25 + (1 - a) * (std::log(8.0) - mle) * (std::log(8.0) - mle))) < 1e-12);
}

TEST_CASE("first observation seeds the means") {
  const auto s = update_stats(OperatorStats{}, 4.5, {std::exp(1.5)}, 0.9);
  CHECK(s.mu_df == 4.5);
  CHECK(s.var_df == 0.0);
  CHECK(std::abs(s.mu_ln_e - 1.5) < 1e-15);
  CHECK(s.var_ln_e == 0.0);
  CHECK(s.n_samples == 1);
  CHECK(s.sampled());
  CHECK_FALSE(OperatorStats{}.sampled());
}

TEST_CASE("repeated observations converge to the closed-form EWMA limit") {
  const double a = 0.9, c = 3.0, mu0 = -2.0, var0 = 5.0;
  auto s = stats(mu0, var0, 0.0, 0.0);
  for (int t = 1; t <= 100; ++t) {
    s = update_stats(s, c, {1.0}, a);
    const double at = std::pow(a, t);
    const double d = c - mu0;
    CHECK(s.mu_df == Catch::Approx(c + at * (mu0 - c)).epsilon(1e-12).margin(1e-12));
    CHECK(s.var_df == Catch::Approx(at * var0 + d * d * a * at * (1 - at)).epsilon(1e-10).margin(1e-12));
  }
  CHECK(std::abs(s.mu_df - c) < 1e-3);
  CHECK(s.var_df < 1e-3);
}

TEST_CASE("update_stats rejects bad inputs") {
  const auto s = stats(0, 0, 0, 0);
  CHECK_THROWS_AS(update_stats(s, std::nan(""), {1.0}, 0.9), ContractViolation);
  CHECK_THROWS_AS(update_stats(s, 1.0, {0.0}, 0.9), ContractViolation);
  CHECK_THROWS_AS(update_stats(s, 1.0, {INFINITY}, 0.9), ContractViolation);
  CHECK_THROWS_AS(update_stats(s, 1.0, {1.0}, 1.0), ContractViolation);
  CHECK_THROWS_AS(update_stats(s, 1.0, {1.0}, 0.0), ContractViolation);
}

TEST_CASE("EWMA stays finite and nonnegative over a million bounded updates") {
  Rng rng(11);
  OperatorStats s;
  for (int i = 0; i < 1000000; ++i) {
    s = update_stats(s, 200.0 * rng.uniform() - 100.0, {1e-6 + 1e3 * rng.uniform()}, 0.9);
    if (!(s.var_df >= 0.0 && s.var_ln_e >= 0.0)) FAIL("negative variance at update " << i);
  }
  CHECK(std::isfinite(s.mu_df));
  CHECK(std::isfinite(s.var_df));
  CHECK(std::isfinite(s.mu_ln_e));
  CHECK(std::isfinite(s.var_ln_e));
  CHECK(s.n_samples == 1000000);
}

TEST_CASE("degenerate Thompson draws") {
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    CHECK(sample_improvement(stats(2, 0, 0, 0), rng) == 2.0);
    CHECK(sample_energy(stats(0, 0, 0, 0), rng) == 1.0);
    CHECK(sample_energy(stats(0, 0, std::log(4.0), 0), rng) == Catch::Approx(4.0).epsilon(1e-15));
  }
}

TEST_CASE("Thompson draws need an observed operator") {
  Rng rng(1);
  CHECK_THROWS_AS(sample_improvement(OperatorStats{}, rng), ContractViolation);
  CHECK_THROWS_AS(sample_energy(OperatorStats{}, rng), ContractViolation);
}

TEST_CASE("improvement draws have the model moments") {
  Rng rng(2);
  const int n = 100000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += sample_improvement(stats(0, 1, 0, 0), rng);
  CHECK(std::abs(s / n) < 0.02);

  double m = 0.0, ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = sample_improvement(stats(0, 4, 0, 0), rng);
    m += v;
    ss += v * v;
  }
  m /= n;
  CHECK(std::abs((ss - n * m * m) / (n - 1) - 4.0) < 0.2);
}

TEST_CASE("energy draws have the log-normal mean") {
  Rng rng(3);
  const int n = 100000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = sample_energy(stats(0, 0, 0, 1), rng);
    REQUIRE(e > 0.0);
    s += e;
  }
  CHECK(s / n == Catch::Approx(std::exp(0.5)).epsilon(0.05));
}

TEST_CASE("robust EI/J ratio") {
  CHECK(robust_eij(2, 4) == 0.5);
  CHECK(robust_eij(0, 123.0) == 0.0);
  CHECK(robust_eij(-1, 2) == -0.5);
  CHECK_THROWS_AS(robust_eij(1, 0), ContractViolation);
}

TEST_CASE("expected energy of the log-normal model") {
  CHECK(expected_energy(stats(0, 0, 0, 0)) == 1.0);
  CHECK(std::abs(expected_energy(stats(0, 0, 0, 2)) - std::exp(1.0)) < 1e-12);
  CHECK(std::abs(expected_energy(stats(0, 0, std::log(3.0), 0)) - 3.0) < 1e-12);
}

TEST_CASE("budget penalty") {
  const auto unit = stats(0, 0, 0, 0);
  CHECK(budget_penalty(unit, 1.0) == 0.5);
  CHECK(budget_penalty(unit, 3.0) == 0.75);
  CHECK(budget_penalty(unit, Budget::full(3.0)) == 0.75);
  double prev = 0.0;
  for (double b = 1e-3; b < 1e9; b *= 3.7) {
    const double p = budget_penalty(unit, b);
    CHECK(p > prev);
    CHECK(p < 1.0);
    prev = p;
  }
  CHECK(budget_penalty(unit, 1e12) > 1.0 - 1e-11);
  CHECK_THROWS_AS(budget_penalty(unit, 0.0), ContractViolation);
}

TEST_CASE("budget penalty is increasing in B and decreasing in expected energy") {
  for (double b = 0.01; b < 1000.0; b *= 1.9) {
    double last = 2.0;
    for (double mle = -5.0; mle < 5.0; mle += 0.37) {
      for (double v : {0.0, 0.5, 2.0}) {
        const double p = budget_penalty(stats(0, 0, mle, v), b);
        const double p_more_b = budget_penalty(stats(0, 0, mle, v), b * 1.01);
        CHECK(p_more_b > p);
      }
      const double p = budget_penalty(stats(0, 0, mle, 0), b);
      CHECK(p < last);
      last = p;
    }
  }
}

TEST_CASE("priority composes EI/J with the penalty") {
  Rng rng(4);
  CHECK(priority(stats(2, 0, std::log(4.0), 0), 4.0, rng) == Catch::Approx(0.25).epsilon(1e-15));
  CHECK(priority(stats(-2, 0, 0, 0), 4.0, rng) < 0.0);
  const auto s = stats(1.5, 0.3, 0.2, 0.1);
  Rng a(99), b(99);
  CHECK(priority(s, 10.0, a) == priority(s, 10.0, b));
}

TEST_CASE("forced exploration picks unsampled operators uniformly") {
  Rng rng(5);
  std::vector<OperatorStats> two(2);
  int zero = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) zero += select_operator(two, 10.0, rng) == 0 ? 1 : 0;
  CHECK(std::abs(zero / double(n) - 0.5) < 0.02);

  std::vector<OperatorStats> mixed{stats(1e9, 0, -50, 0), OperatorStats{}};
  for (int i = 0; i < 100; ++i) CHECK(select_operator(mixed, 10.0, rng) == 1);
}

TEST_CASE("zero-variance dominance is deterministic") {
  Rng rng(6);
  std::vector<OperatorStats> ops{stats(1, 0, 0, 0), stats(0.1, 0, 0, 0)};
  for (int i = 0; i < 1000; ++i) CHECK(select_operator(ops, 10.0, rng) == 0);
  CHECK_THROWS_AS(select_operator(std::vector<OperatorStats>{}, 1.0, rng), ContractViolation);
}

TEST_CASE("exact ties are broken uniformly") {
  Rng rng(7);
  std::vector<OperatorStats> ops{stats(1, 0, 0, 0), stats(1, 0, 0, 0), stats(0.5, 0, 0, 0)};
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < 20000; ++i) ++counts[select_operator(ops, 10.0, rng)];
  CHECK(counts[2] == 0);
  CHECK(std::abs(counts[0] / 20000.0 - 0.5) < 0.02);
}

TEST_CASE("with zero variances selection is the argmax of mu_df / e^mu_lnE times the penalty") {
  Rng rng(8);
  for (int t = 0; t < 2000; ++t) {
    std::vector<OperatorStats> ops;
    for (int i = 0; i < 3; ++i) ops.push_back(stats(rng.uniform() * 4 - 2, 0, rng.uniform() * 4 - 2, 0));
    const double b = 0.01 + 100 * rng.uniform();
    std::size_t best = 0;
    double bv = -INFINITY;
    for (std::size_t i = 0; i < ops.size(); ++i) {
      const double e = std::exp(ops[i].mu_ln_e);
      const double v = ops[i].mu_df / e * (b / (b + e));
      if (v > bv) {
        bv = v;
        best = i;
      }
    }
    CHECK(select_operator(ops, b, rng) == best);
  }
}

TEST_CASE("selection is invariant to rescaling the improvement history") {
  Rng gen(9);
  for (int t = 0; t < 300; ++t) {
    const double c = 0.01 + 50.0 * gen.uniform();
    std::vector<OperatorStats> base(2), scaled(2);
    for (std::size_t op = 0; op < 2; ++op) {
      const int len = 2 + static_cast<int>(gen.uniform_index(0, 20));
      for (int i = 0; i < len; ++i) {
        const double df = gen.normal() * 3.0 + (op == 0 ? 0.5 : 0.0);
        const EnergySample e{std::exp(gen.normal() * 0.3 + (op == 0 ? 0.2 : 0.0))};
        base[op] = update_stats(base[op], df, e, 0.9);
        scaled[op] = update_stats(scaled[op], c * df, e, 0.9);
      }
    }
    for (int rep = 0; rep < 20; ++rep) {
      Rng r1(5000 + t * 100 + rep), r2(5000 + t * 100 + rep);
      CHECK(select_operator(base, 25.0, r1) == select_operator(scaled, 25.0, r2));
    }
  }
}

TEST_CASE("selection probability diagnostics") {
  Rng rng(10);
  const auto s = stats(1, 0.5, 0, 0.2);
  const std::size_t mc = 20000;
  CHECK(std::abs(selection_probability(s, s, 5.0, mc, rng) - 0.5) <= 3.0 / std::sqrt(double(mc)));
  CHECK(selection_probability(stats(1, 0, 0, 0), stats(0.1, 0, 0, 0), 5.0, 1000, rng) == 1.0);
  CHECK(selection_probability(stats(1, 0, std::log(0.5), 0), stats(1, 0, 0, 0), 5.0, 1000, rng) == 1.0);
  CHECK_THROWS_AS(selection_probability(s, s, 5.0, 0, rng), ContractViolation);
}

TEST_CASE("near-degenerate dominance selects the better operator almost always") {
  Rng rng(12);
  OperatorScheduler sched(2, SchedulerConfig{});
  std::vector<OperatorStats> ops{stats(1, 1e-6, 0, 1e-6), stats(0.1, 1e-6, 0, 1e-6)};
  int a = 0;
  for (int i = 0; i < 10000; ++i) a += select_operator(ops, 100.0, rng) == 0 ? 1 : 0;
  CHECK(a >= 9900);
}

TEST_CASE("scheduler object bookkeeping") {
  OperatorScheduler sched(2, SchedulerConfig{0.8, 100});
  Rng rng(13);
  const auto first = sched.select(10.0, rng);
  sched.observe(first, 1.0, {0.5});
  CHECK(sched.select(10.0, rng) == 1 - first);
  sched.observe(1 - first, 2.0, {0.5});
  CHECK(sched.stats()[0].n_samples == 1);
  CHECK(sched.stats()[1].n_samples == 1);
  volatile std::size_t bad = 2;
  CHECK_THROWS_AS(sched.observe(bad, 1.0, {1.0}), ContractViolation);
  CHECK_THROWS_AS(OperatorScheduler(0, SchedulerConfig{}), ContractViolation);
  CHECK_THROWS_AS(OperatorScheduler(2, SchedulerConfig{1.5, 10}), ContractViolation);
}

TEST_CASE("budget bookkeeping") {
  auto b = Budget::full(10.0);
  b.debit(4.0);
  CHECK(b.remaining_j == 6.0);
  CHECK_FALSE(b.exhausted());
  b.debit(7.0);
  CHECK(b.exhausted());
  CHECK(b.remaining_j <= b.initial_j);
  CHECK_THROWS_AS(Budget::full(0.0), ContractViolation);
}
