#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eaware/core.hpp"
#include "eaware/harness.hpp"
#include "eaware/solvers.hpp"

namespace eaware {

// ---------------------------------------------------------------- saturating exponential fit

// f(E) = f_inf * (1 - A * exp(-k * E / B_max))
struct FitResult {
  double f_inf = 0.0;
  double a = 0.0;
  double k_rate = 0.0;
  double residual_sse = std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;
};

struct FitPoint {
  double energy_j = 0.0;
  double fitness = 0.0;
};

inline double saturating_exponential(double f_inf, double a, double k, double x) {
  return f_inf * (1.0 - a * std::exp(-k * x));
}

struct FitOptions {
  std::array<double, 3> k_starts{1.0, 5.0, 20.0};
  int max_iterations = 200;
  double gradient_tol = 1e-8;
};

namespace detail {

// Solves the 3x3 system m * x = b by Gaussian elimination with partial pivoting.
inline bool solve3(std::array<std::array<double, 3>, 3> m, std::array<double, 3> b, std::array<double, 3>& x) {
  for (int c = 0; c < 3; ++c) {
    int piv = c;
    for (int r = c + 1; r < 3; ++r)
      if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
    if (std::abs(m[piv][c]) < 1e-300) return false;
    std::swap(m[c], m[piv]);
    std::swap(b[c], b[piv]);
    for (int r = c + 1; r < 3; ++r) {
      const double f = m[r][c] / m[c][c];
      for (int cc = c; cc < 3; ++cc) m[r][cc] -= f * m[c][cc];
      b[r] -= f * b[c];
    }
  }
  for (int r = 2; r >= 0; --r) {
    double s = b[r];
    for (int cc = r + 1; cc < 3; ++cc) s -= m[r][cc] * x[cc];
    x[r] = s / m[r][r];
  }
  return std::isfinite(x[0]) && std::isfinite(x[1]) && std::isfinite(x[2]);
}

struct Normal {
  std::array<std::array<double, 3>, 3> jtj{};
  std::array<double, 3> jtr{};
  double sse = 0.0;
};

inline Normal normal_equations(std::span<const double> x, std::span<const double> y, const std::array<double, 3>& p) {
  Normal ne;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = std::exp(-p[2] * x[i]);
    const double model = p[0] * (1.0 - p[1] * e);
    const double r = y[i] - model;
    const std::array<double, 3> j{1.0 - p[1] * e, -p[0] * e, p[0] * p[1] * x[i] * e};
    for (int a = 0; a < 3; ++a) {
      ne.jtr[a] += j[a] * r;
      for (int b = 0; b < 3; ++b) ne.jtj[a][b] += j[a] * j[b];
    }
    ne.sse += r * r;
  }
  return ne;
}

inline double sse_of(std::span<const double> x, std::span<const double> y, const std::array<double, 3>& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - saturating_exponential(p[0], p[1], p[2], x[i]);
    s += r * r;
  }
  return s;
}

// Levenberg-Marquardt damped Gauss-Newton from one start.
inline FitResult lm_from(std::span<const double> x, std::span<const double> y, std::array<double, 3> p,
                         const FitOptions& opt, double grad_scale) {
  FitResult res;
  double lambda = 1e-3;
  Normal ne = normal_equations(x, y, p);
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    const double g = std::sqrt(ne.jtr[0] * ne.jtr[0] + ne.jtr[1] * ne.jtr[1] + ne.jtr[2] * ne.jtr[2]);
    if (g <= opt.gradient_tol * grad_scale) {
      res.converged = true;
      break;
    }
    bool improved = false;
    bool stalled = false;
    for (int tries = 0; tries < 40; ++tries) {
      auto m = ne.jtj;
      for (int d = 0; d < 3; ++d) m[d][d] += lambda * std::max(ne.jtj[d][d], 1e-12);
      std::array<double, 3> step{};
      if (solve3(m, ne.jtr, step)) {
        const std::array<double, 3> cand{p[0] + step[0], p[1] + step[1], p[2] + step[2]};
        const double s = sse_of(x, y, cand);
        if (std::isfinite(s) && s < ne.sse) {
          const double rel = std::abs(step[0]) / (1.0 + std::abs(p[0])) + std::abs(step[1]) / (1.0 + std::abs(p[1])) +
                             std::abs(step[2]) / (1.0 + std::abs(p[2]));
          p = cand;
          lambda = std::max(lambda * 0.3, 1e-12);
          improved = true;
          stalled = rel < 1e-14;
          break;
        }
      }
      lambda *= 10.0;
    }
    ne = normal_equations(x, y, p);
    if (!improved || stalled) {
      // No descent direction left at machine precision: a stationary point.
      const double g2 = std::sqrt(ne.jtr[0] * ne.jtr[0] + ne.jtr[1] * ne.jtr[1] + ne.jtr[2] * ne.jtr[2]);
      res.converged = g2 <= 1e-6 * grad_scale;
      break;
    }
  }
  res.f_inf = p[0];
  res.a = p[1];
  res.k_rate = p[2];
  res.residual_sse = ne.sse;
  res.iterations = it;
  return res;
}

}  // namespace detail

// Multi-start least squares. The gradient tolerance is relative to
// sum(y^2) so that the criterion does not depend on fitness units.
inline FitResult fit_saturating_exponential(std::span<const FitPoint> points, double b_max, const FitOptions& opt = {}) {
  require(points.size() >= 4, "fit_saturating_exponential: need at least 4 points");
  require(b_max > 0.0, "fit_saturating_exponential: B_max must be positive");
  std::vector<double> x, y;
  x.reserve(points.size());
  y.reserve(points.size());
  for (const auto& pt : points) {
    require(std::isfinite(pt.energy_j) && std::isfinite(pt.fitness), "fit_saturating_exponential: non-finite point");
    x.push_back(pt.energy_j / b_max);
    y.push_back(pt.fitness);
  }
  double y2 = 0.0;
  for (double v : y) y2 += v * v;
  const double grad_scale = std::max(1.0, y2);

  const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
  if (*ymax - *ymin <= 1e-12 * std::max(1.0, std::abs(*ymax))) {
    FitResult r;
    r.f_inf = y.front();
    r.a = 0.0;
    r.k_rate = opt.k_starts[0];
    r.residual_sse = detail::sse_of(x, y, {r.f_inf, 0.0, r.k_rate});
    r.converged = true;
    return r;
  }

  // Start from the point with the largest energy and the one with the smallest.
  const std::size_t last = static_cast<std::size_t>(std::max_element(x.begin(), x.end()) - x.begin());
  const std::size_t first = static_cast<std::size_t>(std::min_element(x.begin(), x.end()) - x.begin());
  const double f0 = y[last] != 0.0 ? y[last] : 1.0;

  FitResult best;
  for (double k0 : opt.k_starts) {
    double a0 = (1.0 - y[first] / f0) * std::exp(k0 * x[first]);
    if (!std::isfinite(a0)) a0 = 0.5;
    FitResult r = detail::lm_from(x, y, {f0, a0, k0}, opt, grad_scale);
    const bool better = (r.converged && !best.converged) ||
                        (r.converged == best.converged && r.residual_sse < best.residual_sse);
    if (better) best = r;
  }
  return best;
}

// Best-so-far is a step function of energy; grid values take the last
// recorded value at or below each grid energy.
inline std::vector<double> resample_best_so_far(const RunRecord& rec, std::span<const double> grid) {
  std::vector<double> out;
  out.reserve(grid.size());
  std::size_t i = 0;
  double current = rec.initial_fitness;
  for (double e : grid) {
    while (i < rec.trajectory.size() && rec.trajectory[i].cum_energy_j <= e) current = rec.trajectory[i++].best_fitness;
    out.push_back(current);
  }
  return out;
}

inline std::vector<FitPoint> mean_trajectory(std::span<const RunRecord> records, double b_max, std::size_t n_grid = 200) {
  require(!records.empty(), "mean_trajectory: no records");
  require(n_grid >= 2, "mean_trajectory: grid needs at least 2 points");
  std::vector<double> grid(n_grid);
  for (std::size_t g = 0; g < n_grid; ++g) grid[g] = b_max * static_cast<double>(g) / static_cast<double>(n_grid - 1);
  std::vector<double> sum(n_grid, 0.0);
  for (const auto& r : records) {
    const auto v = resample_best_so_far(r, grid);
    for (std::size_t g = 0; g < n_grid; ++g) sum[g] += v[g];
  }
  std::vector<FitPoint> out(n_grid);
  for (std::size_t g = 0; g < n_grid; ++g) out[g] = {grid[g], sum[g] / static_cast<double>(records.size())};
  return out;
}

// ---------------------------------------------------------------- Mann-Whitney U

struct TestResult {
  double u_statistic = 0.0;
  double p_value = 1.0;
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  bool exact = false;
};

enum class UMethod { automatic, exact, normal };

inline constexpr std::size_t kExactUProductLimit = 400;

namespace detail {

// Midranks of the pooled sample, doubled so ties stay integral.
struct PooledRanks {
  std::vector<std::int64_t> rank2;  // per pooled element; a first, then b
  double tie_term = 0.0;            // sum over tie groups of t^3 - t
};

inline PooledRanks pooled_ranks(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size() + b.size();
  std::vector<std::pair<double, std::size_t>> v;
  v.reserve(n);
  for (std::size_t i = 0; i < a.size(); ++i) v.emplace_back(a[i], i);
  for (std::size_t i = 0; i < b.size(); ++i) v.emplace_back(b[i], a.size() + i);
  std::sort(v.begin(), v.end());
  PooledRanks pr;
  pr.rank2.assign(n, 0);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && v[j + 1].first == v[i].first) ++j;
    // ranks i+1..j+1, doubled midrank = i + j + 2
    const auto r2 = static_cast<std::int64_t>(i + j + 2);
    for (std::size_t t = i; t <= j; ++t) pr.rank2[v[t].second] = r2;
    const double t = static_cast<double>(j - i + 1);
    pr.tie_term += t * t * t - t;
    i = j + 1;
  }
  return pr;
}

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace detail

// Two-sided test. Exact permutation distribution (tie-aware) when
// n1*n2 <= 400 under the automatic method, otherwise the normal
// approximation with tie and continuity corrections.
inline TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b, UMethod method = UMethod::automatic) {
  require(!a.empty() && !b.empty(), "mann_whitney_u: both samples must be non-empty");
  for (double v : a) require(std::isfinite(v), "mann_whitney_u: non-finite value");
  for (double v : b) require(std::isfinite(v), "mann_whitney_u: non-finite value");
  const std::size_t n1 = a.size();
  const std::size_t n2 = b.size();
  const auto pr = detail::pooled_ranks(a, b);

  std::int64_t ra2 = 0;
  for (std::size_t i = 0; i < n1; ++i) ra2 += pr.rank2[i];
  const auto n1i = static_cast<std::int64_t>(n1);
  const auto n2i = static_cast<std::int64_t>(n2);
  const std::int64_t u2 = ra2 - n1i * (n1i + 1);  // 2U

  TestResult res;
  res.n1 = n1;
  res.n2 = n2;
  res.u_statistic = static_cast<double>(u2) / 2.0;

  const bool exact = method == UMethod::exact || (method == UMethod::automatic && n1 * n2 <= kExactUProductLimit);
  if (exact) {
    // Distribution of the doubled rank sum of n1 elements drawn from the pooled ranks.
    std::int64_t max_sum = 0;
    {
      auto sorted = pr.rank2;
      std::sort(sorted.rbegin(), sorted.rend());
      for (std::size_t i = 0; i < n1; ++i) max_sum += sorted[i];
    }
    std::vector<std::vector<double>> dp(n1 + 1, std::vector<double>(static_cast<std::size_t>(max_sum) + 1, 0.0));
    dp[0][0] = 1.0;
    std::size_t used = 0;
    for (const auto r : pr.rank2) {
      ++used;
      for (std::size_t j = std::min(used, n1); j >= 1; --j) {
        auto& row = dp[j];
        const auto& prev = dp[j - 1];
        for (std::int64_t s = max_sum; s >= r; --s) row[s] += prev[s - r];
      }
    }
    const std::int64_t center2 = n1i * n2i;  // 2 * E[U]
    const std::int64_t obs_dev = std::abs(u2 - center2);
    double total = 0.0;
    double tail = 0.0;
    for (std::int64_t s = 0; s <= max_sum; ++s) {
      const double c = dp[n1][s];
      if (c == 0.0) continue;
      total += c;
      if (std::abs(s - n1i * (n1i + 1) - center2) >= obs_dev) tail += c;
    }
    res.p_value = std::min(1.0, tail / total);
    res.exact = true;
    return res;
  }

  const double dn1 = static_cast<double>(n1);
  const double dn2 = static_cast<double>(n2);
  const double n = dn1 + dn2;
  const double mu = dn1 * dn2 / 2.0;
  double var = dn1 * dn2 / 12.0 * ((n + 1.0) - pr.tie_term / (n * (n - 1.0)));
  if (!(var > 0.0)) {
    res.p_value = 1.0;
    return res;
  }
  const double z = std::max(0.0, std::abs(res.u_statistic - mu) - 0.5) / std::sqrt(var);
  res.p_value = std::min(1.0, 2.0 * detail::normal_sf(z));
  return res;
}

// ---------------------------------------------------------------- selection ratios

struct RatioBin {
  double lo = 0.0;  // budget fraction, inclusive
  double hi = 0.0;
  std::size_t total = 0;
  std::vector<std::size_t> counts;
  std::vector<double> ratio;  // empty when total == 0
};

struct RatioCurve {
  std::vector<std::string> operators;
  std::vector<RatioBin> bins;
};

// Budget fraction consumed before iteration i of rec (0 for the first).
inline double consumed_fraction_before(const RunRecord& rec, std::size_t i, const StopCondition& stop) {
  if (i == 0) return 0.0;
  const auto& prev = rec.trajectory[i - 1];
  if (stop.kind == StopCondition::Kind::energy) return prev.cum_energy_j / stop.energy_j;
  return static_cast<double>(prev.cum_evals) / static_cast<double>(stop.evaluations);
}

// Selections pooled over trials, binned by the share of the budget used when
// each operator was chosen.
inline RatioCurve selection_ratio_curve(std::span<const RunRecord> records, std::size_t n_bins, const StopCondition& stop) {
  require(!records.empty(), "selection_ratio_curve: no records");
  require(n_bins >= 1, "selection_ratio_curve: need at least one bin");
  RatioCurve curve;
  curve.operators = records.front().operators;
  const std::size_t n_ops = curve.operators.size();
  curve.bins.resize(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    curve.bins[b].lo = static_cast<double>(b) / static_cast<double>(n_bins);
    curve.bins[b].hi = static_cast<double>(b + 1) / static_cast<double>(n_bins);
    curve.bins[b].counts.assign(n_ops, 0);
  }
  for (const auto& r : records) {
    require(r.operators == curve.operators, "selection_ratio_curve: records use different portfolios");
    for (std::size_t i = 0; i < r.trajectory.size(); ++i) {
      const double frac = std::clamp(consumed_fraction_before(r, i, stop), 0.0, 1.0);
      auto b = static_cast<std::size_t>(frac * static_cast<double>(n_bins));
      b = std::min(b, n_bins - 1);
      ++curve.bins[b].counts[r.trajectory[i].op];
      ++curve.bins[b].total;
    }
  }
  for (auto& bin : curve.bins) {
    if (bin.total == 0) continue;
    bin.ratio.resize(n_ops);
    for (std::size_t o = 0; o < n_ops; ++o)
      bin.ratio[o] = static_cast<double>(bin.counts[o]) / static_cast<double>(bin.total);
  }
  return curve;
}

// ---------------------------------------------------------------- summaries

struct MeanStd {
  double mean = 0.0;
  double stdev = 0.0;  // sample (n-1); 0 for a single value
};

inline MeanStd mean_std(std::span<const double> v) {
  require(!v.empty(), "mean_std: empty sample");
  MeanStd m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.stdev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

struct MethodRuns {
  std::string label;
  ProblemKind problem = ProblemKind::kp;
  Algorithm algorithm = Algorithm::ssga;
  bool eos = false;
  std::vector<RunRecord> records;
};

struct SummaryRow {
  std::string label;
  ProblemKind problem = ProblemKind::kp;
  Algorithm algorithm = Algorithm::ssga;
  std::size_t trials = 0;
  std::optional<std::size_t> feasible;
  MeanStd fitness;
  MeanStd energy;
  double mean_evals = 0.0;
  std::optional<double> p_fitness;  // against the EOS method of the same problem/algorithm
  std::optional<double> p_energy;
};

inline std::vector<double> final_fitnesses(std::span<const RunRecord> rs) {
  std::vector<double> v;
  for (const auto& r : rs) v.push_back(r.final_fitness);
  return v;
}

inline std::vector<double> total_energies(std::span<const RunRecord> rs) {
  std::vector<double> v;
  for (const auto& r : rs) v.push_back(r.total_energy_j);
  return v;
}

inline std::vector<SummaryRow> summarize(std::span<const MethodRuns> methods) {
  require(methods.size() >= 2, "summarize: need at least two methods");
  std::vector<SummaryRow> rows;
  for (const auto& m : methods) {
    require(!m.records.empty(), "summarize: method without records");
    SummaryRow row;
    row.label = m.label;
    row.problem = m.problem;
    row.algorithm = m.algorithm;
    row.trials = m.records.size();
    const auto fit = final_fitnesses(m.records);
    const auto en = total_energies(m.records);
    row.fitness = mean_std(fit);
    row.energy = mean_std(en);
    double evals = 0.0;
    std::size_t feasible = 0;
    bool any_flag = false;
    for (const auto& r : m.records) {
      evals += static_cast<double>(r.total_evals);
      if (r.feasible) {
        any_flag = true;
        feasible += *r.feasible ? 1 : 0;
      }
    }
    row.mean_evals = evals / static_cast<double>(m.records.size());
    if (any_flag) row.feasible = feasible;
    if (!m.eos) {
      for (const auto& ref : methods) {
        if (ref.eos && ref.problem == m.problem && ref.algorithm == m.algorithm) {
          row.p_fitness = mann_whitney_u(final_fitnesses(ref.records), fit).p_value;
          row.p_energy = mann_whitney_u(total_energies(ref.records), en).p_value;
          break;
        }
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// Trial whose final fitness is the lower median.
inline std::size_t median_trial(std::span<const RunRecord> records) {
  require(!records.empty(), "median_trial: no records");
  std::vector<std::size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].final_fitness < records[b].final_fitness; });
  return idx[(idx.size() - 1) / 2];
}

// ---------------------------------------------------------------- CSV output

inline MethodRuns to_method_runs(const LoadedExperiment& e) {
  return MethodRuns{e.label, e.config.problem.kind, e.config.algorithm, e.config.mode.is_eos(), e.records};
}

inline void write_summary_csv(std::span<const SummaryRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw HarnessIoError("cannot open " + path.string() + " for writing");
  out << "method,problem,algorithm,trials,feasible,fitness_mean,fitness_std,energy_mean_j,energy_std_j,evals_mean,"
         "p_fitness,p_energy\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& r : rows) {
    out << r.label << ',' << to_string(r.problem) << ',' << to_string(r.algorithm) << ',' << r.trials << ','
        << (r.feasible ? std::to_string(*r.feasible) : std::string()) << ',' << format_double(r.fitness.mean) << ','
        << format_double(r.fitness.stdev) << ',' << format_double(r.energy.mean) << ','
        << format_double(r.energy.stdev) << ',' << format_double(r.mean_evals) << ',' << opt(r.p_fitness) << ','
        << opt(r.p_energy) << '\n';
  }
  if (!out) throw HarnessIoError("write failed: " + path.string());
}

// Energy axis scale for fitting: the budget for energy-limited runs, the
// largest total energy otherwise.
inline double fit_energy_scale(const LoadedExperiment& e) {
  if (e.config.stop.kind == StopCondition::Kind::energy) return e.config.stop.energy_j;
  double m = 0.0;
  for (const auto& r : e.records) m = std::max(m, r.total_energy_j);
  return m > 0.0 ? m : 1.0;
}

inline void write_fits_csv(std::span<const LoadedExperiment> exps, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw HarnessIoError("cannot open " + path.string() + " for writing");
  out << "method,problem,algorithm,b_max_j,f_inf,A,k,residual_sse,converged\n";
  for (const auto& e : exps) {
    const double b = fit_energy_scale(e);
    const auto pts = mean_trajectory(e.records, b);
    const auto fit = fit_saturating_exponential(pts, b);
    out << e.label << ',' << to_string(e.config.problem.kind) << ',' << to_string(e.config.algorithm) << ','
        << format_double(b) << ',' << format_double(fit.f_inf) << ',' << format_double(fit.a) << ','
        << format_double(fit.k_rate) << ',' << format_double(fit.residual_sse) << ','
        << (fit.converged ? "true" : "false") << '\n';
  }
  if (!out) throw HarnessIoError("write failed: " + path.string());
}

inline void write_ratios_csv(std::span<const LoadedExperiment> exps, std::size_t n_bins,
                             const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw HarnessIoError("cannot open " + path.string() + " for writing");
  out << "method,problem,algorithm,bin_lo_pct,bin_hi_pct,selections,op_id,ratio\n";
  for (const auto& e : exps) {
    const auto curve = selection_ratio_curve(e.records, n_bins, e.config.stop);
    for (const auto& bin : curve.bins) {
      if (bin.total == 0) continue;
      for (std::size_t o = 0; o < curve.operators.size(); ++o)
        out << e.label << ',' << to_string(e.config.problem.kind) << ',' << to_string(e.config.algorithm) << ','
            << format_double(100.0 * bin.lo) << ',' << format_double(100.0 * bin.hi) << ',' << bin.total << ','
            << curve.operators[o] << ',' << format_double(bin.ratio[o]) << '\n';
    }
  }
  if (!out) throw HarnessIoError("write failed: " + path.string());
}

inline void write_median_csv(std::span<const LoadedExperiment> exps, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw HarnessIoError("cannot open " + path.string() + " for writing");
  out << "method,problem,algorithm,trial,file,final_fitness\n";
  for (const auto& e : exps) {
    const std::size_t t = median_trial(e.records);
    out << e.label << ',' << to_string(e.config.problem.kind) << ',' << to_string(e.config.algorithm) << ','
        << e.records[t].trial_index << ',' << trial_file_name(e.hash, e.records[t].trial_index) << ','
        << format_double(e.records[t].final_fitness) << '\n';
  }
  if (!out) throw HarnessIoError("write failed: " + path.string());
}

}  // namespace eaware
