#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "eaware/core.hpp"
#include "eaware/energy.hpp"

namespace eaware {

// Online belief about one operator: EWMA mean/variance of the fitness change
// and of the log-energy it costs.
struct OperatorStats {
  double mu_df = 0.0;
  double var_df = 0.0;
  double mu_ln_e = 0.0;
  double var_ln_e = 0.0;
  std::size_t n_samples = 0;

  bool sampled() const noexcept { return n_samples > 0; }
  friend bool operator==(const OperatorStats&, const OperatorStats&) = default;
};

struct SchedulerConfig {
  double alpha = 0.9;
  std::size_t mc_samples = 10000;
};

// Remaining energy. remaining_j goes negative only on the step that exhausts it.
struct Budget {
  double remaining_j = 0.0;
  double initial_j = 0.0;

  static Budget full(double joules) {
    require(joules > 0.0, "Budget: initial energy must be positive");
    return Budget{joules, joules};
  }
  void debit(double joules) { remaining_j -= joules; }
  bool exhausted() const noexcept { return remaining_j <= 0.0; }
};

// EWMA update. The variance terms use the freshly updated mean. The first
// observation seeds the means and zeroes the variances.
inline OperatorStats update_stats(OperatorStats s, double delta_f, EnergySample energy, double alpha) {
  require(std::isfinite(delta_f), "update_stats: delta_f is not finite");
  require(std::isfinite(energy.joules) && energy.joules > 0.0, "update_stats: energy must be finite and > 0");
  require(alpha > 0.0 && alpha < 1.0, "update_stats: alpha must lie in (0,1)");
  const double ln_e = std::log(energy.joules);
  if (s.n_samples == 0) {
    s.mu_df = delta_f;
    s.var_df = 0.0;
    s.mu_ln_e = ln_e;
    s.var_ln_e = 0.0;
  } else {
    s.mu_df = alpha * s.mu_df + (1.0 - alpha) * delta_f;
    const double rf = delta_f - s.mu_df;
    s.var_df = alpha * s.var_df + (1.0 - alpha) * rf * rf;
    s.mu_ln_e = alpha * s.mu_ln_e + (1.0 - alpha) * ln_e;
    const double re = ln_e - s.mu_ln_e;
    s.var_ln_e = alpha * s.var_ln_e + (1.0 - alpha) * re * re;
  }
  ++s.n_samples;
  return s;
}

// Thompson draws ---------------------------------------------------------

// Draws from N(mu_df, var_df) given a standard normal z.
inline double improvement_quantile(const OperatorStats& s, double z) {
  return s.mu_df + std::sqrt(s.var_df) * z;
}

inline double energy_quantile(const OperatorStats& s, double z) {
  return std::exp(s.mu_ln_e + std::sqrt(s.var_ln_e) * z);
}

inline double sample_improvement(const OperatorStats& s, Rng& rng) {
  require(s.sampled(), "sample_improvement: operator has no observations");
  if (s.var_df == 0.0) return s.mu_df;
  return improvement_quantile(s, rng.normal());
}

inline double sample_energy(const OperatorStats& s, Rng& rng) {
  require(s.sampled(), "sample_energy: operator has no observations");
  if (s.var_ln_e == 0.0) return std::exp(s.mu_ln_e);
  return energy_quantile(s, rng.normal());
}

inline double robust_eij(double df_sample, double e_sample) {
  require(e_sample > 0.0, "robust_eij: energy sample must be positive");
  return df_sample / e_sample;
}

// Mean of the log-normal energy model.
inline double expected_energy(const OperatorStats& s) {
  return std::exp(s.mu_ln_e + 0.5 * s.var_ln_e);
}

inline double budget_penalty(const OperatorStats& s, double remaining_j) {
  require(remaining_j > 0.0, "budget_penalty: remaining budget must be positive");
  return remaining_j / (remaining_j + expected_energy(s));
}

inline double budget_penalty(const OperatorStats& s, const Budget& b) {
  return budget_penalty(s, b.remaining_j);
}

inline double priority(const OperatorStats& s, double remaining_j, Rng& rng) {
  const double df = sample_improvement(s, rng);
  const double e = sample_energy(s, rng);
  return robust_eij(df, e) * budget_penalty(s, remaining_j);
}

inline double priority(const OperatorStats& s, const Budget& b, Rng& rng) {
  return priority(s, b.remaining_j, rng);
}

// Forced exploration first (uniform among never-applied operators), then the
// argmax of the sampled priority with uniform tie-breaking.
inline std::size_t select_operator(std::span<const OperatorStats> stats, double remaining_j, Rng& rng) {
  require(!stats.empty(), "select_operator: no operators registered");
  require(remaining_j > 0.0, "select_operator: budget exhausted");

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < stats.size(); ++i)
    if (!stats[i].sampled()) candidates.push_back(i);
  if (!candidates.empty()) return candidates[rng.uniform_index(0, candidates.size() - 1)];

  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const double p = priority(stats[i], remaining_j, rng);
    if (p > best) {
      best = p;
      candidates.assign(1, i);
    } else if (p == best) {
      candidates.push_back(i);
    }
  }
  if (candidates.size() == 1) return candidates.front();
  return candidates[rng.uniform_index(0, candidates.size() - 1)];
}

inline std::size_t select_operator(std::span<const OperatorStats> stats, const Budget& b, Rng& rng) {
  return select_operator(stats, b.remaining_j, rng);
}

// Monte Carlo estimate of P(priority(s1) > priority(s2)). Diagnostic only.
inline double selection_probability(const OperatorStats& s1, const OperatorStats& s2, double remaining_j,
                                    std::size_t mc_samples, Rng& rng) {
  require(mc_samples > 0, "selection_probability: mc_samples must be positive");
  require(s1.sampled() && s2.sampled(), "selection_probability: both operators need observations");
  std::size_t wins = 0;
  for (std::size_t i = 0; i < mc_samples; ++i) {
    const double p1 = priority(s1, remaining_j, rng);
    const double p2 = priority(s2, remaining_j, rng);
    if (p1 > p2) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(mc_samples);
}

// Stateful wrapper owned by one trial.
class OperatorScheduler {
public:
  OperatorScheduler(std::size_t n_operators, SchedulerConfig cfg) : cfg_(cfg), stats_(n_operators) {
    require(n_operators > 0, "OperatorScheduler: need at least one operator");
    require(cfg.alpha > 0.0 && cfg.alpha < 1.0, "OperatorScheduler: alpha must lie in (0,1)");
  }

  std::size_t select(double remaining_j, Rng& rng) const { return select_operator(stats_, remaining_j, rng); }

  void observe(std::size_t op, double delta_f, EnergySample e) {
    require(op < stats_.size(), "OperatorScheduler::observe: unknown operator");
    stats_[op] = update_stats(stats_[op], delta_f, e, cfg_.alpha);
  }

  const std::vector<OperatorStats>& stats() const noexcept { return stats_; }
  const SchedulerConfig& config() const noexcept { return cfg_; }

private:
  SchedulerConfig cfg_;
  std::vector<OperatorStats> stats_;
};

}  // namespace eaware
