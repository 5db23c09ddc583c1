#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "eaware/core.hpp"
#include "eaware/energy.hpp"
#include "eaware/problems.hpp"
#include "eaware/scheduler.hpp"

namespace eaware {

enum class Algorithm { ssga, pso, ils };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::ssga: return "ssga";
    case Algorithm::pso: return "pso";
    case Algorithm::ils: return "ils";
  }
  return "?";
}

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "ssga") return Algorithm::ssga;
  if (s == "pso") return Algorithm::pso;
  if (s == "ils") return Algorithm::ils;
  throw ContractViolation("unknown algorithm '" + s + "'");
}

// One of the two operators an algorithm offers to the scheduler.
struct OperatorVariant {
  const char* id;     // CSV / CLI name
  const char* label;  // name of the single-operator baseline
  Algorithm algorithm;
  unsigned param;  // ssga: offspring k; pso: 1 = full, 0 = light; ils: bits flipped
};

inline constexpr std::array<OperatorVariant, 6> kVariants{{
    {"replace1", "SSGA-1", Algorithm::ssga, 1},
    {"replace5", "SSGA-5", Algorithm::ssga, 5},
    {"full", "PSO-Full", Algorithm::pso, 1},
    {"light", "PSO-Light", Algorithm::pso, 0},
    {"ils1", "ILS-1", Algorithm::ils, 1},
    {"ils5", "ILS-5", Algorithm::ils, 5},
}};

// The portfolio of an algorithm, in registration order.
inline std::array<OperatorVariant, 2> variants_of(Algorithm a) {
  const auto base = static_cast<std::size_t>(a) * 2;
  return {kVariants[base], kVariants[base + 1]};
}

inline std::size_t variant_index(Algorithm a, const std::string& id) {
  const auto vs = variants_of(a);
  for (std::size_t i = 0; i < vs.size(); ++i)
    if (id == vs[i].id) return i;
  throw ContractViolation(std::string("variant '") + id + "' does not belong to " + to_string(a));
}

inline std::string eos_label(Algorithm a) {
  switch (a) {
    case Algorithm::ssga: return "EOS-SSGA";
    case Algorithm::pso: return "EOS-PSO";
    case Algorithm::ils: return "EOS-ILS";
  }
  return "EOS";
}

struct SolverParams {
  std::size_t population = 100;
  double crossover_rate = 0.8;
  double mutation_rate = -1.0;  // negative: 1/D
  std::size_t swarm = 100;
  double inertia = 0.729;
  double c1 = 2.05;
  double c2 = 2.05;
  std::size_t ils_iterations = 100;
};

struct StepOutcome {
  double delta_f = 0.0;
  std::uint64_t n_evaluations = 0;
  EnergySample energy;
};

// Runs body() between meter begin/end and charges the evaluations it reports.
template <class Body>
StepOutcome metered_step(EnergyMeter& meter, const ProblemSize& size, Rng& meter_rng, Body&& body) {
  MeterToken token = meter.begin();
  auto [delta_f, evals] = body();
  StepOutcome out;
  out.delta_f = delta_f;
  out.n_evaluations = evals;
  out.energy = meter.end(token, work_units_for(size, evals), meter_rng);
  return out;
}

// ---------------------------------------------------------------- steady-state GA

struct Individual {
  Bitstring x;
  double fitness = 0.0;
};

// Population kept sorted by fitness, best first.
struct GaState {
  std::vector<Individual> population;

  double best_fitness() const { return population.front().fitness; }
  const Bitstring& best() const { return population.front().x; }
};

template <BinaryProblem P>
GaState ga_init(const P& problem, const SolverParams& params, Rng& rng) {
  require(params.population >= 2, "ga_init: population must be >= 2");
  GaState s;
  s.population.reserve(params.population);
  for (std::size_t i = 0; i < params.population; ++i) {
    Bitstring x = random_bitstring(problem.dimension(), rng);
    const double f = problem.evaluate(x);
    s.population.push_back({std::move(x), f});
  }
  std::stable_sort(s.population.begin(), s.population.end(),
                   [](const Individual& a, const Individual& b) { return a.fitness > b.fitness; });
  return s;
}

namespace detail {

inline std::size_t tournament2(const std::vector<Individual>& pop, Rng& rng) {
  const std::size_t a = rng.uniform_index(0, pop.size() - 1);
  const std::size_t b = rng.uniform_index(0, pop.size() - 1);
  return pop[b].fitness > pop[a].fitness ? b : a;
}

}  // namespace detail

// Produces k offspring, then keeps the best |P| of parents and offspring.
template <BinaryProblem P>
StepOutcome ssga_step(GaState& state, unsigned k, const P& problem, const SolverParams& params, EnergyMeter& meter,
                      Rng& rng, Rng& meter_rng) {
  require(!state.population.empty(), "ssga_step: population not initialised");
  require(k >= 1, "ssga_step: k must be >= 1");
  const std::size_t dim = problem.dimension();
  const double pm = params.mutation_rate < 0.0 ? 1.0 / static_cast<double>(dim) : params.mutation_rate;

  return metered_step(meter, problem.size(), meter_rng, [&] {
    std::vector<Individual> offspring;
    offspring.reserve(k);
    double delta_f = 0.0;
    for (unsigned c = 0; c < k; ++c) {
      const Individual& p1 = state.population[detail::tournament2(state.population, rng)];
      const Individual& p2 = state.population[detail::tournament2(state.population, rng)];
      Bitstring child = p1.x;
      if (dim > 1 && rng.bernoulli(params.crossover_rate)) {
        const std::size_t cut = rng.uniform_index(1, dim - 1);
        for (std::size_t i = cut; i < dim; ++i) child.set(i, p2.x[i]);
      }
      if (pm > 0.0)
        for (std::size_t i = 0; i < dim; ++i)
          if (rng.bernoulli(pm)) child.flip(i);
      const double f = problem.evaluate(child);
      delta_f += f - std::max(p1.fitness, p2.fitness);
      offspring.push_back({std::move(child), f});
    }
    // Incumbents precede offspring, so a stable sort lets them win ties.
    auto& pop = state.population;
    const std::size_t n = pop.size();
    for (auto& o : offspring) pop.push_back(std::move(o));
    std::stable_sort(pop.begin(), pop.end(),
                     [](const Individual& a, const Individual& b) { return a.fitness > b.fitness; });
    pop.resize(n);
    return std::pair<double, std::uint64_t>{delta_f, k};
  });
}

// ---------------------------------------------------------------- PSO

// Continuous positions in [0,1]^D; a dimension reads as bit 1 when >= 0.5.
struct Particle {
  std::vector<double> position;
  std::vector<double> velocity;
  double fitness = 0.0;  // of the binarised current position
  std::vector<double> pbest_position;
  double pbest_fitness = 0.0;
};

struct PsoState {
  std::vector<Particle> particles;
  std::vector<double> gbest_position;
  double gbest_fitness = -std::numeric_limits<double>::infinity();

  double best_fitness() const { return gbest_fitness; }
};

inline Bitstring binarize(const std::vector<double>& position) {
  Bitstring x(position.size());
  for (std::size_t i = 0; i < position.size(); ++i) x.set(i, position[i] >= 0.5);
  return x;
}

template <BinaryProblem P>
PsoState pso_init(const P& problem, const SolverParams& params, Rng& rng) {
  require(params.swarm >= 1, "pso_init: swarm must be >= 1");
  const std::size_t dim = problem.dimension();
  PsoState s;
  s.particles.resize(params.swarm);
  for (auto& p : s.particles) {
    p.position.resize(dim);
    for (auto& v : p.position) v = rng.uniform();
    p.velocity.assign(dim, 0.0);
    p.fitness = problem.evaluate(binarize(p.position));
    p.pbest_position = p.position;
    p.pbest_fitness = p.fitness;
    if (p.pbest_fitness > s.gbest_fitness) {
      s.gbest_fitness = p.pbest_fitness;
      s.gbest_position = p.pbest_position;
    }
  }
  return s;
}

// full: inertia + personal best + global best; light drops the global-best term.
template <BinaryProblem P>
StepOutcome pso_step(PsoState& state, bool full, const P& problem, const SolverParams& params, EnergyMeter& meter,
                     Rng& rng, Rng& meter_rng) {
  require(!state.particles.empty(), "pso_step: swarm not initialised");
  return metered_step(meter, problem.size(), meter_rng, [&] {
    double delta_f = 0.0;
    for (auto& p : state.particles) {
      const std::size_t dim = p.position.size();
      for (std::size_t d = 0; d < dim; ++d) {
        const double r1 = rng.uniform();
        double v = params.inertia * p.velocity[d] + params.c1 * r1 * (p.pbest_position[d] - p.position[d]);
        if (full) {
          const double r2 = rng.uniform();
          v += params.c2 * r2 * (state.gbest_position[d] - p.position[d]);
        }
        p.velocity[d] = v;
        p.position[d] = std::clamp(p.position[d] + v, 0.0, 1.0);
      }
      const double f = problem.evaluate(binarize(p.position));
      delta_f += f - p.fitness;
      p.fitness = f;
      if (f > p.pbest_fitness) {
        p.pbest_fitness = f;
        p.pbest_position = p.position;
      }
    }
    for (const auto& p : state.particles) {
      if (p.pbest_fitness > state.gbest_fitness) {
        state.gbest_fitness = p.pbest_fitness;
        state.gbest_position = p.pbest_position;
      }
    }
    return std::pair<double, std::uint64_t>{delta_f, state.particles.size()};
  });
}

// ---------------------------------------------------------------- ILS

struct IlsState {
  Bitstring best;
  double fitness = 0.0;

  double best_fitness() const { return fitness; }
};

template <BinaryProblem P>
IlsState ils_init(const P& problem, Rng& rng) {
  IlsState s;
  s.best = random_bitstring(problem.dimension(), rng);
  s.fitness = problem.evaluate(s.best);
  return s;
}

// Perturb the incumbent by flip_k bits, then i_max single-neighbour
// first-improvement moves with the same flip size.
template <BinaryProblem P>
StepOutcome ils_step(IlsState& state, std::size_t flip_k, const P& problem, const SolverParams& params,
                     EnergyMeter& meter, Rng& rng, Rng& meter_rng) {
  require(flip_k >= 1 && flip_k <= problem.dimension(), "ils_step: flip count out of range");
  Bitstring x;
  double fx = 0.0;
  StepOutcome out = metered_step(meter, problem.size(), meter_rng, [&] {
    x = flip_distinct_bits(state.best, flip_k, rng);
    fx = problem.evaluate(x);
    for (std::size_t i = 0; i < params.ils_iterations; ++i) {
      Bitstring cand = flip_distinct_bits(x, flip_k, rng);
      const double fc = problem.evaluate(cand);
      if (fc > fx) {
        x = std::move(cand);
        fx = fc;
      }
    }
    return std::pair<double, std::uint64_t>{fx - state.fitness, 1 + params.ils_iterations};
  });
  if (fx > state.fitness) {
    state.best = std::move(x);
    state.fitness = fx;
  }
  return out;
}

// ---------------------------------------------------------------- run loop

struct StopCondition {
  enum class Kind { energy, evaluations };
  Kind kind = Kind::evaluations;
  double energy_j = 0.0;
  std::uint64_t evaluations = 0;

  static StopCondition energy_budget(double joules) {
    require(joules > 0.0, "energy budget must be positive");
    return {Kind::energy, joules, 0};
  }
  static StopCondition eval_budget(std::uint64_t n) {
    require(n > 0, "evaluation budget must be positive");
    return {Kind::evaluations, 0.0, n};
  }
};

// eos: scheduler-driven; otherwise the fixed variant index within the portfolio.
struct RunMode {
  std::optional<std::size_t> static_variant;

  static RunMode eos() { return {}; }
  static RunMode fixed(std::size_t v) { return {v}; }
  bool is_eos() const noexcept { return !static_variant.has_value(); }
};

struct RunSpec {
  Algorithm algorithm = Algorithm::ssga;
  RunMode mode;
  StopCondition stop;
  SchedulerConfig scheduler;
  SolverParams params;
};

struct TrajectoryPoint {
  std::uint64_t iteration = 0;
  double cum_energy_j = 0.0;
  std::uint64_t cum_evals = 0;
  double best_fitness = 0.0;
  std::size_t op = 0;
  std::vector<OperatorStats> stats;

  friend bool operator==(const TrajectoryPoint&, const TrajectoryPoint&) = default;
};

struct RunRecord {
  std::string config_hash;
  std::uint64_t trial_index = 0;
  std::uint64_t trial_seed = 0;
  Algorithm algorithm = Algorithm::ssga;
  std::vector<std::string> operators;
  double initial_fitness = 0.0;
  std::vector<TrajectoryPoint> trajectory;
  double final_fitness = 0.0;
  double total_energy_j = 0.0;
  std::uint64_t total_evals = 0;
  std::optional<bool> feasible;  // knapsack only
  Bitstring best_solution;

  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

// Sub-stream tags of a trial generator.
inline constexpr std::uint64_t kSearchStream = 1;
inline constexpr std::uint64_t kSchedulerStream = 2;
inline constexpr std::uint64_t kMeterStream = 3;

namespace detail {

template <BinaryProblem P>
struct SolverBox {
  Algorithm algorithm;
  GaState ga;
  PsoState pso;
  IlsState ils;

  SolverBox(Algorithm a, const P& problem, const SolverParams& params, Rng& rng) : algorithm(a) {
    switch (a) {
      case Algorithm::ssga: ga = ga_init(problem, params, rng); break;
      case Algorithm::pso: pso = pso_init(problem, params, rng); break;
      case Algorithm::ils: ils = ils_init(problem, rng); break;
    }
  }

  StepOutcome step(std::size_t op, const P& problem, const SolverParams& params, EnergyMeter& meter, Rng& rng,
                   Rng& meter_rng) {
    const auto v = variants_of(algorithm)[op];
    switch (algorithm) {
      case Algorithm::ssga: return ssga_step(ga, v.param, problem, params, meter, rng, meter_rng);
      case Algorithm::pso: return pso_step(pso, v.param == 1, problem, params, meter, rng, meter_rng);
      case Algorithm::ils: return ils_step(ils, v.param, problem, params, meter, rng, meter_rng);
    }
    return {};
  }

  double best_fitness() const {
    switch (algorithm) {
      case Algorithm::ssga: return ga.best_fitness();
      case Algorithm::pso: return pso.best_fitness();
      case Algorithm::ils: return ils.best_fitness();
    }
    return 0.0;
  }

  Bitstring best_solution() const {
    switch (algorithm) {
      case Algorithm::ssga: return ga.best();
      case Algorithm::pso: return binarize(pso.gbest_position);
      case Algorithm::ils: return ils.best;
    }
    return {};
  }
};

}  // namespace detail

// One trial. Initialisation is neither metered nor counted; every loop
// iteration is, and the iteration that exhausts the stop condition completes.
template <BinaryProblem P>
RunRecord run_solver(const P& problem, const RunSpec& spec, EnergyMeter& meter, std::uint64_t trial_seed) {
  const auto variants = variants_of(spec.algorithm);
  if (spec.mode.static_variant) require(*spec.mode.static_variant < variants.size(), "run_solver: bad static variant");

  const Rng trial(trial_seed);
  Rng search = trial.split(kSearchStream);
  Rng sched_rng = trial.split(kSchedulerStream);
  Rng meter_rng = trial.split(kMeterStream);

  detail::SolverBox<P> solver(spec.algorithm, problem, spec.params, search);
  OperatorScheduler scheduler(variants.size(), spec.scheduler);

  RunRecord rec;
  rec.trial_seed = trial_seed;
  rec.algorithm = spec.algorithm;
  for (const auto& v : variants) rec.operators.emplace_back(v.id);
  rec.initial_fitness = solver.best_fitness();

  const bool energy_stop = spec.stop.kind == StopCondition::Kind::energy;
  double remaining_j = energy_stop ? spec.stop.energy_j : 0.0;
  double cum_energy = 0.0;
  std::uint64_t cum_evals = 0;

  auto keep_going = [&] { return energy_stop ? remaining_j > 0.0 : cum_evals < spec.stop.evaluations; };

  for (std::uint64_t it = 1; keep_going(); ++it) {
    std::size_t op = 0;
    if (spec.mode.is_eos()) {
      // Under an evaluation budget the penalty sees the joules the remaining
      // evaluations would cost at the observed average rate.
      double budget_j = remaining_j;
      if (!energy_stop) {
        const double per_eval = cum_evals > 0 ? cum_energy / static_cast<double>(cum_evals) : 1.0;
        budget_j = static_cast<double>(spec.stop.evaluations - cum_evals) * per_eval;
      }
      op = scheduler.select(budget_j, sched_rng);
    } else {
      op = *spec.mode.static_variant;
    }

    const StepOutcome out = solver.step(op, problem, spec.params, meter, search, meter_rng);
    scheduler.observe(op, out.delta_f, out.energy);
    cum_energy += out.energy.joules;
    cum_evals += out.n_evaluations;
    if (energy_stop) remaining_j -= out.energy.joules;

    TrajectoryPoint pt;
    pt.iteration = it;
    pt.cum_energy_j = cum_energy;
    pt.cum_evals = cum_evals;
    pt.best_fitness = solver.best_fitness();
    pt.op = op;
    pt.stats = scheduler.stats();
    rec.trajectory.push_back(std::move(pt));
  }

  rec.final_fitness = solver.best_fitness();
  rec.total_energy_j = cum_energy;
  rec.total_evals = cum_evals;
  rec.best_solution = solver.best_solution();
  if constexpr (std::is_same_v<P, KpInstance>) {
    rec.feasible = problem.feasible(rec.best_solution);
  } else if constexpr (std::is_same_v<P, Problem>) {
    if (const auto* kp = problem.as_kp()) rec.feasible = kp->feasible(rec.best_solution);
  }
  return rec;
}

}  // namespace eaware
