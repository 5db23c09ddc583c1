#pragma once

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "eaware/core.hpp"
#include "eaware/energy.hpp"
#include "eaware/problems.hpp"
#include "eaware/scheduler.hpp"
#include "eaware/solvers.hpp"

namespace eaware {

class HarnessIoError : public std::runtime_error {
public:
  explicit HarnessIoError(const std::string& what) : std::runtime_error(what) {}
};

struct ProblemSpec {
  ProblemKind kind = ProblemKind::kp;
  std::size_t n = 100;
  std::size_t k = 6;
  std::size_t m = 24;
  std::uint64_t instance_seed = 1;
  std::string instance_file;  // overrides generation when set

  static ProblemSpec defaults(ProblemKind kind) {
    ProblemSpec p;
    p.kind = kind;
    switch (kind) {
      case ProblemKind::kp: p.n = 100; break;
      case ProblemKind::nk: p.n = 100; p.k = 6; break;
      case ProblemKind::ecc: p.n = 12; p.m = 24; break;
    }
    return p;
  }
};

inline double default_energy_budget(ProblemKind k) { return k == ProblemKind::ecc ? 10000.0 : 1000.0; }

inline std::uint64_t default_eval_budget(ProblemKind k) {
  switch (k) {
    case ProblemKind::kp: return 35000;
    case ProblemKind::nk: return 10000;
    case ProblemKind::ecc: return 15000;
  }
  return 10000;
}

struct ExperimentConfig {
  ProblemSpec problem;
  Algorithm algorithm = Algorithm::ssga;
  RunMode mode;
  StopCondition stop = StopCondition::energy_budget(1000.0);
  std::size_t trials = 100;
  std::uint64_t master_seed = 1;
  MeterConfig meter;
  double alpha = 0.9;
  SolverParams params;
  std::filesystem::path out_dir = ".";
  std::size_t threads = 0;  // 0: hardware concurrency; forced to 1 for RAPL

  static ExperimentConfig defaults(ProblemKind kind, Algorithm algo) {
    ExperimentConfig c;
    c.problem = ProblemSpec::defaults(kind);
    c.algorithm = algo;
    c.stop = StopCondition::energy_budget(default_energy_budget(kind));
    return c;
  }

  std::string mode_string() const {
    if (mode.is_eos()) return "eos";
    return std::string("static:") + variants_of(algorithm)[*mode.static_variant].id;
  }

  std::string label() const {
    if (mode.is_eos()) return eos_label(algorithm);
    return variants_of(algorithm)[*mode.static_variant].label;
  }

  RunSpec run_spec() const {
    RunSpec s;
    s.algorithm = algorithm;
    s.mode = mode;
    s.stop = stop;
    s.scheduler.alpha = alpha;
    s.params = params;
    return s;
  }
};

inline RunMode parse_mode(Algorithm algo, const std::string& s) {
  if (s == "eos") return RunMode::eos();
  const std::string prefix = "static:";
  if (s.rfind(prefix, 0) == 0) return RunMode::fixed(variant_index(algo, s.substr(prefix.size())));
  throw ContractViolation("mode must be 'eos' or 'static:<variant>', got '" + s + "'");
}

// ---------------------------------------------------------------- config <-> JSON

// Everything that determines results. out_dir and threads are excluded.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json j;
  j["problem"] = {{"kind", to_string(c.problem.kind)},
                  {"n", c.problem.n},
                  {"k", c.problem.k},
                  {"m", c.problem.m},
                  {"instance_seed", c.problem.instance_seed},
                  {"instance_file", c.problem.instance_file}};
  j["algorithm"] = to_string(c.algorithm);
  j["mode"] = c.mode_string();
  if (c.stop.kind == StopCondition::Kind::energy) j["stop"] = {{"energy_budget_j", c.stop.energy_j}};
  else j["stop"] = {{"eval_budget", c.stop.evaluations}};
  j["trials"] = c.trials;
  j["master_seed"] = c.master_seed;
  j["meter"] = {{"kind", c.meter.kind == MeterKind::rapl ? "rapl" : "simulated"},
                {"noise_sigma", c.meter.noise_sigma},
                {"joules_per_work_unit", c.meter.joules_per_work_unit},
                {"fixed_overhead_j", c.meter.fixed_overhead_j},
                {"energy_floor_j", c.meter.energy_floor_j},
                {"rapl_root", c.meter.rapl_root}};
  j["alpha"] = c.alpha;
  j["params"] = {{"population", c.params.population},   {"crossover_rate", c.params.crossover_rate},
                 {"mutation_rate", c.params.mutation_rate}, {"swarm", c.params.swarm},
                 {"inertia", c.params.inertia},           {"c1", c.params.c1},
                 {"c2", c.params.c2},                     {"ils_iterations", c.params.ils_iterations}};
  return j;
}

// Applies the fields present in j on top of base. Missing fields keep base values.
inline ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {}) {
  auto opt = [](const nlohmann::json& obj, const char* key, auto& dst) {
    if (obj.is_object() && obj.contains(key)) {
      try {
        dst = obj.at(key).get<std::decay_t<decltype(dst)>>();
      } catch (const nlohmann::json::exception& e) {
        throw ContractViolation(std::string("config field '") + key + "': " + e.what());
      }
    }
  };
  ExperimentConfig c = std::move(base);
  if (j.contains("problem")) {
    const auto& p = j.at("problem");
    if (p.contains("kind")) {
      const auto kind = problem_kind_from_string(p.at("kind").get<std::string>());
      if (kind != c.problem.kind) c.problem = ProblemSpec::defaults(kind);
    }
    opt(p, "n", c.problem.n);
    opt(p, "k", c.problem.k);
    opt(p, "m", c.problem.m);
    opt(p, "instance_seed", c.problem.instance_seed);
    opt(p, "instance_file", c.problem.instance_file);
  }
  if (j.contains("algorithm")) c.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
  if (j.contains("mode")) c.mode = parse_mode(c.algorithm, j.at("mode").get<std::string>());
  if (j.contains("stop")) {
    const auto& s = j.at("stop");
    const bool e = s.contains("energy_budget_j");
    const bool n = s.contains("eval_budget");
    if (e && n) throw ContractViolation("config: stop has both energy_budget_j and eval_budget");
    if (e) c.stop = StopCondition::energy_budget(s.at("energy_budget_j").get<double>());
    if (n) c.stop = StopCondition::eval_budget(s.at("eval_budget").get<std::uint64_t>());
  }
  opt(j, "trials", c.trials);
  opt(j, "master_seed", c.master_seed);
  if (j.contains("meter")) {
    const auto& m = j.at("meter");
    if (m.contains("kind")) {
      const auto k = m.at("kind").get<std::string>();
      if (k == "rapl") c.meter.kind = MeterKind::rapl;
      else if (k == "simulated") c.meter.kind = MeterKind::simulated;
      else throw ContractViolation("config: meter.kind must be rapl or simulated");
    }
    opt(m, "noise_sigma", c.meter.noise_sigma);
    opt(m, "joules_per_work_unit", c.meter.joules_per_work_unit);
    opt(m, "fixed_overhead_j", c.meter.fixed_overhead_j);
    opt(m, "energy_floor_j", c.meter.energy_floor_j);
    opt(m, "rapl_root", c.meter.rapl_root);
  }
  opt(j, "alpha", c.alpha);
  if (j.contains("params")) {
    const auto& p = j.at("params");
    opt(p, "population", c.params.population);
    opt(p, "crossover_rate", c.params.crossover_rate);
    opt(p, "mutation_rate", c.params.mutation_rate);
    opt(p, "swarm", c.params.swarm);
    opt(p, "inertia", c.params.inertia);
    opt(p, "c1", c.params.c1);
    opt(p, "c2", c.params.c2);
    opt(p, "ils_iterations", c.params.ils_iterations);
  }
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("threads")) c.threads = j.at("threads").get<std::size_t>();
  return c;
}

inline void validate(const ExperimentConfig& c) {
  require(c.trials >= 1, "config: trials must be >= 1");
  require(c.alpha > 0.0 && c.alpha < 1.0, "config: alpha must lie in (0,1)");
  require(c.problem.n >= 1, "config: problem.n must be >= 1");
  if (c.problem.kind == ProblemKind::nk) require(c.problem.k < c.problem.n, "config: NK requires k < n");
  if (c.problem.kind == ProblemKind::ecc) require(c.problem.m >= 2, "config: ECC requires m >= 2");
}

// 64-bit FNV-1a over the compact canonical JSON (keys sorted by nlohmann::json).
inline std::string config_hash(const ExperimentConfig& c) {
  const std::string s = config_to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

inline std::uint64_t trial_seed(std::uint64_t master_seed, std::uint64_t trial_index) {
  return Rng::derive(master_seed, trial_index).seed();
}

inline Problem build_problem(const ProblemSpec& spec) {
  if (!spec.instance_file.empty()) {
    Instance inst = instance_load(spec.instance_file);
    Problem p(std::move(inst));
    require(p.kind() == spec.kind, "instance file kind does not match problem.kind");
    return p;
  }
  switch (spec.kind) {
    case ProblemKind::kp: return Problem(kp_generate(spec.n, spec.instance_seed));
    case ProblemKind::nk: return Problem(nk_generate(spec.n, spec.k, spec.instance_seed));
    case ProblemKind::ecc: return Problem(ecc_make(spec.m, spec.n));
  }
  throw ContractViolation("unknown problem kind");
}

// ---------------------------------------------------------------- trial CSV

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trial_csv_header(const std::vector<std::string>& operators) {
  std::string h = "iter,cum_energy_j,cum_evals,best_fitness,op_id";
  for (const auto& op : operators) h += ",mu_df_" + op + ",var_df_" + op + ",mu_lnE_" + op + ",var_lnE_" + op;
  return h;
}

inline void write_trial_csv(const RunRecord& rec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw HarnessIoError("cannot open " + path.string() + " for writing");
  out << trial_csv_header(rec.operators) << '\n';
  for (const auto& pt : rec.trajectory) {
    out << pt.iteration << ',' << format_double(pt.cum_energy_j) << ',' << pt.cum_evals << ','
        << format_double(pt.best_fitness) << ',' << rec.operators.at(pt.op);
    for (const auto& s : pt.stats)
      out << ',' << format_double(s.mu_df) << ',' << format_double(s.var_df) << ',' << format_double(s.mu_ln_e)
          << ',' << format_double(s.var_ln_e);
    out << '\n';
  }
  if (!out) throw HarnessIoError("write failed: " + path.string());
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double to_double(const std::string& s, const std::string& ctx) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw HarnessIoError(ctx + ": not a number '" + s + "'");
  }
}

inline std::uint64_t to_u64(const std::string& s, const std::string& ctx) {
  try {
    std::size_t pos = 0;
    auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw HarnessIoError(ctx + ": not an integer '" + s + "'");
  }
}

}  // namespace detail

// Reads the trajectory and operator list back. n_samples is recovered by
// counting selections, which is how it evolves during a run.
inline RunRecord read_trial_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw HarnessIoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw HarnessIoError(path.string() + ": empty file");
  const auto header = detail::split_csv(line);
  if (header.size() < 5 || (header.size() - 5) % 4 != 0) throw HarnessIoError(path.string() + ": malformed header");
  RunRecord rec;
  for (std::size_t i = 5; i < header.size(); i += 4) {
    const std::string& h = header[i];
    if (h.rfind("mu_df_", 0) != 0) throw HarnessIoError(path.string() + ": unexpected column " + h);
    rec.operators.push_back(h.substr(6));
  }
  if (trial_csv_header(rec.operators) != line) throw HarnessIoError(path.string() + ": header does not match schema");

  std::vector<std::size_t> counts(rec.operators.size(), 0);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const std::string ctx = path.string() + ":" + std::to_string(row);
    const auto cells = detail::split_csv(line);
    if (cells.size() != header.size()) throw HarnessIoError(ctx + ": wrong column count");
    TrajectoryPoint pt;
    pt.iteration = detail::to_u64(cells[0], ctx);
    pt.cum_energy_j = detail::to_double(cells[1], ctx);
    pt.cum_evals = detail::to_u64(cells[2], ctx);
    pt.best_fitness = detail::to_double(cells[3], ctx);
    const auto it = std::find(rec.operators.begin(), rec.operators.end(), cells[4]);
    if (it == rec.operators.end()) throw HarnessIoError(ctx + ": unknown operator " + cells[4]);
    pt.op = static_cast<std::size_t>(it - rec.operators.begin());
    ++counts[pt.op];
    for (std::size_t o = 0; o < rec.operators.size(); ++o) {
      OperatorStats s;
      s.mu_df = detail::to_double(cells[5 + 4 * o], ctx);
      s.var_df = detail::to_double(cells[6 + 4 * o], ctx);
      s.mu_ln_e = detail::to_double(cells[7 + 4 * o], ctx);
      s.var_ln_e = detail::to_double(cells[8 + 4 * o], ctx);
      s.n_samples = counts[o];
      pt.stats.push_back(s);
    }
    rec.trajectory.push_back(std::move(pt));
  }
  if (!rec.trajectory.empty()) {
    rec.final_fitness = rec.trajectory.back().best_fitness;
    rec.total_energy_j = rec.trajectory.back().cum_energy_j;
    rec.total_evals = rec.trajectory.back().cum_evals;
  }
  return rec;
}

// ---------------------------------------------------------------- experiments

struct ExperimentResult {
  ExperimentConfig config;
  std::string hash;
  std::vector<RunRecord> records;
  std::vector<std::string> files;  // trial CSVs, relative to out_dir
  std::string manifest_file;
};

inline std::string trial_file_name(const std::string& hash, std::size_t trial) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_trial%04zu.csv", trial);
  return hash + buf;
}

inline std::string manifest_file_name(const std::string& hash) { return hash + "_manifest.json"; }

inline nlohmann::json manifest_json(const ExperimentConfig& config, const std::string& hash,
                                    const std::vector<RunRecord>& records, const std::vector<std::string>& files) {
  using nlohmann::json;
  json j;
  j["config"] = config_to_json(config);
  j["config_hash"] = hash;
  j["label"] = config.label();
  j["csv_header"] = trial_csv_header(records.empty() ? std::vector<std::string>{} : records.front().operators);
  j["stdev"] = "sample (n-1)";
  json trials = json::array();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    json t = {{"file", files.at(i)},
              {"config_hash", hash},
              {"trial", r.trial_index},
              {"seed", r.trial_seed},
              {"initial_fitness", r.initial_fitness},
              {"final_fitness", r.final_fitness},
              {"total_energy_j", r.total_energy_j},
              {"total_evals", r.total_evals},
              {"best_solution", r.best_solution.to_string()}};
    t["feasible"] = r.feasible ? json(*r.feasible) : json(nullptr);
    trials.push_back(std::move(t));
  }
  j["trials"] = std::move(trials);
  return j;
}

inline void write_manifest(const ExperimentConfig& config, const std::string& hash,
                           const std::vector<RunRecord>& records, const std::vector<std::string>& files,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw HarnessIoError("cannot open " + path.string() + " for writing");
  out << manifest_json(config, hash, records, files).dump(1) << '\n';
  if (!out) throw HarnessIoError("write failed: " + path.string());
}

// Runs every trial in memory. Simulated-meter trials run on a worker pool;
// RAPL trials run sequentially because the counters are process-global.
inline std::vector<RunRecord> run_trials(const ExperimentConfig& config) {
  validate(config);
  const Problem problem = build_problem(config.problem);
  const RunSpec spec = config.run_spec();
  const std::string hash = config_hash(config);
  std::vector<RunRecord> records(config.trials);

  auto run_one = [&](std::size_t t) {
    auto meter = make_meter(config.meter);
    RunRecord r = run_solver(problem, spec, *meter, trial_seed(config.master_seed, t));
    r.config_hash = hash;
    r.trial_index = t;
    records[t] = std::move(r);
  };

  std::size_t workers = config.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : config.threads;
  if (config.meter.kind == MeterKind::rapl) workers = 1;
  workers = std::min(workers, config.trials);

  if (workers <= 1) {
    for (std::size_t t = 0; t < config.trials; ++t) run_one(t);
    return records;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t t = next++; t < config.trials; t = next++) {
        try {
          run_one(t);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return records;
}

inline ExperimentResult run_experiment(const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  ExperimentResult res;
  res.config = config;
  res.hash = config_hash(config);

  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec || !fs::is_directory(config.out_dir))
    throw HarnessIoError("cannot create output directory " + config.out_dir.string());

  res.records = run_trials(config);
  for (const auto& r : res.records) {
    res.files.push_back(trial_file_name(res.hash, r.trial_index));
    write_trial_csv(r, config.out_dir / res.files.back());
  }
  res.manifest_file = manifest_file_name(res.hash);
  write_manifest(config, res.hash, res.records, res.files, config.out_dir / res.manifest_file);
  return res;
}

// ---------------------------------------------------------------- operator profiling

struct OperatorProfile {
  std::string op;
  std::vector<double> joules;
};

// Applies each variant of the algorithm on its own for n_samples steps and
// records the energy of every step.
inline std::vector<OperatorProfile> profile_operators(const ExperimentConfig& config, std::size_t n_samples) {
  validate(config);
  require(n_samples >= 1, "profile_operators: n_samples must be >= 1");
  const Problem problem = build_problem(config.problem);
  const auto variants = variants_of(config.algorithm);
  std::vector<OperatorProfile> out;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const Rng trial(trial_seed(config.master_seed, v));
    Rng search = trial.split(kSearchStream);
    Rng meter_rng = trial.split(kMeterStream);
    auto meter = make_meter(config.meter);
    detail::SolverBox<Problem> solver(config.algorithm, problem, config.params, search);
    OperatorProfile prof;
    prof.op = variants[v].id;
    prof.joules.reserve(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i)
      prof.joules.push_back(solver.step(v, problem, config.params, *meter, search, meter_rng).energy.joules);
    out.push_back(std::move(prof));
  }
  return out;
}

inline void write_profile_csv(const std::vector<OperatorProfile>& profiles, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw HarnessIoError("cannot open " + path.string() + " for writing");
  out << "operator,sample_index,joules\n";
  for (const auto& p : profiles)
    for (std::size_t i = 0; i < p.joules.size(); ++i) out << p.op << ',' << i << ',' << format_double(p.joules[i]) << '\n';
  if (!out) throw HarnessIoError("write failed: " + path.string());
}

// ---------------------------------------------------------------- loading results

struct LoadedExperiment {
  nlohmann::json manifest;
  ExperimentConfig config;
  std::string hash;
  std::string label;
  std::vector<RunRecord> records;
};

inline LoadedExperiment load_experiment(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw HarnessIoError("cannot open " + manifest_path.string());
  LoadedExperiment e;
  try {
    in >> e.manifest;
  } catch (const nlohmann::json::exception& ex) {
    throw HarnessIoError(manifest_path.string() + ": " + ex.what());
  }
  e.config = config_from_json(e.manifest.at("config"));
  e.hash = e.manifest.at("config_hash").get<std::string>();
  e.label = e.manifest.at("label").get<std::string>();
  const auto dir = manifest_path.parent_path();
  for (const auto& t : e.manifest.at("trials")) {
    RunRecord r = read_trial_csv(dir / t.at("file").get<std::string>());
    r.config_hash = e.hash;
    r.algorithm = e.config.algorithm;
    r.trial_index = t.at("trial").get<std::uint64_t>();
    r.trial_seed = t.at("seed").get<std::uint64_t>();
    r.initial_fitness = t.at("initial_fitness").get<double>();
    r.best_solution = Bitstring::from_string(t.at("best_solution").get<std::string>());
    if (!t.at("feasible").is_null()) r.feasible = t.at("feasible").get<bool>();
    e.records.push_back(std::move(r));
  }
  return e;
}

// Every *_manifest.json in dir, ordered by file name.
inline std::vector<LoadedExperiment> load_directory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw HarnessIoError("not a directory: " + dir.string());
  std::vector<fs::path> manifests;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.size() > 14 && name.ends_with("_manifest.json")) manifests.push_back(e.path());
  }
  std::sort(manifests.begin(), manifests.end());
  std::vector<LoadedExperiment> out;
  for (const auto& m : manifests) out.push_back(load_experiment(m));
  return out;
}

}  // namespace eaware
