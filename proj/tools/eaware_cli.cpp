#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "eaware/analysis.hpp"
#include "eaware/harness.hpp"

namespace fs = std::filesystem;
using namespace eaware;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunArgs {
  std::string problem;
  std::string algorithm;
  std::string mode;
  std::optional<double> budget_joules;
  std::optional<std::uint64_t> eval_budget;
  std::optional<std::size_t> trials;
  std::optional<std::uint64_t> seed;
  std::string meter;
  std::optional<double> alpha;
  std::string config;
  std::string out;
  std::string rapl_root;
  std::string instance;
  std::optional<std::size_t> n;
  std::optional<std::size_t> k;
  std::optional<std::size_t> m;
  std::optional<std::uint64_t> instance_seed;
  std::optional<std::size_t> threads;
  std::optional<double> noise;
};

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw HarnessIoError("cannot open config file " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw HarnessIoError(path + ": " + e.what());
  }
}

// Config file first, then flags on top. Budgets fall back to the per-problem
// default only when neither source names a stop condition.
ExperimentConfig build_config(const RunArgs& a) {
  if (a.budget_joules && a.eval_budget) throw UsageError("--budget-joules and --eval-budget are mutually exclusive");
  nlohmann::json file = a.config.empty() ? nlohmann::json::object() : read_json_file(a.config);

  nlohmann::json flags = nlohmann::json::object();
  if (!a.problem.empty()) flags["problem"]["kind"] = a.problem;
  if (a.n) flags["problem"]["n"] = *a.n;
  if (a.k) flags["problem"]["k"] = *a.k;
  if (a.m) flags["problem"]["m"] = *a.m;
  if (a.instance_seed) flags["problem"]["instance_seed"] = *a.instance_seed;
  if (!a.instance.empty()) flags["problem"]["instance_file"] = a.instance;
  if (!a.algorithm.empty()) flags["algorithm"] = a.algorithm;
  if (a.budget_joules) flags["stop"]["energy_budget_j"] = *a.budget_joules;
  if (a.eval_budget) flags["stop"]["eval_budget"] = *a.eval_budget;
  if (a.trials) flags["trials"] = *a.trials;
  if (a.seed) flags["master_seed"] = *a.seed;
  if (!a.meter.empty()) flags["meter"]["kind"] = a.meter;
  if (a.noise) flags["meter"]["noise_sigma"] = *a.noise;
  if (!a.rapl_root.empty()) flags["meter"]["rapl_root"] = a.rapl_root;
  if (a.alpha) flags["alpha"] = *a.alpha;
  if (!a.out.empty()) flags["out_dir"] = a.out;
  if (a.threads) flags["threads"] = *a.threads;

  // Mode is parsed last because its variant names depend on the final algorithm.
  std::string mode = file.value("mode", std::string("eos"));
  if (!a.mode.empty()) mode = a.mode;
  file.erase("mode");

  ExperimentConfig c;
  c = config_from_json(file, c);
  c = config_from_json(flags, c);
  const bool stop_given = file.contains("stop") || flags.contains("stop");
  if (!stop_given) c.stop = StopCondition::energy_budget(default_energy_budget(c.problem.kind));
  c.mode = parse_mode(c.algorithm, mode);
  validate(c);
  return c;
}

int run_command(const RunArgs& a) {
  const ExperimentConfig c = build_config(a);
  const auto res = run_experiment(c);
  std::printf("%s: %zu trials, hash %s, manifest %s\n", c.label().c_str(), res.records.size(), res.hash.c_str(),
              (c.out_dir / res.manifest_file).string().c_str());
  return kOk;
}

int profile_command(const RunArgs& a, std::size_t samples) {
  const ExperimentConfig c = build_config(a);
  const auto prof = profile_operators(c, samples);
  std::error_code ec;
  fs::create_directories(c.out_dir, ec);
  const auto path = c.out_dir / "profile.csv";
  write_profile_csv(prof, path);
  for (const auto& p : prof) {
    const auto s = mean_std(p.joules);
    std::printf("%s: mean %.6g J, stdev %.6g J over %zu samples\n", p.op.c_str(), s.mean, s.stdev, p.joules.size());
  }
  std::printf("wrote %s\n", path.string().c_str());
  return kOk;
}

int generate_command(const std::string& problem, std::size_t n, std::size_t k, std::size_t m, std::uint64_t seed,
                     const std::string& out) {
  const ProblemKind kind = problem_kind_from_string(problem);
  Instance inst;
  switch (kind) {
    case ProblemKind::kp: inst = kp_generate(n, seed); break;
    case ProblemKind::nk: inst = nk_generate(n, k, seed); break;
    case ProblemKind::ecc: inst = ecc_make(m, n); break;
  }
  instance_save(inst, out);
  std::printf("wrote %s\n", out.c_str());
  return kOk;
}

int analyze_command(const std::string& in, const std::string& what, const std::string& out, std::size_t bins) {
  const auto exps = load_directory(in);
  if (exps.empty()) throw HarnessIoError("no manifests found in " + in);
  const fs::path dir = out.empty() ? fs::path(in) : fs::path(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  fs::path path;
  if (what == "summary") {
    std::vector<MethodRuns> methods;
    for (const auto& e : exps) methods.push_back(to_method_runs(e));
    if (methods.size() < 2) throw UsageError("summary needs at least two experiments in " + in);
    path = dir / "summary.csv";
    write_summary_csv(summarize(methods), path);
  } else if (what == "fits") {
    path = dir / "fits.csv";
    write_fits_csv(exps, path);
  } else if (what == "ratios") {
    path = dir / "ratios.csv";
    write_ratios_csv(exps, bins, path);
  } else {
    path = dir / "median.csv";
    write_median_csv(exps, path);
  }
  std::printf("wrote %s\n", path.string().c_str());
  return kOk;
}

void add_experiment_flags(CLI::App* cmd, RunArgs& a) {
  cmd->add_option("--problem", a.problem, "Benchmark problem")->check(CLI::IsMember({"kp", "nk", "ecc"}));
  cmd->add_option("--algorithm", a.algorithm, "Search algorithm")->check(CLI::IsMember({"ssga", "pso", "ils"}));
  cmd->add_option("--n", a.n, "Problem size (KP/NK variables, ECC codeword length)");
  cmd->add_option("--k", a.k, "NK epistasis K");
  cmd->add_option("--m", a.m, "ECC codeword count M");
  cmd->add_option("--instance-seed", a.instance_seed, "Seed for instance generation");
  cmd->add_option("--instance", a.instance, "Load the instance from a JSON file instead of generating it");
  cmd->add_option("--seed", a.seed, "Master seed for trial streams");
  cmd->add_option("--meter", a.meter, "Energy meter")->check(CLI::IsMember({"rapl", "simulated"}));
  cmd->add_option("--noise", a.noise, "Simulated meter log-space noise sigma");
  cmd->add_option("--rapl-root", a.rapl_root, "Powercap sysfs root (default /sys/class/powercap)");
  cmd->add_option("--config", a.config, "JSON config file; flags override its values");
  cmd->add_option("--out", a.out, "Output directory");
  cmd->add_option("--threads", a.threads, "Worker threads for simulated trials (0 = all cores)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy-aware operator scheduling for metaheuristics", "eaware"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Run repeated trials of one method and write trial CSVs and a manifest");
  add_experiment_flags(run, run_args);
  run->add_option("--mode", run_args.mode, "eos or static:<variant> (replace1, replace5, full, light, ils1, ils5)");
  run->add_option("--budget-joules", run_args.budget_joules, "Energy budget in joules")->check(CLI::PositiveNumber);
  run->add_option("--eval-budget", run_args.eval_budget, "Fitness evaluation budget")->check(CLI::PositiveNumber);
  run->add_option("--trials", run_args.trials, "Number of independent trials")->check(CLI::PositiveNumber);
  run->add_option("--alpha", run_args.alpha, "EWMA smoothing factor in (0,1)");

  RunArgs prof_args;
  std::size_t samples = 1000;
  auto* prof = app.add_subcommand("profile", "Measure per-step energy of each operator variant; writes profile.csv");
  add_experiment_flags(prof, prof_args);
  prof->add_option("--samples", samples, "Steps per operator variant")->check(CLI::PositiveNumber);

  std::string gen_problem, gen_out;
  std::size_t gen_n = 100, gen_k = 6, gen_m = 24;
  std::uint64_t gen_seed = 1;
  auto* gen = app.add_subcommand("generate-instance", "Generate a problem instance and save it as JSON");
  gen->add_option("--problem", gen_problem, "Benchmark problem")
      ->required()
      ->check(CLI::IsMember({"kp", "nk", "ecc"}));
  gen->add_option("--n", gen_n, "Problem size (KP/NK variables, ECC codeword length)")->capture_default_str();
  gen->add_option("--k", gen_k, "NK epistasis K")->capture_default_str();
  gen->add_option("--m", gen_m, "ECC codeword count M")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Instance seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output JSON file")->required();

  std::string an_in, an_what = "summary", an_out;
  std::size_t an_bins = 20;
  auto* an = app.add_subcommand("analyze", "Summaries, curve fits and selection ratios from run outputs");
  an->add_option("--in", an_in, "Directory holding manifests and trial CSVs")->required();
  an->add_option("--what", an_what, "Which table to write")->capture_default_str()
      ->check(CLI::IsMember({"summary", "fits", "ratios", "median"}));
  an->add_option("--out", an_out, "Output directory (default: --in)");
  an->add_option("--bins", an_bins, "Budget bins for ratios")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (*run) return run_command(run_args);
    if (*prof) return profile_command(prof_args, samples);
    if (*gen) return generate_command(gen_problem, gen_n, gen_k, gen_m, gen_seed, gen_out);
    if (*an) return analyze_command(an_in, an_what, an_out, an_bins);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
