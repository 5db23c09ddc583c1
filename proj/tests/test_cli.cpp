#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <sys/wait.h>

#include "eaware/harness.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result cli(const std::string& args) {
  const std::string cmd = std::string(EAWARE_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("eaware_cli_" + name);
  fs::remove_all(d);
  return d;
}

std::map<std::string, std::string> dir_contents(const fs::path& d) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(d)) out[e.path().filename().string()] = slurp(e.path());
  return out;
}

std::size_t count_suffix(const fs::path& d, const std::string& suffix) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(d)) n += e.path().filename().string().ends_with(suffix) ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("help text matches the golden files") {
  const fs::path golden(EAWARE_GOLDEN_DIR);
  CHECK(cli("--help").out == slurp(golden / "help_main.txt"));
  for (const std::string c : {"run", "profile", "generate-instance", "analyze"}) {
    INFO(c);
    const auto r = cli(c + " --help");
    CHECK(r.code == 0);
    CHECK(r.out == slurp(golden / ("help_" + c + ".txt")));
  }
}

TEST_CASE("run help lists every flag") {
  const auto out = cli("run --help").out;
  for (const char* flag : {"--problem", "--algorithm", "--mode", "--budget-joules", "--eval-budget", "--trials",
                           "--seed", "--meter", "--alpha", "--config", "--out", "--rapl-root"})
    CHECK(out.find(flag) != std::string::npos);
  const auto an = cli("analyze --help").out;
  for (const char* flag : {"--in", "--what"}) CHECK(an.find(flag) != std::string::npos);
}

TEST_CASE("run writes trial files and a manifest") {
  const auto d = fresh_dir("run");
  const auto r = cli("run --problem nk --algorithm pso --mode eos --eval-budget 10000 --trials 5 --seed 7 "
                     "--meter simulated --out " + d.string());
  CHECK(r.code == 0);
  CHECK(count_suffix(d, ".csv") == 5);
  CHECK(count_suffix(d, "_manifest.json") == 1);
  fs::remove_all(d);
}

TEST_CASE("usage errors exit with 1") {
  auto r = cli("run --budget-joules 100 --eval-budget 100");
  CHECK(r.code == 1);
  CHECK(r.out.find("mutually exclusive") != std::string::npos);
  CHECK(cli("run --problem tsp").code == 1);
  CHECK(cli("run --algorithm ssga --mode static:full").code == 1);
  CHECK(cli("run --trials 0").code == 1);
  CHECK(cli("frobnicate").code == 1);
  CHECK(cli("").code == 1);
  CHECK(cli("analyze").code == 1);
}

TEST_CASE("runtime errors exit with 2") {
  const auto d = fresh_dir("rt");
  auto r = cli("run --meter rapl --rapl-root " + (d / "nope").string() + " --trials 1 --eval-budget 10 --out " +
               d.string());
  CHECK(r.code == 2);
  CHECK(r.out.find("powercap") != std::string::npos);
  CHECK(cli("analyze --in " + (d / "missing").string()).code == 2);
  CHECK(cli("run --config " + (d / "none.json").string()).code == 2);
  fs::remove_all(d);
}

TEST_CASE("rapl meter against a fake powercap tree") {
  const auto root = fresh_dir("powercap");
  fs::create_directories(root / "intel-rapl:0" / "intel-rapl:0:0");
  std::ofstream(root / "intel-rapl:0" / "name") << "package-0\n";
  std::ofstream(root / "intel-rapl:0" / "energy_uj") << "5000\n";
  std::ofstream(root / "intel-rapl:0" / "max_energy_range_uj") << "262143328850\n";
  std::ofstream(root / "intel-rapl:0" / "intel-rapl:0:0" / "name") << "dram\n";
  std::ofstream(root / "intel-rapl:0" / "intel-rapl:0:0" / "energy_uj") << "7000\n";
  std::ofstream(root / "intel-rapl:0" / "intel-rapl:0:0" / "max_energy_range_uj") << "65532610987\n";
  const auto d = fresh_dir("rapl_out");
  const auto r = cli("run --problem kp --n 20 --algorithm ils --mode static:ils1 --eval-budget 500 --trials 2 "
                     "--meter rapl --rapl-root " + root.string() + " --out " + d.string());
  CHECK(r.code == 0);
  CHECK(count_suffix(d, ".csv") == 2);
  const auto p = cli("profile --problem kp --n 20 --algorithm ssga --samples 5 --meter rapl --rapl-root " +
                     root.string() + " --out " + d.string());
  CHECK(p.code == 0);
  CHECK(fs::exists(d / "profile.csv"));
  fs::remove_all(root);
  fs::remove_all(d);
}

TEST_CASE("flag order does not matter and flags override the config file") {
  const auto a = fresh_dir("order_a"), b = fresh_dir("order_b"), c = fresh_dir("order_c");
  CHECK(cli("run --problem kp --n 30 --algorithm ssga --eval-budget 300 --trials 2 --seed 3 --out " + a.string())
            .code == 0);
  CHECK(cli("run --out " + b.string() + " --seed 3 --trials 2 --eval-budget 300 --algorithm ssga --n 30 --problem kp")
            .code == 0);
  CHECK(dir_contents(a) == dir_contents(b));

  const auto cfg = c / "cfg.json";
  fs::create_directories(c);
  std::ofstream(cfg) << R"({"problem": {"kind": "kp", "n": 30}, "algorithm": "ssga", "trials": 9,
                           "master_seed": 100, "stop": {"eval_budget": 300}})";
  const auto out = c / "out";
  CHECK(cli("run --config " + cfg.string() + " --trials 2 --seed 3 --out " + out.string()).code == 0);
  CHECK(dir_contents(a) == dir_contents(out));
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(c);
}

TEST_CASE("default stop condition is the per-problem energy budget") {
  const auto d = fresh_dir("defaults");
  CHECK(cli("run --problem ecc --n 6 --m 4 --algorithm ils --trials 1 --out " + d.string()).code == 0);
  for (const auto& e : fs::directory_iterator(d)) {
    if (!e.path().filename().string().ends_with("_manifest.json")) continue;
    const auto j = nlohmann::json::parse(slurp(e.path()));
    CHECK(j["config"]["stop"]["energy_budget_j"] == 10000.0);
    CHECK(j["config"]["mode"] == "eos");
  }
  fs::remove_all(d);
}

TEST_CASE("generate-instance and analyze") {
  const auto d = fresh_dir("gen");
  fs::create_directories(d);
  CHECK(cli("generate-instance --problem nk --n 20 --k 3 --seed 5 --out " + (d / "nk.json").string()).code == 0);
  const auto inst = std::get<eaware::NkInstance>(eaware::instance_load(d / "nk.json"));
  CHECK(inst.n == 20);
  CHECK(inst.k == 3);

  const auto runs = d / "runs";
  for (const char* mode : {"eos", "static:ils1", "static:ils5"})
    CHECK(cli(std::string("run --problem nk --instance ") + (d / "nk.json").string() +
              " --algorithm ils --eval-budget 1000 --trials 4 --mode " + mode + " --out " + runs.string())
              .code == 0);
  for (const char* what : {"summary", "fits", "ratios", "median"}) {
    INFO(what);
    CHECK(cli(std::string("analyze --in ") + runs.string() + " --what " + what).code == 0);
    CHECK(fs::exists(runs / (std::string(what) + ".csv")));
  }
  std::ifstream in(runs / "summary.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("method,problem,algorithm,trials,feasible,fitness_mean,fitness_std", 0) == 0);
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 3);
  CHECK(cli("analyze --in " + runs.string() + " --what everything").code == 1);
  fs::remove_all(d);
}
