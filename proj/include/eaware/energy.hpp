#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "eaware/core.hpp"

namespace eaware {

class MeterError : public std::runtime_error {
public:
  explicit MeterError(const std::string& what) : std::runtime_error(what) {}
};

struct EnergySample {
  double joules = 0.0;
};

enum class MeterKind { rapl, simulated };

// Simulated cost model: (fixed_overhead_j + joules_per_work_unit * work) * exp(noise_sigma * z).
// The defaults put a KP (n=100) Replace-1 step near 2.5e-2 J.
struct MeterConfig {
  MeterKind kind = MeterKind::simulated;
  double noise_sigma = 0.1;
  double joules_per_work_unit = 1.5e-4;
  double fixed_overhead_j = 1.0e-2;
  double energy_floor_j = 1.0e-9;
  std::string rapl_root = "/sys/class/powercap";
};

// Work units per fitness evaluation follow the evaluation complexity of each
// problem: KP O(n), NK O(nK), ECC O(M n^2).
enum class ProblemKind { kp, nk, ecc };

struct ProblemSize {
  ProblemKind kind = ProblemKind::kp;
  std::size_t n = 0;  // KP/NK variables, ECC codeword length
  std::size_t k = 0;  // NK epistasis
  std::size_t m = 0;  // ECC codeword count
};

inline double work_units_for(const ProblemSize& p, std::uint64_t n_evaluations) {
  const double evals = static_cast<double>(n_evaluations);
  const double n = static_cast<double>(p.n);
  switch (p.kind) {
    case ProblemKind::kp: return evals * n;
    case ProblemKind::nk: return evals * n * static_cast<double>(p.k);
    case ProblemKind::ecc: return evals * static_cast<double>(p.m) * n * n;
  }
  return 0.0;
}

// RAPL counters wrap at max_energy_range_uj.
constexpr std::uint64_t rapl_counter_delta(std::uint64_t prev_uj, std::uint64_t now_uj,
                                           std::uint64_t max_range_uj) noexcept {
  if (now_uj >= prev_uj) return now_uj - prev_uj;
  return (max_range_uj - prev_uj) + now_uj + 1;
}

struct MeterToken {
  std::uint64_t id = 0;
  std::vector<std::uint64_t> counters_uj;
};

class EnergyMeter {
public:
  virtual ~EnergyMeter() = default;
  virtual MeterKind kind() const noexcept = 0;
  virtual MeterToken begin() = 0;
  // work_units is only consulted by the simulated meter.
  virtual EnergySample end(MeterToken& token, double work_units, Rng& rng) = 0;

protected:
  MeterToken open_token() {
    require(open_id_ == 0, "EnergyMeter::begin: a measurement is already open");
    open_id_ = ++next_id_;
    return MeterToken{open_id_, {}};
  }
  void close_token(MeterToken& token) {
    require(token.id != 0 && token.id == open_id_, "EnergyMeter::end: token is stale or reused");
    open_id_ = 0;
    token.id = 0;
  }

private:
  std::uint64_t next_id_ = 0;
  std::uint64_t open_id_ = 0;
};

class SimulatedMeter final : public EnergyMeter {
public:
  explicit SimulatedMeter(MeterConfig cfg) : cfg_(std::move(cfg)) {
    require(cfg_.noise_sigma >= 0.0, "SimulatedMeter: noise_sigma < 0");
    require(cfg_.joules_per_work_unit > 0.0, "SimulatedMeter: joules_per_work_unit <= 0");
    require(cfg_.fixed_overhead_j >= 0.0, "SimulatedMeter: fixed_overhead_j < 0");
    require(cfg_.energy_floor_j > 0.0, "SimulatedMeter: energy_floor_j <= 0");
  }

  MeterKind kind() const noexcept override { return MeterKind::simulated; }
  MeterToken begin() override { return open_token(); }

  EnergySample end(MeterToken& token, double work_units, Rng& rng) override {
    close_token(token);
    require(work_units >= 0.0 && std::isfinite(work_units), "SimulatedMeter::end: bad work_units");
    double j = cfg_.fixed_overhead_j + cfg_.joules_per_work_unit * work_units;
    if (cfg_.noise_sigma > 0.0) j *= std::exp(cfg_.noise_sigma * rng.normal());
    return EnergySample{std::max(j, cfg_.energy_floor_j)};
  }

  const MeterConfig& config() const noexcept { return cfg_; }

private:
  MeterConfig cfg_;
};

// One powercap zone whose counter contributes to the total.
struct RaplDomain {
  std::string name;
  std::filesystem::path energy_file;
  std::uint64_t max_range_uj = 0;
};

namespace detail {

inline std::string read_trimmed(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw MeterError("cannot read " + p.string());
  std::string s;
  std::getline(in, s);
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) s.pop_back();
  return s;
}

inline std::uint64_t read_uint(const std::filesystem::path& p) {
  const std::string s = read_trimmed(p);
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw MeterError("trailing characters in " + p.string());
    return v;
  } catch (const std::logic_error&) {
    throw MeterError("not a decimal integer in " + p.string() + ": '" + s + "'");
  }
}

inline bool is_zone_name(const std::string& fname, int depth) {
  // intel-rapl:<i> at depth 0, intel-rapl:<i>:<j> at depth 1
  const std::string prefix = "intel-rapl:";
  if (fname.rfind(prefix, 0) != 0) return false;
  int colons = 0;
  for (char c : fname.substr(prefix.size())) {
    if (c == ':') ++colons;
    else if (c < '0' || c > '9') return false;
  }
  return colons == depth;
}

}  // namespace detail

// Enumerates package zones and their DRAM subzones under a powercap root.
inline std::vector<RaplDomain> discover_rapl_domains(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw MeterError("powercap interface not found at " + root.string());

  std::vector<fs::path> packages;
  for (const auto& e : fs::directory_iterator(root, ec))
    if (detail::is_zone_name(e.path().filename().string(), 0)) packages.push_back(e.path());
  std::sort(packages.begin(), packages.end());

  std::vector<RaplDomain> out;
  auto add = [&](const fs::path& zone) {
    RaplDomain d;
    d.name = detail::read_trimmed(zone / "name");
    d.energy_file = zone / "energy_uj";
    d.max_range_uj = detail::read_uint(zone / "max_energy_range_uj");
    (void)detail::read_uint(d.energy_file);  // probe read permission
    out.push_back(std::move(d));
  };
  for (const auto& pkg : packages) {
    add(pkg);
    std::vector<fs::path> subs;
    for (const auto& e : fs::directory_iterator(pkg, ec))
      if (detail::is_zone_name(e.path().filename().string(), 1)) subs.push_back(e.path());
    std::sort(subs.begin(), subs.end());
    for (const auto& s : subs)
      if (detail::read_trimmed(s / "name") == "dram") add(s);
  }
  if (out.empty()) throw MeterError("no RAPL package domains under " + root.string());
  return out;
}

// Package (CPU) plus DRAM energy, summed. Process-global: not attributable
// when several trials run concurrently.
class RaplMeter final : public EnergyMeter {
public:
  explicit RaplMeter(const MeterConfig& cfg)
      : floor_j_(cfg.energy_floor_j), domains_(discover_rapl_domains(cfg.rapl_root)) {
    require(floor_j_ > 0.0, "RaplMeter: energy_floor_j <= 0");
  }

  MeterKind kind() const noexcept override { return MeterKind::rapl; }
  const std::vector<RaplDomain>& domains() const noexcept { return domains_; }

  MeterToken begin() override {
    auto counters = read_all();
    MeterToken t = open_token();
    t.counters_uj = std::move(counters);
    return t;
  }

  EnergySample end(MeterToken& token, double /*work_units*/, Rng& /*rng*/) override {
    close_token(token);
    const auto now = read_all();
    std::uint64_t total_uj = 0;
    for (std::size_t i = 0; i < domains_.size(); ++i)
      total_uj += rapl_counter_delta(token.counters_uj[i], now[i], domains_[i].max_range_uj);
    return EnergySample{std::max(static_cast<double>(total_uj) * 1e-6, floor_j_)};
  }

private:
  std::vector<std::uint64_t> read_all() const {
    std::vector<std::uint64_t> v;
    v.reserve(domains_.size());
    for (const auto& d : domains_) v.push_back(detail::read_uint(d.energy_file));
    return v;
  }

  double floor_j_;
  std::vector<RaplDomain> domains_;
};

inline std::unique_ptr<EnergyMeter> make_meter(const MeterConfig& cfg) {
  if (cfg.kind == MeterKind::rapl) return std::make_unique<RaplMeter>(cfg);
  return std::make_unique<SimulatedMeter>(cfg);
}

}  // namespace eaware
