#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "eaware/core.hpp"
#include "eaware/energy.hpp"

namespace eaware {

// Anything the solvers can optimise: a maximised fitness over fixed-length bitstrings.
template <class P>
concept BinaryProblem = requires(const P& p, const Bitstring& x) {
  { p.dimension() } -> std::convertible_to<std::size_t>;
  { p.evaluate(x) } -> std::convertible_to<double>;
  { p.size() } -> std::same_as<ProblemSize>;
};

// ---------------------------------------------------------------- knapsack

struct KpInstance {
  std::uint64_t seed = 0;
  std::vector<std::int64_t> profits;
  std::vector<std::int64_t> weights;
  std::int64_t capacity = 0;
  double penalty_k = 0.0;
  double penalty_rho = 0.0;

  std::size_t n() const noexcept { return profits.size(); }
  std::size_t dimension() const noexcept { return profits.size(); }
  ProblemSize size() const noexcept { return {ProblemKind::kp, n(), 0, 0}; }

  std::int64_t total_weight(const Bitstring& x) const {
    require(x.size() == n(), "kp: length mismatch");
    std::int64_t w = 0;
    for (std::size_t i = 0; i < n(); ++i)
      if (x[i]) w += weights[i];
    return w;
  }
  std::int64_t total_profit(const Bitstring& x) const {
    require(x.size() == n(), "kp: length mismatch");
    std::int64_t p = 0;
    for (std::size_t i = 0; i < n(); ++i)
      if (x[i]) p += profits[i];
    return p;
  }
  bool feasible(const Bitstring& x) const { return total_weight(x) <= capacity; }

  // Penalised profit: sum p_i x_i - K * rho * max(0, sum w_i x_i - C).
  double evaluate(const Bitstring& x) const {
    require(x.size() == n(), "kp_fitness: length mismatch");
    std::int64_t p = 0;
    std::int64_t w = 0;
    for (std::size_t i = 0; i < n(); ++i) {
      if (x[i]) {
        p += profits[i];
        w += weights[i];
      }
    }
    const std::int64_t over = std::max<std::int64_t>(0, w - capacity);
    return static_cast<double>(p) - penalty_k * penalty_rho * static_cast<double>(over);
  }

  // Derives capacity and the penalty constants from profits/weights.
  void derive_constants() {
    require(!profits.empty() && profits.size() == weights.size(), "kp: profits/weights size mismatch");
    capacity = *std::max_element(weights.begin(), weights.end());
    penalty_k = static_cast<double>(n());
    penalty_rho = 0.0;
    for (std::size_t i = 0; i < n(); ++i)
      penalty_rho = std::max(penalty_rho, static_cast<double>(profits[i]) / static_cast<double>(weights[i]));
  }
};

inline KpInstance kp_generate(std::size_t n, std::uint64_t seed) {
  require(n >= 1, "kp_generate: n must be >= 1");
  Rng rng(seed);
  KpInstance inst;
  inst.seed = seed;
  inst.profits.resize(n);
  inst.weights.resize(n);
  std::uniform_int_distribution<std::int64_t> d(1, 1000);
  for (std::size_t i = 0; i < n; ++i) {
    inst.profits[i] = d(rng);
    inst.weights[i] = d(rng);
  }
  inst.derive_constants();
  return inst;
}

inline double kp_fitness(const KpInstance& inst, const Bitstring& x) { return inst.evaluate(x); }

// ---------------------------------------------------------------- NK landscape

// Table index packing: x_i is the most significant bit, then the neighbours
// in stored order.
struct NkInstance {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::vector<std::size_t>> neighborhoods;
  std::vector<std::vector<double>> tables;

  std::size_t dimension() const noexcept { return n; }
  ProblemSize size() const noexcept { return {ProblemKind::nk, n, k, 0}; }

  std::size_t table_index(std::size_t i, const Bitstring& x) const {
    std::size_t idx = x[i] ? 1 : 0;
    for (std::size_t j : neighborhoods[i]) idx = (idx << 1) | (x[j] ? 1u : 0u);
    return idx;
  }

  double evaluate(const Bitstring& x) const {
    require(x.size() == n, "nk_fitness: length mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += tables[i][table_index(i, x)];
    return sum / static_cast<double>(n);
  }
};

inline NkInstance nk_generate(std::size_t n, std::size_t k, std::uint64_t seed) {
  require(n >= 1, "nk_generate: n must be >= 1");
  require(k < n, "nk_generate: K must be < n");
  require(k < 30, "nk_generate: K too large for table storage");
  Rng rng(seed);
  NkInstance inst;
  inst.seed = seed;
  inst.n = n;
  inst.k = k;
  inst.neighborhoods.resize(n);
  inst.tables.resize(n);
  const std::size_t entries = std::size_t{1} << (k + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : sample_without_replacement(n - 1, k, rng)) inst.neighborhoods[i].push_back(j >= i ? j + 1 : j);
    inst.tables[i].resize(entries);
    for (auto& v : inst.tables[i]) v = rng.uniform();
  }
  return inst;
}

inline double nk_fitness(const NkInstance& inst, const Bitstring& x) { return inst.evaluate(x); }

// ---------------------------------------------------------------- error-correcting codes

// Genotype is M codewords of length n, row-major.
struct EccInstance {
  std::uint64_t seed = 0;
  std::size_t m = 0;
  std::size_t n = 0;

  std::size_t dimension() const noexcept { return m * n; }
  ProblemSize size() const noexcept { return {ProblemKind::ecc, n, 0, m}; }

  std::size_t distance(const Bitstring& x, std::size_t a, std::size_t b) const {
    std::size_t d = 0;
    const std::size_t ra = a * n;
    const std::size_t rb = b * n;
    for (std::size_t t = 0; t < n; ++t) d += (x[ra + t] != x[rb + t]) ? 1 : 0;
    return d;
  }

  // 1 / sum_{i != j} d_H(X_i, X_j)^-2 over ordered pairs; 0 if two codewords coincide.
  double evaluate(const Bitstring& x) const {
    require(x.size() == m * n, "ecc_fitness: length mismatch");
    double inv = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t b = 0; b < m; ++b) {
        if (a == b) continue;
        const std::size_t d = distance(x, a, b);
        if (d == 0) return 0.0;
        inv += 1.0 / static_cast<double>(d * d);
      }
    }
    if (inv == 0.0) return 0.0;  // M == 1: no pairs
    return 1.0 / inv;
  }
};

inline EccInstance ecc_make(std::size_t m, std::size_t n) {
  require(m >= 1 && n >= 1, "ecc: M and n must be >= 1");
  return EccInstance{0, m, n};
}

inline double ecc_fitness(const EccInstance& inst, const Bitstring& x) { return inst.evaluate(x); }

// ---------------------------------------------------------------- type-erased problem

using Instance = std::variant<KpInstance, NkInstance, EccInstance>;

class Problem {
public:
  Problem(Instance inst) : inst_(std::move(inst)) {}  // NOLINT(google-explicit-constructor)

  std::size_t dimension() const {
    return std::visit([](const auto& p) { return p.dimension(); }, inst_);
  }
  double evaluate(const Bitstring& x) const {
    return std::visit([&](const auto& p) { return p.evaluate(x); }, inst_);
  }
  ProblemSize size() const {
    return std::visit([](const auto& p) { return p.size(); }, inst_);
  }
  ProblemKind kind() const { return size().kind; }
  const Instance& instance() const noexcept { return inst_; }
  const KpInstance* as_kp() const noexcept { return std::get_if<KpInstance>(&inst_); }

private:
  Instance inst_;
};

static_assert(BinaryProblem<KpInstance>);
static_assert(BinaryProblem<NkInstance>);
static_assert(BinaryProblem<EccInstance>);
static_assert(BinaryProblem<Problem>);

inline const char* to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::kp: return "kp";
    case ProblemKind::nk: return "nk";
    case ProblemKind::ecc: return "ecc";
  }
  return "?";
}

inline ProblemKind problem_kind_from_string(const std::string& s) {
  if (s == "kp") return ProblemKind::kp;
  if (s == "nk") return ProblemKind::nk;
  if (s == "ecc") return ProblemKind::ecc;
  throw ContractViolation("unknown problem kind '" + s + "'");
}

// ---------------------------------------------------------------- JSON instance files

class InstanceParseError : public std::runtime_error {
public:
  explicit InstanceParseError(const std::string& what) : std::runtime_error(what) {}
};

inline nlohmann::json instance_to_json(const Instance& inst) {
  using nlohmann::json;
  return std::visit(
      [](const auto& p) -> json {
        using T = std::decay_t<decltype(p)>;
        json j;
        j["seed"] = p.seed;
        if constexpr (std::is_same_v<T, KpInstance>) {
          j["kind"] = "kp";
          j["params"] = {{"n", p.n()}};
          j["data"] = {{"profits", p.profits},
                       {"weights", p.weights},
                       {"capacity", p.capacity},
                       {"penalty_k", p.penalty_k},
                       {"penalty_rho", p.penalty_rho}};
        } else if constexpr (std::is_same_v<T, NkInstance>) {
          j["kind"] = "nk";
          j["params"] = {{"n", p.n}, {"k", p.k}};
          j["data"] = {{"neighborhoods", p.neighborhoods}, {"tables", p.tables}};
        } else {
          j["kind"] = "ecc";
          j["params"] = {{"m", p.m}, {"n", p.n}};
          j["data"] = json::object();
        }
        return j;
      },
      inst);
}

namespace detail {

inline const nlohmann::json& field(const nlohmann::json& j, const char* name, const std::string& where) {
  if (!j.is_object() || !j.contains(name)) throw InstanceParseError(where + ": missing field '" + name + "'");
  return j.at(name);
}

template <class T>
T get_as(const nlohmann::json& j, const char* name, const std::string& where) {
  const auto& v = field(j, name, where);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw InstanceParseError(where + "." + name + ": " + e.what());
  }
}

}  // namespace detail

inline Instance instance_from_json(const nlohmann::json& j) {
  using detail::field;
  using detail::get_as;
  const auto kind = get_as<std::string>(j, "kind", "instance");
  const auto seed = get_as<std::uint64_t>(j, "seed", "instance");
  const auto& params = field(j, "params", "instance");
  const auto& data = field(j, "data", "instance");

  if (kind == "kp") {
    KpInstance p;
    p.seed = seed;
    const auto n = get_as<std::size_t>(params, "n", "params");
    p.profits = get_as<std::vector<std::int64_t>>(data, "profits", "data");
    p.weights = get_as<std::vector<std::int64_t>>(data, "weights", "data");
    p.capacity = get_as<std::int64_t>(data, "capacity", "data");
    p.penalty_k = get_as<double>(data, "penalty_k", "data");
    p.penalty_rho = get_as<double>(data, "penalty_rho", "data");
    if (n == 0 || p.profits.size() != n) throw InstanceParseError("data.profits: expected " + std::to_string(n) + " entries");
    if (p.weights.size() != n) throw InstanceParseError("data.weights: expected " + std::to_string(n) + " entries");
    for (std::size_t i = 0; i < n; ++i) {
      if (p.profits[i] < 1 || p.profits[i] > 1000) throw InstanceParseError("data.profits[" + std::to_string(i) + "]: outside [1,1000]");
      if (p.weights[i] < 1 || p.weights[i] > 1000) throw InstanceParseError("data.weights[" + std::to_string(i) + "]: outside [1,1000]");
    }
    KpInstance expect = p;
    expect.derive_constants();
    if (p.capacity != expect.capacity) throw InstanceParseError("data.capacity: must equal the maximum item weight");
    if (p.penalty_k != expect.penalty_k) throw InstanceParseError("data.penalty_k: must equal n");
    if (p.penalty_rho != expect.penalty_rho) throw InstanceParseError("data.penalty_rho: must equal max profit/weight ratio");
    return p;
  }
  if (kind == "nk") {
    NkInstance p;
    p.seed = seed;
    p.n = get_as<std::size_t>(params, "n", "params");
    p.k = get_as<std::size_t>(params, "k", "params");
    p.neighborhoods = get_as<std::vector<std::vector<std::size_t>>>(data, "neighborhoods", "data");
    p.tables = get_as<std::vector<std::vector<double>>>(data, "tables", "data");
    if (p.n == 0 || p.k >= p.n) throw InstanceParseError("params.k: must satisfy 0 <= k < n");
    if (p.neighborhoods.size() != p.n) throw InstanceParseError("data.neighborhoods: expected n entries");
    if (p.tables.size() != p.n) throw InstanceParseError("data.tables: expected n entries");
    const std::size_t entries = std::size_t{1} << (p.k + 1);
    for (std::size_t i = 0; i < p.n; ++i) {
      const auto& nb = p.neighborhoods[i];
      const std::string at = "[" + std::to_string(i) + "]";
      if (nb.size() != p.k) throw InstanceParseError("data.neighborhoods" + at + ": expected k members");
      for (std::size_t a = 0; a < nb.size(); ++a) {
        if (nb[a] >= p.n || nb[a] == i) throw InstanceParseError("data.neighborhoods" + at + ": invalid index");
        for (std::size_t b = 0; b < a; ++b)
          if (nb[a] == nb[b]) throw InstanceParseError("data.neighborhoods" + at + ": duplicate index");
      }
      if (p.tables[i].size() != entries) throw InstanceParseError("data.tables" + at + ": expected 2^(k+1) entries");
      for (double v : p.tables[i])
        if (!(v >= 0.0 && v < 1.0)) throw InstanceParseError("data.tables" + at + ": entry outside [0,1)");
    }
    return p;
  }
  if (kind == "ecc") {
    EccInstance p;
    p.seed = seed;
    p.m = get_as<std::size_t>(params, "m", "params");
    p.n = get_as<std::size_t>(params, "n", "params");
    if (p.m == 0) throw InstanceParseError("params.m: must be >= 1");
    if (p.n == 0) throw InstanceParseError("params.n: must be >= 1");
    return p;
  }
  throw InstanceParseError("instance.kind: unknown kind '" + kind + "'");
}

inline void instance_save(const Instance& inst, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << instance_to_json(inst).dump(1) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline Instance instance_load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InstanceParseError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InstanceParseError(path.string() + ": " + e.what());
  }
  return instance_from_json(j);
}

}  // namespace eaware
