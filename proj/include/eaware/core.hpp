#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace eaware {

// Raised when a caller breaks a documented precondition.
class ContractViolation : public std::logic_error {
public:
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

inline void require(bool cond, const char* what) {
  if (!cond) throw ContractViolation(what);
}

// Fixed-length binary genotype. Elements are stored as 0/1 bytes.
class Bitstring {
public:
  Bitstring() = default;
  explicit Bitstring(std::size_t length) : bits_(length, 0) {}
  explicit Bitstring(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    for (auto b : bits_) require(b <= 1, "Bitstring: element is not 0 or 1");
  }

  // Parses "0101..." (no separators).
  static Bitstring from_string(const std::string& s) {
    std::vector<std::uint8_t> v;
    v.reserve(s.size());
    for (char c : s) {
      require(c == '0' || c == '1', "Bitstring::from_string: expected only '0'/'1'");
      v.push_back(static_cast<std::uint8_t>(c - '0'));
    }
    return Bitstring(std::move(v));
  }

  std::string to_string() const {
    std::string s(bits_.size(), '0');
    for (std::size_t i = 0; i < bits_.size(); ++i) s[i] = bits_[i] ? '1' : '0';
    return s;
  }

  std::size_t size() const noexcept { return bits_.size(); }
  bool operator[](std::size_t i) const noexcept { return bits_[i] != 0; }
  bool at(std::size_t i) const {
    require(i < bits_.size(), "Bitstring::at: index out of range");
    return bits_[i] != 0;
  }
  void set(std::size_t i, bool v) {
    require(i < bits_.size(), "Bitstring::set: index out of range");
    bits_[i] = v ? 1 : 0;
  }
  void flip(std::size_t i) {
    require(i < bits_.size(), "Bitstring::flip: index out of range");
    bits_[i] ^= 1;
  }
  std::size_t count() const noexcept {
    return static_cast<std::size_t>(std::accumulate(bits_.begin(), bits_.end(), std::size_t{0}));
  }
  const std::vector<std::uint8_t>& data() const noexcept { return bits_; }

  friend bool operator==(const Bitstring&, const Bitstring&) = default;

private:
  std::vector<std::uint8_t> bits_;
};

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seedable generator. Streams are derived, never shared: a trial owns
// Rng::derive(master, trial_index) and splits sub-streams from it by tag.
class Rng {
public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

  static Rng derive(std::uint64_t master, std::uint64_t index) {
    return Rng(mix64(master ^ mix64(index + 0x632be59bd9b4e019ULL)));
  }

  // Independent child stream; does not advance this generator.
  Rng split(std::uint64_t tag) const { return derive(seed_, tag); }

  std::uint64_t seed() const noexcept { return seed_; }

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  // Uniform integer on [lo, hi].
  std::size_t uniform_index(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(engine_);
  }

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

  bool bernoulli(double p) { return uniform() < p; }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

inline std::size_t hamming_distance(const Bitstring& a, const Bitstring& b) {
  require(a.size() == b.size(), "hamming_distance: length mismatch");
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] != b[i]) ? 1 : 0;
  return d;
}

// k distinct indices from [0, n), partial Fisher-Yates over a virtual
// identity array. Only displaced slots are stored, so work is O(k^2) in k
// and independent of n.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  require(k <= n, "sample_without_replacement: k > n");
  std::vector<std::pair<std::size_t, std::size_t>> displaced;
  auto value_at = [&](std::size_t i) {
    for (const auto& [slot, v] : displaced)
      if (slot == i) return v;
    return i;
  };
  auto assign = [&](std::size_t i, std::size_t v) {
    for (auto& [slot, old] : displaced)
      if (slot == i) { old = v; return; }
    displaced.emplace_back(i, v);
  };
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = rng.uniform_index(i, n - 1);
    std::size_t vi = value_at(i);
    std::size_t vj = value_at(j);
    assign(j, vi);
    assign(i, vj);
    out.push_back(vj);
  }
  return out;
}

inline Bitstring flip_distinct_bits(const Bitstring& x, std::size_t k, Rng& rng) {
  require(k >= 1 && k <= x.size(), "flip_distinct_bits: need 1 <= k <= length");
  Bitstring y = x;
  for (std::size_t i : sample_without_replacement(x.size(), k, rng)) y.flip(i);
  return y;
}

inline Bitstring random_bitstring(std::size_t length, Rng& rng) {
  Bitstring x(length);
  for (std::size_t i = 0; i < length; ++i) x.set(i, rng.bernoulli(0.5));
  return x;
}

}  // namespace eaware
