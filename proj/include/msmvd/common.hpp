// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace msmvd {

// ---------------------------------------------------------------------------
// Errors. Every failure surfaced to callers goes through one of these so the
// CLI can map them onto exit codes (usage/validation -> 2, runtime -> 1).
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad configuration or arguments (maps to CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Violated mathematical precondition (out-of-range index, degenerate input).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// File / directory / parse problems; message carries the file context.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Shape or invariant mismatch between two runtime values.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Training aborted (non-finite loss, broken dataset mid-run, ...).
class TrainingError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// FNV-1a content hashing. Used for dataset/config fingerprints and cache keys;
// not cryptographic.
// ---------------------------------------------------------------------------

struct Fnv1a {
  static constexpr std::uint64_t kOffset = 14695981039346656037ull;
  static constexpr std::uint64_t kPrime = 1099511628211ull;

  std::uint64_t state = kOffset;

  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state ^= p[i];
      state *= kPrime;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  template <typename T>
  void update_value(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    update(&v, sizeof(v));
  }
  std::uint64_t digest() const { return state; }
};

inline std::uint64_t fnv1a(std::string_view s) {
  Fnv1a h;
  h.update(s);
  return h.digest();
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 as the raw stream; the distributions are
// hand-rolled because the std:: ones are implementation-defined, and dataset
// generation must be byte-reproducible.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto range = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(
                    (static_cast<unsigned __int128>(gen_()) * range) >> 64);
  }

  /// Standard normal via Box-Muller. No spare caching: the stream consumed per
  /// call is fixed, which keeps forked streams reproducible.
  double normal() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Child stream keyed by a label. Entity-keyed forks (frame id, view id,
  /// parameter name) make results independent of evaluation order.
  Rng fork(std::string_view label) const {
    Fnv1a h;
    h.update_value(seed_tag_);
    h.update(label);
    Rng child(h.digest());
    child.seed_tag_ = h.digest();
    return child;
  }
  Rng fork(std::string_view label, std::int64_t index) const {
    Fnv1a h;
    h.update_value(seed_tag_);
    h.update(label);
    h.update_value(index);
    Rng child(h.digest());
    child.seed_tag_ = h.digest();
    return child;
  }

  static Rng seeded(std::uint64_t seed) {
    Rng r(seed * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);
    r.seed_tag_ = seed;
    return r;
  }

 private:
  std::mt19937_64 gen_;
  std::uint64_t seed_tag_ = 0;
};

// ---------------------------------------------------------------------------
// Small file and string helpers.
// ---------------------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write file: " + path.string());
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw IoError("short write: " + path.string());
}

/// Locale-independent fixed-point formatting ("70.0", never "70,0").
inline std::string fmt_fixed(double value, int decimals) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed, decimals);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double parse_double(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("cannot parse number '" + s + "' in " + context);
  }
}

inline long parse_long(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("cannot parse integer '" + s + "' in " + context);
  }
}

}  // namespace msmvd
