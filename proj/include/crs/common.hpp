#pragma once

#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace crs {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shape / dimension mismatches.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Bad argument values (labels out of range, M >= N, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf detected in an op output (debug builds).
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// File format / serialization failures, carrying a machine-checkable kind.
class IoError : public Error {
 public:
  enum class Kind {
    open_failed,
    bad_magic,
    bad_version,
    truncated,
    dim_mismatch,
    bad_size,
    bad_format,
    key_mismatch,
    shape_mismatch,
    write_failed,
  };

  IoError(Kind kind, const std::string& msg) : Error(msg), kind(kind) {}
  Kind kind;
};

/// Run-configuration parse/validation failures (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Raised when training hits a non-finite loss; records the global step.
class TrainAbort : public Error {
 public:
  TrainAbort(long step, const std::string& msg) : Error(msg), step(step) {}
  long step;
};

/// printf-style std::string formatting.
inline std::string strf(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list args2;
  va_copy(args2, args);
  int n = std::vsnprintf(nullptr, 0, fmt, args);
  va_end(args);
  std::string out(n > 0 ? static_cast<size_t>(n) : 0, '\0');
  if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, args2);
  va_end(args2);
  return out;
}

/// Non-overlapping pooling window descriptor: a fixed side length or the
/// whole spatial extent ("global").
struct Scale {
  int window = 1;
  bool global = false;

  static Scale of(int w) { return Scale{w, false}; }
  static Scale global_scale() { return Scale{0, true}; }

  bool operator==(const Scale& o) const {
    return global == o.global && (global || window == o.window);
  }
  bool operator!=(const Scale& o) const { return !(*this == o); }
  /// Global sorts after every finite window.
  bool operator<(const Scale& o) const {
    if (global != o.global) return !global;
    if (global) return false;
    return window < o.window;
  }

  std::string str() const { return global ? "global" : std::to_string(window); }

  static std::optional<Scale> parse(const std::string& s) {
    if (s == "global" || s == "GLOBAL" || s == "gap" || s == "GAP")
      return global_scale();
    try {
      size_t pos = 0;
      int w = std::stoi(s, &pos);
      if (pos != s.size() || w < 1) return std::nullopt;
      return of(w);
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
};

/// Deterministic random source. Uses std::mt19937_64 (bit-exact per the
/// standard) for raw bits and hand-rolled transforms for the distributions,
/// so streams do not depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller (pairs cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  /// Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) {
    return static_cast<int>(
        (static_cast<unsigned __int128>(next_u64()) * static_cast<uint64_t>(n)) >> 64);
  }

  bool coin() { return (next_u64() >> 63) != 0; }

  /// Fisher-Yates shuffle with this stream's draws.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(v[i], v[static_cast<size_t>(j)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace crs
