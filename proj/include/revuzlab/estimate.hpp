/// @file estimate.hpp
/// @brief Numeric results that carry their own uncertainty: Monte-Carlo means
///        with standard errors, quadrature values with refinement residuals.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include <json.hpp>

namespace revuzlab {

/// A numeric estimate with sampling error and a free-text note recording
/// deterministic error sources (truncation tails, discretization, grid
/// surrogates). `n` is the number of independent replicates behind `se`
/// (0 for purely deterministic values).
struct Estimate {
  double value = 0.0;
  double se = 0.0;
  std::int64_t n = 0;
  std::string bias_note;

  static Estimate exact(double v, std::string note = {}) {
    return Estimate{v, 0.0, 0, std::move(note)};
  }
  bool is_finite() const { return std::isfinite(value); }

  Estimate operator+(const Estimate& o) const {
    return Estimate{value + o.value, std::hypot(se, o.se), std::min(n, o.n),
                    join_notes(bias_note, o.bias_note)};
  }
  Estimate operator-(const Estimate& o) const {
    return Estimate{value - o.value, std::hypot(se, o.se), std::min(n, o.n),
                    join_notes(bias_note, o.bias_note)};
  }
  Estimate scaled(double c) const {
    return Estimate{c * value, std::abs(c) * se, n, bias_note};
  }

  static std::string join_notes(const std::string& a, const std::string& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    return a + "; " + b;
  }
};

inline nlohmann::json to_json(const Estimate& e) {
  nlohmann::json j;
  j["value"] = e.value;
  j["se"] = e.se;
  j["n"] = e.n;
  if (!e.bias_note.empty()) j["bias_note"] = e.bias_note;
  return j;
}

/// Two-estimate discrepancy in combined standard errors. Infinite if both
/// standard errors vanish and the values differ.
inline double z_score(const Estimate& a, const Estimate& b) {
  const double d = std::abs(a.value - b.value);
  const double s = std::hypot(a.se, b.se);
  if (s == 0.0) return d == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return d / s;
}

/// Streaming mean/variance accumulator (sum and sum of squares), mergeable in
/// a fixed order for scheduling-independent totals.
struct Welford {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::int64_t n = 0;

  void add(double x) {
    sum += x;
    sum_sq += x * x;
    ++n;
  }
  void merge(const Welford& o) {
    sum += o.sum;
    sum_sq += o.sum_sq;
    n += o.n;
  }
  double mean() const { return n > 0 ? sum / double(n) : 0.0; }
  double variance() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double v = (sum_sq - double(n) * m * m) / double(n - 1);
    return v > 0.0 ? v : 0.0;
  }
  double stderr_of_mean() const {
    return n > 0 ? std::sqrt(variance() / double(n)) : 0.0;
  }
  Estimate estimate(std::string note = {}) const {
    return Estimate{mean(), stderr_of_mean(), n, std::move(note)};
  }
};

}  // namespace revuzlab
