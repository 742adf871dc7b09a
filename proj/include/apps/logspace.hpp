#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

// Numerically stable arithmetic on log-domain quantities. All functions treat
// -infinity as "probability zero" and never produce NaN from it.

namespace apps {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/** log(sum_i exp(x_i)), stable. Empty input or all -inf gives -inf. */
inline double log_sum_exp(std::span<const double> x) {
  double m = kNegInf;
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;  // all -inf (or empty via init)
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

/** Two-argument log_sum_exp. */
inline double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/** log((1/n) sum_i exp(x_i)); -inf on empty input. */
inline double log_mean_exp(std::span<const double> x) {
  if (x.empty()) return kNegInf;
  return log_sum_exp(x) - std::log(static_cast<double>(x.size()));
}

/**
 * Normalize log-weights into probabilities. Input that is entirely -inf
 * yields the uniform distribution (callers treat that population as
 * weightless rather than dividing by zero).
 */
inline std::vector<double> normalized_from_log(std::span<const double> log_w) {
  std::vector<double> p(log_w.size(), 0.0);
  if (log_w.empty()) return p;
  double lse = log_sum_exp(log_w);
  if (lse == kNegInf) {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(p.size()));
    return p;
  }
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(log_w[i] - lse);
  return p;
}

/** Shannon entropy in nats of a probability vector (0 log 0 := 0). */
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

/** Effective sample size 1 / sum_i wbar_i^2 of normalized weights wbar. */
inline double effective_sample_size(std::span<const double> log_w) {
  std::vector<double> p = normalized_from_log(log_w);
  double s2 = 0.0;
  for (double v : p) s2 += v * v;
  if (s2 <= 0.0) return 0.0;
  return 1.0 / s2;
}

/** Total variation distance (1/2) sum |a_i - b_i| between aligned prob vectors. */
inline double tv_distance(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

}  // namespace apps
