#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "apps/errors.hpp"
#include "apps/logspace.hpp"
#include "apps/model.hpp"
#include "apps/rng.hpp"

// Proposal distributions are deterministic transforms of base-model
// conditionals: temperature scaling followed by optional top-k and top-p
// truncation, renormalized after each truncation. The transform is pure, so
// the oracle can enumerate exactly the distribution the sampler draws from.

namespace apps {

struct ProposalConfig {
  double temperature = 1.0;
  int top_k = 0;      // 0 disables
  double top_p = 1.0; // 1 disables

  bool operator==(const ProposalConfig&) const = default;
};

inline void validate(const ProposalConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw ConfigError("proposal: temperature must be positive");
  if (cfg.top_k < 0) throw ConfigError("proposal: top_k must be non-negative");
  if (!(cfg.top_p > 0.0 && cfg.top_p <= 1.0)) throw ConfigError("proposal: top_p must lie in (0, 1]");
}

inline nlohmann::json to_json(const ProposalConfig& cfg) {
  return {{"temperature", cfg.temperature}, {"top_k", cfg.top_k}, {"top_p", cfg.top_p}};
}

inline ProposalConfig proposal_from_json(const nlohmann::json& j) {
  try {
    ProposalConfig cfg;
    cfg.temperature = j.value("temperature", cfg.temperature);
    cfg.top_k = j.value("top_k", cfg.top_k);
    cfg.top_p = j.value("top_p", cfg.top_p);
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("proposal config: ") + e.what());
  }
}

/**
 * Transform base log-probabilities into the (normalized) proposal.
 * Tokens removed by truncation come back as -inf. Ties during truncation are
 * broken by token id, so the result is deterministic.
 */
inline LogProbVector proposal_log_probs(const LogProbVector& base, const ProposalConfig& cfg) {
  const std::size_t n = base.size();
  LogProbVector lp(n);
  for (std::size_t v = 0; v < n; ++v) {
    lp[v] = (base[v] == kNegInf) ? kNegInf : base[v] / cfg.temperature;
  }
  double lse = log_sum_exp(lp);
  for (double& x : lp) x -= lse;

  // Candidate tokens ordered by probability (descending), id as tie-break.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&lp](std::size_t a, std::size_t b) { return lp[a] > lp[b]; });

  std::size_t keep = n;
  if (cfg.top_k > 0) keep = std::min(keep, static_cast<std::size_t>(cfg.top_k));
  if (cfg.top_p < 1.0) {
    double cum = 0.0;
    std::size_t need = 0;
    while (need < keep) {
      cum += std::exp(lp[order[need]]);
      ++need;
      if (cum >= cfg.top_p) break;
    }
    keep = need;
  }

  if (keep < n) {
    LogProbVector kept(n, kNegInf);
    for (std::size_t i = 0; i < keep; ++i) kept[order[i]] = lp[order[i]];
    double klse = log_sum_exp(kept);
    for (double& x : kept) {
      if (x != kNegInf) x -= klse;
    }
    lp = std::move(kept);
  }
  return lp;
}

/**
 * Inverse-CDF sample from normalized log-probabilities, walking token ids in
 * ascending order. One uniform draw per call.
 */
inline TokenId sample_from_log_probs(const LogProbVector& lp, CounterRng& rng) {
  const double u = rng.next_double();
  double cum = 0.0;
  TokenId last_positive = -1;
  for (std::size_t v = 0; v < lp.size(); ++v) {
    if (lp[v] == kNegInf) continue;
    last_positive = static_cast<TokenId>(v);
    cum += std::exp(lp[v]);
    if (u < cum) return last_positive;
  }
  if (last_positive < 0) throw std::runtime_error("sample_from_log_probs: empty support");
  return last_positive;  // u landed in the rounding tail
}

}  // namespace apps
