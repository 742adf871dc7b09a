#include "apps/potential.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

#include "apps/errors.hpp"
#include "apps/logspace.hpp"

namespace apps {

PotentialResult UnitPotential::evaluate(std::span<const Particle> population,
                                        const PotentialContext&) {
  PotentialResult r;
  r.log_psi.assign(population.size(), 0.0);
  return r;
}

// ---------------------------------------------------------------------------
// Rollout potential
// ---------------------------------------------------------------------------

std::vector<double> RolloutPotential::rollout_scores(
    const AutoregressiveModel& model, const ModelState& state, int count, int horizon,
    double alpha, const ProposalConfig& proposal, std::uint64_t seed, int boundary,
    std::uint32_t state_slot, const ExecPolicy& exec, long long* tokens_out) {
  std::vector<double> scores(static_cast<std::size_t>(count), 0.0);
  std::vector<long long> tokens(static_cast<std::size_t>(count), 0);
#pragma omp parallel for schedule(static) if (exec.parallel)
  for (int r = 0; r < count; ++r) {
    CounterRng rng(seed, stream_id(RngDomain::rollout, static_cast<std::uint64_t>(boundary),
                                   state_slot, static_cast<std::uint64_t>(r)));
    ModelState s = state;
    double acc = 0.0;
    long long steps = 0;
    for (int t = 0; t < horizon && !s.terminal; ++t) {
      LogProbVector base = model.next_log_probs(s);
      LogProbVector q = proposal_log_probs(base, proposal);
      const TokenId tok = sample_from_log_probs(q, rng);
      acc += alpha * base[static_cast<std::size_t>(tok)] - q[static_cast<std::size_t>(tok)];
      s = model.advance(s, tok);
      ++steps;
    }
    scores[static_cast<std::size_t>(r)] = acc;
    tokens[static_cast<std::size_t>(r)] = steps;
  }
  if (tokens_out != nullptr) {
    for (long long t : tokens) *tokens_out += t;
  }
  return scores;
}

PotentialResult RolloutPotential::evaluate(std::span<const Particle> population,
                                           const PotentialContext& ctx) {
  PotentialResult result;
  result.log_psi.assign(population.size(), 0.0);
  const ProposalConfig proposal = cfg_.proposal.value_or(ctx.proposal);

  // A potential is a function of the model state, so distinct states are
  // scored once and particles sharing a state share the estimate. State slots
  // (and thus rng streams) are assigned in first-appearance order, which is
  // independent of worker count.
  std::vector<const ModelState*> states;
  std::vector<int> state_of_particle(population.size(), -1);
  std::unordered_map<ModelState, int, ModelStateHash> index;
  for (std::size_t i = 0; i < population.size(); ++i) {
    if (!population[i].alive) continue;
    auto [it, inserted] =
        index.try_emplace(population[i].state, static_cast<int>(states.size()));
    if (inserted) states.push_back(&population[i].state);
    state_of_particle[i] = it->second;
  }

  // Optional subset rule: only the top_m states by best particle weight get
  // rollouts; the rest keep log psi = 0.
  std::vector<char> scored(states.size(), 1);
  if (cfg_.top_m > 0 && static_cast<int>(states.size()) > cfg_.top_m) {
    std::vector<double> best(states.size(), kNegInf);
    for (std::size_t i = 0; i < population.size(); ++i) {
      if (state_of_particle[i] >= 0) {
        best[static_cast<std::size_t>(state_of_particle[i])] =
            std::max(best[static_cast<std::size_t>(state_of_particle[i])],
                     population[i].log_weight);
      }
    }
    std::vector<std::size_t> order(states.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(),
                     [&best](std::size_t a, std::size_t b) { return best[a] > best[b]; });
    std::fill(scored.begin(), scored.end(), 0);
    for (int k = 0; k < cfg_.top_m; ++k) scored[order[static_cast<std::size_t>(k)]] = 1;
  }

  std::vector<double> state_log_psi(states.size(), 0.0);
  std::vector<long long> state_tokens(states.size(), 0);
  const int ns = static_cast<int>(states.size());
#pragma omp parallel for schedule(dynamic) if (ctx.exec.parallel)
  for (int s = 0; s < ns; ++s) {
    if (!scored[static_cast<std::size_t>(s)]) continue;
    ExecPolicy serial;  // rollouts of one state run on the owning thread
    long long tokens = 0;
    std::vector<double> scores =
        rollout_scores(ctx.model, *states[static_cast<std::size_t>(s)], cfg_.rollouts,
                       cfg_.horizon, ctx.alpha, proposal, ctx.seed, ctx.boundary,
                       static_cast<std::uint32_t>(s), serial, &tokens);
    state_log_psi[static_cast<std::size_t>(s)] = log_mean_exp(scores);
    state_tokens[static_cast<std::size_t>(s)] = tokens;
  }

  for (std::size_t i = 0; i < population.size(); ++i) {
    if (state_of_particle[i] >= 0) {
      result.log_psi[i] = state_log_psi[static_cast<std::size_t>(state_of_particle[i])];
    }
  }
  for (long long t : state_tokens) result.lookahead_tokens += t;

  if (sink_ != nullptr) {
    std::vector<std::vector<double>> feats;
    std::vector<double> ys;
    for (std::size_t i = 0; i < population.size(); ++i) {
      if (state_of_particle[i] < 0) continue;
      std::vector<double> f(static_cast<std::size_t>(ctx.model.feature_dim()));
      ctx.model.features(population[i].state, f);
      feats.push_back(std::move(f));
      ys.push_back(result.log_psi[i]);
    }
    if (!feats.empty()) {
      sink_->accept_group(static_cast<std::int64_t>(ctx.seed) * 1000003 + ctx.boundary,
                          feats, ys);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Learned potential
// ---------------------------------------------------------------------------

PotentialResult LearnedPotential::evaluate(std::span<const Particle> population,
                                           const PotentialContext& ctx) {
  PotentialResult result;
  result.log_psi.assign(population.size(), 0.0);
  if (ctx.model.feature_dim() != params_.input_dim) {
    throw ConfigError("learned potential: head input_dim " +
                      std::to_string(params_.input_dim) + " does not match model feature_dim " +
                      std::to_string(ctx.model.feature_dim()));
  }
  const int n = static_cast<int>(population.size());
#pragma omp parallel for schedule(static) if (ctx.exec.parallel)
  for (int i = 0; i < n; ++i) {
    if (!population[static_cast<std::size_t>(i)].alive) continue;
    std::vector<double> f(static_cast<std::size_t>(params_.input_dim));
    ctx.model.features(population[static_cast<std::size_t>(i)].state, f);
    result.log_psi[static_cast<std::size_t>(i)] = head_forward(params_, f);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reference potentials
// ---------------------------------------------------------------------------

PotentialResult OracleSuffixPotential::evaluate(std::span<const Particle> population,
                                                const PotentialContext& ctx) {
  PotentialResult result;
  result.log_psi.assign(population.size(), 0.0);
  for (std::size_t i = 0; i < population.size(); ++i) {
    const Particle& p = population[i];
    if (!p.alive) continue;
    const int node = tables_->find(ctx.boundary, p.prefix);
    if (node < 0) {
      throw ConfigError("oracle potential: particle prefix not found in tables");
    }
    const double log_z = tables_->levels[static_cast<std::size_t>(ctx.boundary)]
                             [static_cast<std::size_t>(node)].log_suffix_value;
    result.log_psi[i] = invert_ ? -log_z : log_z;
  }
  return result;
}

PotentialResult HashPotential::evaluate(std::span<const Particle> population,
                                        const PotentialContext& ctx) {
  PotentialResult result;
  result.log_psi.assign(population.size(), 0.0);
  for (std::size_t i = 0; i < population.size(); ++i) {
    const Particle& p = population[i];
    if (!p.alive) continue;
    // Pure function of (seed, boundary, prefix).
    std::uint64_t h = 0xCBF29CE484222325ull ^ static_cast<std::uint64_t>(ctx.boundary);
    for (TokenId t : p.prefix) {
      h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(t)) + 1u;
      h *= 0x100000001B3ull;
    }
    CounterRng rng(ctx.seed ^ 0x706F74656E7469ull, h);
    result.log_psi[i] = scale_ * (2.0 * rng.next_double() - 1.0);
  }
  return result;
}

}  // namespace apps
