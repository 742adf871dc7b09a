#include "apps/engine.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "apps/errors.hpp"
#include "apps/logspace.hpp"
#include "apps/potential.hpp"

namespace apps {

void validate(const EngineConfig& cfg) {
  if (!(cfg.alpha > 0.0)) throw ConfigError("engine: alpha must be positive");
  if (cfg.block_size < 1) throw ConfigError("engine: block_size must be at least 1");
  if (cfg.max_tokens < 1) throw ConfigError("engine: max_tokens must be at least 1");
  if (cfg.particles < 1) throw ConfigError("engine: particles must be at least 1");
  if (cfg.dynamic_allocation) {
    if (cfg.min_particles < 1) throw ConfigError("engine: min_particles must be at least 1");
    if (cfg.max_particles < cfg.min_particles) {
      throw ConfigError("engine: max_particles must be at least min_particles");
    }
  }
  if (!(cfg.ess_threshold >= 0.0 && cfg.ess_threshold <= 1.0)) {
    throw ConfigError("engine: ess_threshold must lie in [0, 1] (0 disables resampling)");
  }
  if (!(cfg.selection_strength >= 0.0)) {
    throw ConfigError("engine: selection_strength must be non-negative");
  }
  validate(cfg.proposal);
}

BlockDraw propose_block(const AutoregressiveModel& model, const ModelState& state,
                        int max_len, const ProposalConfig& proposal, CounterRng& rng) {
  BlockDraw draw;
  draw.end_state = state;
  for (int t = 0; t < max_len; ++t) {
    if (draw.end_state.terminal) break;
    LogProbVector base = model.next_log_probs(draw.end_state);
    LogProbVector q = proposal_log_probs(base, proposal);
    const TokenId tok = sample_from_log_probs(q, rng);
    draw.tokens.push_back(tok);
    draw.log_p += base[static_cast<std::size_t>(tok)];
    draw.log_q += q[static_cast<std::size_t>(tok)];
    draw.end_state = model.advance(draw.end_state, tok);
  }
  return draw;
}

double ambiguity_score(std::span<const double> log_scores) {
  if (log_scores.size() < 2) return 0.0;
  std::vector<double> p = normalized_from_log(log_scores);
  return entropy(p) / std::log(static_cast<double>(log_scores.size()));
}

int allocate_population(double ambiguity, int min_particles, int max_particles) {
  const double span = static_cast<double>(max_particles - min_particles);
  const int p = min_particles + static_cast<int>(std::lround(span * ambiguity));
  return std::clamp(p, min_particles, max_particles);
}

std::vector<int> multinomial_ancestors(std::span<const double> probs, int count,
                                       CounterRng& rng) {
  std::vector<double> cdf(probs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    cdf[i] = acc;
  }
  std::vector<int> out(static_cast<std::size_t>(count));
  for (int n = 0; n < count; ++n) {
    const double u = rng.next_double() * acc;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    out[static_cast<std::size_t>(n)] =
        static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.begin(),
                                                  static_cast<std::ptrdiff_t>(cdf.size()) - 1));
  }
  return out;
}

std::vector<int> systematic_ancestors(std::span<const double> probs, int count,
                                      CounterRng& rng) {
  std::vector<int> out(static_cast<std::size_t>(count));
  double total = 0.0;
  for (double p : probs) total += p;
  const double u0 = rng.next_double();
  double cum = probs.empty() ? 0.0 : probs[0];
  std::size_t idx = 0;
  for (int n = 0; n < count; ++n) {
    const double pos = (static_cast<double>(n) + u0) / static_cast<double>(count) * total;
    while (pos >= cum && idx + 1 < probs.size()) {
      ++idx;
      cum += probs[idx];
    }
    out[static_cast<std::size_t>(n)] = static_cast<int>(idx);
  }
  return out;
}

std::vector<int> select_ancestors(std::span<const double> log_scores, int count,
                                  ResampleScheme scheme, CounterRng& rng,
                                  const std::vector<double>* elite_ranking) {
  std::vector<double> probs = normalized_from_log(log_scores);
  int draw_count = count;
  int elite = -1;
  if (elite_ranking != nullptr && count > 0) {
    elite = static_cast<int>(std::max_element(elite_ranking->begin(), elite_ranking->end()) -
                             elite_ranking->begin());
    draw_count = count - 1;
  }
  std::vector<int> drawn;
  if (draw_count > 0) {
    drawn = (scheme == ResampleScheme::multinomial)
                ? multinomial_ancestors(probs, draw_count, rng)
                : systematic_ancestors(probs, draw_count, rng);
  }
  if (elite < 0) return drawn;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  out.push_back(elite);
  out.insert(out.end(), drawn.begin(), drawn.end());
  return out;
}

DiagnosticsReport diagnostics_from_trace(std::span<const BoundaryRecord> trace,
                                         int min_particles) {
  DiagnosticsReport d;
  if (trace.empty()) return d;
  double pop_sum = 0.0, amb_sum = 0.0, delta_sum = 0.0, uniq_sum = 0.0;
  int resamples = 0;
  for (const BoundaryRecord& rec : trace) {
    pop_sum += rec.population_before;
    amb_sum += rec.ambiguity;
    if (rec.population_before == min_particles) d.fraction_at_min += 1.0;
    const int delta = rec.population_after - rec.population_before;
    delta_sum += std::abs(delta);
    if (delta > 0) ++d.population_increases;
    if (delta < 0) ++d.population_decreases;
    if (rec.resampled) {
      uniq_sum += rec.unique_ancestors;
      ++resamples;
    }
  }
  const double n = static_cast<double>(trace.size());
  d.mean_population = pop_sum / n;
  d.fraction_at_min /= n;
  d.mean_ambiguity = amb_sum / n;
  d.mean_abs_population_change = delta_sum / n;
  d.mean_unique_ancestors = resamples > 0 ? uniq_sum / resamples : 0.0;
  return d;
}

namespace {

bool any_alive(const std::vector<Particle>& population) {
  return std::any_of(population.begin(), population.end(),
                     [](const Particle& p) { return p.alive; });
}

}  // namespace

RunResult run_sampler(const AutoregressiveModel& model, const EngineConfig& cfg,
                      SelectionPotential* potential) {
  validate(cfg);
  RunResult result;
  std::vector<Particle>& pop = result.population;
  pop.resize(static_cast<std::size_t>(cfg.particles));
  for (Particle& p : pop) p.state = model.initial_state();

  int boundary = 0;
  while (any_alive(pop)) {
    // ---- Propagate + reweight (data-parallel; one rng stream per slot) ----
    const int n = static_cast<int>(pop.size());
    std::vector<BlockDraw> draws(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static) if (cfg.exec.parallel)
    for (int i = 0; i < n; ++i) {
      Particle& p = pop[static_cast<std::size_t>(i)];
      if (!p.alive) continue;
      const int budget = std::min(cfg.block_size,
                                  cfg.max_tokens - static_cast<int>(p.prefix.size()));
      CounterRng rng(cfg.seed, stream_id(RngDomain::propose,
                                         static_cast<std::uint64_t>(boundary),
                                         static_cast<std::uint64_t>(i)));
      draws[static_cast<std::size_t>(i)] = propose_block(model, p.state, budget,
                                                         cfg.proposal, rng);
    }
    for (int i = 0; i < n; ++i) {
      Particle& p = pop[static_cast<std::size_t>(i)];
      if (!p.alive) continue;
      const BlockDraw& d = draws[static_cast<std::size_t>(i)];
      p.prefix.insert(p.prefix.end(), d.tokens.begin(), d.tokens.end());
      p.state = d.end_state;
      const double inc = cfg.alpha * d.log_p - d.log_q;
      p.log_weight += inc;
      p.ancestry_score += inc;
      p.cum_log_p += d.log_p;
      p.cum_log_q += d.log_q;
      if (p.state.terminal || static_cast<int>(p.prefix.size()) >= cfg.max_tokens) {
        p.alive = false;
      }
    }
    ++boundary;

    BoundaryRecord rec;
    rec.boundary = boundary;
    rec.population_before = n;
    rec.population_after = n;

    std::vector<double> log_w(pop.size());
    for (std::size_t i = 0; i < pop.size(); ++i) log_w[i] = pop[i].log_weight;
    rec.ess = effective_sample_size(log_w);

    const bool can_resample = cfg.ess_threshold > 0.0 && any_alive(pop);
    const bool imminent =
        can_resample && rec.ess < cfg.ess_threshold * static_cast<double>(n);

    // ---- Selection scores: potential only when resampling is imminent ----
    std::vector<double> augmented = log_w;
    if (potential != nullptr && imminent) {
      PotentialContext ctx{model, cfg.alpha, cfg.proposal, cfg.seed, boundary, cfg.exec};
      PotentialResult pr = potential->evaluate(pop, ctx);
      rec.potential_evaluated = true;
      rec.log_potential = pr.log_psi;
      rec.lookahead_tokens = pr.lookahead_tokens;
      for (std::size_t i = 0; i < pop.size(); ++i) {
        augmented[i] += cfg.selection_strength * pr.log_psi[i];
      }
    }
    rec.ess_augmented = effective_sample_size(augmented);
    rec.ambiguity = ambiguity_score(augmented);
    rec.proposed_population =
        cfg.dynamic_allocation
            ? allocate_population(rec.ambiguity, cfg.min_particles, cfg.max_particles)
            : n;

    // ---- Gate and resample ----
    if (can_resample && rec.ess_augmented < cfg.ess_threshold * static_cast<double>(n)) {
      const int next_n = rec.proposed_population;
      CounterRng rng(cfg.seed, stream_id(RngDomain::resample,
                                         static_cast<std::uint64_t>(boundary)));
      std::vector<double> ancestry(pop.size());
      for (std::size_t i = 0; i < pop.size(); ++i) ancestry[i] = pop[i].ancestry_score;
      rec.ancestors = select_ancestors(augmented, next_n, cfg.resampling, rng,
                                       cfg.keep_elite ? &ancestry : nullptr);
      rec.unique_ancestors = static_cast<int>(
          std::set<int>(rec.ancestors.begin(), rec.ancestors.end()).size());

      std::vector<Particle> next;
      next.reserve(static_cast<std::size_t>(next_n));
      for (int a : rec.ancestors) {
        Particle child = pop[static_cast<std::size_t>(a)];
        child.log_weight = 0.0;
        if (cfg.correction == CorrectionMode::auxiliary_corrected && rec.potential_evaluated) {
          child.log_weight =
              -cfg.selection_strength * rec.log_potential[static_cast<std::size_t>(a)];
        }
        next.push_back(std::move(child));
      }
      pop = std::move(next);
      rec.resampled = true;
      rec.population_after = next_n;
    }
    result.trace.push_back(std::move(rec));
  }

  // ---- Finalize ----
  if (!pop.empty()) {
    if (cfg.finalize == FinalizeRule::best_score) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < pop.size(); ++i) {
        if (pop[i].ancestry_score > pop[best].ancestry_score) best = i;
      }
      result.selected_index = static_cast<int>(best);
    } else {
      std::vector<double> log_w(pop.size());
      for (std::size_t i = 0; i < pop.size(); ++i) log_w[i] = pop[i].log_weight;
      std::vector<double> probs = normalized_from_log(log_w);
      CounterRng rng(cfg.seed, stream_id(RngDomain::finalize, 0));
      const double u = rng.next_double();
      double cum = 0.0;
      result.selected_index = static_cast<int>(pop.size()) - 1;
      for (std::size_t i = 0; i < probs.size(); ++i) {
        cum += probs[i];
        if (u < cum) {
          result.selected_index = static_cast<int>(i);
          break;
        }
      }
    }
    result.completion = pop[static_cast<std::size_t>(result.selected_index)].prefix;
  }
  result.diagnostics = diagnostics_from_trace(result.trace, cfg.min_particles);
  return result;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

nlohmann::json to_json(const BoundaryRecord& rec) {
  return {{"boundary", rec.boundary},
          {"population_before", rec.population_before},
          {"population_after", rec.population_after},
          {"ess", rec.ess},
          {"ess_augmented", rec.ess_augmented},
          {"ambiguity", rec.ambiguity},
          {"proposed_population", rec.proposed_population},
          {"potential_evaluated", rec.potential_evaluated},
          {"log_potential", rec.log_potential},
          {"lookahead_tokens", rec.lookahead_tokens},
          {"resampled", rec.resampled},
          {"ancestors", rec.ancestors},
          {"unique_ancestors", rec.unique_ancestors}};
}

nlohmann::json to_json(const DiagnosticsReport& d) {
  return {{"mean_population", d.mean_population},
          {"fraction_at_min", d.fraction_at_min},
          {"mean_ambiguity", d.mean_ambiguity},
          {"mean_abs_population_change", d.mean_abs_population_change},
          {"population_increases", d.population_increases},
          {"population_decreases", d.population_decreases},
          {"mean_unique_ancestors", d.mean_unique_ancestors}};
}

nlohmann::json to_json(const RunResult& result) {
  nlohmann::json particles = nlohmann::json::array();
  for (const Particle& p : result.population) {
    particles.push_back({{"prefix", p.prefix},
                         {"log_weight", p.log_weight},
                         {"ancestry_score", p.ancestry_score},
                         {"cum_log_p", p.cum_log_p},
                         {"cum_log_q", p.cum_log_q},
                         {"alive", p.alive}});
  }
  nlohmann::json trace = nlohmann::json::array();
  for (const BoundaryRecord& rec : result.trace) trace.push_back(to_json(rec));
  return {{"completion", result.completion},
          {"selected_index", result.selected_index},
          {"population", std::move(particles)},
          {"trace", std::move(trace)},
          {"diagnostics", to_json(result.diagnostics)}};
}

}  // namespace apps
