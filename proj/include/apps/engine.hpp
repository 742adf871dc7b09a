#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "apps/model.hpp"
#include "apps/proposal.hpp"
#include "apps/rng.hpp"

// ============================================================================
// Blockwise sequential Monte Carlo over power-distributed sequences.
//
// A population of particles extends block by block. Each block is proposed
// token-wise from the tempered/truncated proposal, and the incremental weight
// update alpha*log p - log q keeps the population targeting p^alpha. At block
// boundaries, a selection potential can look ahead and rescale the resampling
// scores, the effective sample size gates resampling, and the population size
// can grow or shrink with boundary ambiguity.
//
// Two scores ride along per particle:
//   log_weight      local importance weight since the last resample
//   ancestry_score  cumulative alpha*log p - log q along the whole lineage,
//                   never reset, copied through ancestors
//
// Every random decision draws from a counter-based stream keyed by
// (seed, domain, boundary, slot), so runs are bit-identical for any worker
// count and any execution order.
// ============================================================================

namespace apps {

class SelectionPotential;

/** Execution policy for data-parallel kernels. Results never depend on it. */
struct ExecPolicy {
  bool parallel = false;
};

enum class ResampleScheme { multinomial, systematic };
enum class CorrectionMode { heuristic, auxiliary_corrected };
enum class FinalizeRule { best_score, weighted_sample };

struct EngineConfig {
  double alpha = 4.0;
  int block_size = 16;
  int max_tokens = 3072;
  int particles = 32;

  // Dynamic allocation bounds; population stays at `particles` when disabled.
  bool dynamic_allocation = false;
  int min_particles = 8;
  int max_particles = 64;

  ProposalConfig proposal{0.25, 0, 1.0};

  double ess_threshold = 0.5;       // resample when ESS < threshold * population; 0 disables
  double selection_strength = 0.5;  // exponent on the potential in resampling scores
  ResampleScheme resampling = ResampleScheme::systematic;
  CorrectionMode correction = CorrectionMode::heuristic;
  bool keep_elite = true;           // pin the best-ancestry particle into slot 0
  FinalizeRule finalize = FinalizeRule::best_score;

  std::uint64_t seed = 0;
  ExecPolicy exec;
};

void validate(const EngineConfig& cfg);

struct Particle {
  std::vector<TokenId> prefix;
  ModelState state;
  double log_weight = 0.0;
  double ancestry_score = 0.0;
  double cum_log_p = 0.0;  // base-model log probability of the prefix
  double cum_log_q = 0.0;  // proposal log probability of the prefix
  bool alive = true;       // false once absorbed or at the token budget
};

/** One proposed block: sampled tokens, their log masses, the end state. */
struct BlockDraw {
  std::vector<TokenId> tokens;
  double log_p = 0.0;
  double log_q = 0.0;
  ModelState end_state;
};

/** Per-boundary record, sufficient to replay all selection decisions. */
struct BoundaryRecord {
  int boundary = 0;  // 1-based, after this many blocks
  int population_before = 0;
  int population_after = 0;
  double ess = 0.0;            // on local weights
  double ess_augmented = 0.0;  // on potential-augmented scores
  double ambiguity = 0.0;      // entropy of augmented scores / log(population)
  int proposed_population = 0; // allocation target (applied only on resample)
  bool potential_evaluated = false;
  std::vector<double> log_potential;  // empty unless evaluated
  long long lookahead_tokens = 0;
  bool resampled = false;
  std::vector<int> ancestors;  // empty unless resampled
  int unique_ancestors = 0;
};

/** The six population-health summaries, recomputable from the trace. */
struct DiagnosticsReport {
  double mean_population = 0.0;
  double fraction_at_min = 0.0;
  double mean_ambiguity = 0.0;
  double mean_abs_population_change = 0.0;
  int population_increases = 0;
  int population_decreases = 0;
  double mean_unique_ancestors = 0.0;  // over resampling events; 0 if none
};

struct RunResult {
  std::vector<Particle> population;
  std::vector<BoundaryRecord> trace;
  std::vector<TokenId> completion;
  int selected_index = -1;
  DiagnosticsReport diagnostics;
};

// ---------------------------------------------------------------------------
// Boundary operations (unit-testable pieces of the main loop)
// ---------------------------------------------------------------------------

/**
 * Sample one block of at most `max_len` tokens from the proposal, stopping
 * early on absorption. Accumulates base and proposal log masses.
 */
BlockDraw propose_block(const AutoregressiveModel& model, const ModelState& state,
                        int max_len, const ProposalConfig& proposal, CounterRng& rng);

/** Normalized entropy of the score distribution: entropy / log(n), 0 for n < 2. */
double ambiguity_score(std::span<const double> log_scores);

/** Population size for a given ambiguity: min + round((max - min) * ambiguity). */
int allocate_population(double ambiguity, int min_particles, int max_particles);

/** Multinomial ancestor draw: count iid picks from `probs`. */
std::vector<int> multinomial_ancestors(std::span<const double> probs, int count,
                                       CounterRng& rng);

/** Systematic ancestor draw: one uniform offset, stratified positions. */
std::vector<int> systematic_ancestors(std::span<const double> probs, int count,
                                      CounterRng& rng);

/**
 * Ancestor selection from log scores. With `elite_ranking` non-null, slot 0 is
 * pinned to its argmax (first maximum) and the remaining count-1 slots are
 * drawn by the scheme.
 */
std::vector<int> select_ancestors(std::span<const double> log_scores, int count,
                                  ResampleScheme scheme, CounterRng& rng,
                                  const std::vector<double>* elite_ranking = nullptr);

DiagnosticsReport diagnostics_from_trace(std::span<const BoundaryRecord> trace,
                                         int min_particles);

// ---------------------------------------------------------------------------
// Full run
// ---------------------------------------------------------------------------

/**
 * Run the sampler to completion. `potential` may be null (no selection
 * reweighting). The potential is only consulted when the ESS pre-check on
 * unaugmented weights says resampling is imminent.
 */
RunResult run_sampler(const AutoregressiveModel& model, const EngineConfig& cfg,
                      SelectionPotential* potential = nullptr);

nlohmann::json to_json(const BoundaryRecord& rec);
nlohmann::json to_json(const DiagnosticsReport& d);
nlohmann::json to_json(const RunResult& result);

}  // namespace apps
