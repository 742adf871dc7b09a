#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "apps/model.hpp"
#include "apps/proposal.hpp"

// ============================================================================
// Exhaustive enumeration oracle for blockwise power targets.
//
// For a model p and power alpha, the sequence-level target over J blocks of
// size B is
//
//     pi(seq) = gamma(seq) / Z,   gamma(seq) = prod_t p(tok_t | prefix)^alpha.
//
// The oracle enumerates the full block tree and tabulates, for every prefix
// of whole blocks, the unnormalized prefix mass gamma_j, the suffix value
// z_{j+1} (total power mass of all completions, with z after the last block
// defined as 1), the normalizer Z, and the exact prefix marginal
// gamma_j * z_{j+1} / Z. Sequences that hit an absorbing state early continue
// through empty blocks, which multiply mass by 1.
//
// Everything here is ground truth for tests: small instances only, guarded by
// an explicit node cap.
// ============================================================================

namespace apps {

// ---------------------------------------------------------------------------
// Finite distributions and proposal-quality functionals
// ---------------------------------------------------------------------------

/** Explicit distribution over a small outcome set. */
struct FiniteDistribution {
  std::vector<std::int64_t> support;  // outcome ids, unique
  std::vector<double> probs;          // aligned, non-negative, sums to 1
};

/** Uniform-support helper: outcomes 0..n-1. */
FiniteDistribution make_distribution(std::vector<double> probs);

/**
 * chi^2(target || proposal) = sum_i target_i^2 / proposal_i - 1.
 * Infinity when the proposal misses part of the target's support. Supports
 * must be aligned.
 */
double chi_square(const FiniteDistribution& target, const FiniteDistribution& proposal);

/** Reweighted proposal q_i * psi_i / sum_j q_j * psi_j. psi must be positive. */
FiniteDistribution effective_proposal(const FiniteDistribution& proposal,
                                      std::span<const double> psi);

/**
 * Exact decomposition of the divergence change caused by reweighting the
 * proposal with a potential psi. With r = target/proposal and psi normalized
 * to unit proposal mean,
 *
 *   1 + chi^2(target || effective) = E_q[r^2] - Cov_q(psi, r^2 / psi),
 *
 * so the reweighting helps exactly when the covariance term is positive, and
 * psi proportional to r drives the divergence to zero.
 */
struct CovarianceReport {
  double chi_square_base;       // chi^2(target || proposal)
  double chi_square_effective;  // chi^2(target || effective proposal)
  double expectation_term;      // E_q[r^2]
  double covariance_term;       // Cov_q(psi_n, r^2 / psi_n), psi_n = psi / E_q[psi]
  bool strict_reduction;        // covariance_term > 0
};
CovarianceReport covariance_report(const FiniteDistribution& target,
                                   const FiniteDistribution& proposal,
                                   std::span<const double> psi);

// ---------------------------------------------------------------------------
// Block-tree enumeration
// ---------------------------------------------------------------------------

struct OracleNode {
  std::vector<TokenId> prefix;   // all tokens up to this block boundary
  ModelState state;              // model state after the prefix
  int parent = -1;               // index into the previous level
  int first_child = -1;          // index into the next level
  int num_children = 0;
  double log_prefix_mass = 0.0;   // log gamma_j
  double log_suffix_value = 0.0;  // log z_{j+1}
  double prefix_marginal = 1.0;   // gamma_j * z_{j+1} / Z
};

struct OracleTables {
  double alpha = 1.0;
  int num_blocks = 0;
  int block_size = 0;
  double log_normalizer = 0.0;                 // log Z
  std::vector<std::vector<OracleNode>> levels; // levels[j]: prefixes of j blocks

  /** Index of the node with this exact prefix at the given level, or -1. */
  int find(int level, std::span<const TokenId> prefix) const;
};

/**
 * Enumerate the full target for `num_blocks` blocks of `block_size` tokens.
 * Throws EnumerationLimitError if the tree would exceed `node_cap` nodes.
 */
OracleTables enumerate_power_target(const AutoregressiveModel& model, double alpha,
                                    int num_blocks, int block_size,
                                    std::size_t node_cap = 1'000'000);

/**
 * Exact conditional over the children of one prefix node:
 * pi(next block | prefix) with support given by child indices in the next
 * level. Probabilities are exp(alpha*log p(block) + z_child - z_node).
 */
FiniteDistribution next_block_conditional(const OracleTables& tables, int level, int node);

/** Target distribution over full sequences (leaf level), support = leaf ids. */
FiniteDistribution sequence_target(const OracleTables& tables);

/**
 * Proposal probability of every full sequence under the token-level proposal
 * transform, aligned with the leaf level. Together with sequence_target this
 * gives exact chi^2(target || proposal) for convergence bounds.
 */
std::vector<double> proposal_sequence_log_probs(const AutoregressiveModel& model,
                                                const OracleTables& tables,
                                                const ProposalConfig& proposal);

/**
 * log of the horizon-truncated suffix mass sum_{paths <= horizon tokens}
 * prod p^alpha from `state`, with absorbed paths contributing their shorter
 * product. This is the quantity unbiased lookahead rollouts estimate.
 */
double log_truncated_power_mass(const AutoregressiveModel& model, const ModelState& state,
                                int horizon, double alpha);

nlohmann::json to_json(const OracleTables& tables);

}  // namespace apps
