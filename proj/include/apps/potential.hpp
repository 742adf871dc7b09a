#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "apps/engine.hpp"
#include "apps/model.hpp"
#include "apps/oracle.hpp"
#include "apps/proposal.hpp"
#include "apps/value_head.hpp"

// ============================================================================
// Selection potentials.
//
// A potential scores each particle's future promise at a block boundary.
// Scores enter resampling as log_weight + strength * log_psi; they bias which
// lineages survive but (in corrected mode) are compensated exactly, so any
// positive potential is admissible. Good potentials approximate the suffix
// value of the particle's state.
// ============================================================================

namespace apps {

struct PotentialContext {
  const AutoregressiveModel& model;
  double alpha;
  ProposalConfig proposal;  // run proposal; rollouts may override
  std::uint64_t seed;
  int boundary;             // 1-based block boundary index
  ExecPolicy exec;
};

struct PotentialResult {
  std::vector<double> log_psi;       // one per particle, 0 for frozen/skipped
  long long lookahead_tokens = 0;    // total tokens simulated to produce it
};

class SelectionPotential {
 public:
  virtual ~SelectionPotential() = default;
  virtual PotentialResult evaluate(std::span<const Particle> population,
                                   const PotentialContext& ctx) = 0;
};

/** psi = 1 everywhere: selection reduces to plain weight-based resampling. */
class UnitPotential final : public SelectionPotential {
 public:
  PotentialResult evaluate(std::span<const Particle> population,
                           const PotentialContext& ctx) override;
};

// ---------------------------------------------------------------------------
// Rollout potential
// ---------------------------------------------------------------------------

/** Sink for (features, score) supervision emitted during rollout scoring. */
class SupervisionSink {
 public:
  virtual ~SupervisionSink() = default;
  /** One boundary group: feature rows and log psi per live particle. */
  virtual void accept_group(std::int64_t group_id,
                            const std::vector<std::vector<double>>& features,
                            const std::vector<double>& log_psi) = 0;
};

struct RolloutConfig {
  int rollouts = 2;
  int horizon = 16;                         // tokens per rollout
  std::optional<ProposalConfig> proposal;   // defaults to the run proposal
  int top_m = 0;  // score only the m highest-weight states; 0 scores all
};

/**
 * Monte Carlo lookahead: from each particle's state, sample R short
 * continuations from the proposal and score s = sum(alpha*log p - log q).
 * log psi is the log-mean-exp of the R scores, an unbiased estimate (in
 * expectation of exp) of the horizon-truncated suffix mass.
 *
 * Estimates are cached per distinct model state within a boundary, so
 * particles sharing a state share one estimate (and its cost).
 */
class RolloutPotential final : public SelectionPotential {
 public:
  explicit RolloutPotential(RolloutConfig cfg, SupervisionSink* sink = nullptr)
      : cfg_(cfg), sink_(sink) {}

  PotentialResult evaluate(std::span<const Particle> population,
                           const PotentialContext& ctx) override;

  /**
   * Raw rollout scores for one state: count samples of
   * sum(alpha*log p - log q) over at most `horizon` tokens. When `tokens_out`
   * is non-null, the number of simulated tokens is added to it.
   */
  static std::vector<double> rollout_scores(const AutoregressiveModel& model,
                                            const ModelState& state, int count, int horizon,
                                            double alpha, const ProposalConfig& proposal,
                                            std::uint64_t seed, int boundary,
                                            std::uint32_t state_slot, const ExecPolicy& exec,
                                            long long* tokens_out = nullptr);

 private:
  RolloutConfig cfg_;
  SupervisionSink* sink_;
};

// ---------------------------------------------------------------------------
// Learned potential
// ---------------------------------------------------------------------------

/** log psi = value-head output on the particle's feature vector. */
class LearnedPotential final : public SelectionPotential {
 public:
  explicit LearnedPotential(HeadParams params) : params_(std::move(params)) {}

  PotentialResult evaluate(std::span<const Particle> population,
                           const PotentialContext& ctx) override;

 private:
  HeadParams params_;
};

// ---------------------------------------------------------------------------
// Reference potentials for studies and tests
// ---------------------------------------------------------------------------

/**
 * Exact suffix value from oracle tables (or its inverse, a deliberately
 * adversarial potential). Particles are matched to table nodes by prefix.
 */
class OracleSuffixPotential final : public SelectionPotential {
 public:
  OracleSuffixPotential(const OracleTables& tables, bool invert = false)
      : tables_(&tables), invert_(invert) {}

  PotentialResult evaluate(std::span<const Particle> population,
                           const PotentialContext& ctx) override;

 private:
  const OracleTables* tables_;
  bool invert_;
};

/**
 * Deterministic pseudo-random positive potential: log psi uniform in
 * [-scale, scale], a pure function of (seed, boundary, prefix). Arbitrary but
 * admissible, used to exercise the resampling correction.
 */
class HashPotential final : public SelectionPotential {
 public:
  explicit HashPotential(double scale = 1.0) : scale_(scale) {}

  PotentialResult evaluate(std::span<const Particle> population,
                           const PotentialContext& ctx) override;

 private:
  double scale_;
};

}  // namespace apps
