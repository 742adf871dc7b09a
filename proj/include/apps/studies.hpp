#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "apps/engine.hpp"
#include "apps/model.hpp"
#include "apps/oracle.hpp"
#include "apps/potential.hpp"
#include "apps/value_head.hpp"

// ============================================================================
// Experiment harness: full run descriptions, reference baselines, and the
// three standing studies (estimator convergence, resampling bias, planted-mode
// recovery), plus supervision collection for the learned potential.
//
// Replicated studies derive the seed of replicate r as base_seed + r and
// reduce results in replicate order, so reports are byte-identical for any
// worker count.
// ============================================================================

namespace apps {

// ---------------------------------------------------------------------------
// Full run description
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  ToyModelSpec model;
  EngineConfig engine;
  std::string apf = "none";  // "none" | "rollout" | "learned"
  RolloutConfig rollout;
  std::string head_path;     // learned potential parameters (JSON)
};

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const nlohmann::json& j);

/**
 * Build the configured selection potential; null for "none". The sink, when
 * given, receives rollout supervision groups.
 */
std::unique_ptr<SelectionPotential> make_potential(const ExperimentConfig& cfg,
                                                   SupervisionSink* sink = nullptr);

RunResult run_experiment(const ExperimentConfig& cfg, SupervisionSink* sink = nullptr);

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

enum class BaselineKind { ancestral, low_temperature, best_of_n };

struct BaselineResult {
  std::vector<TokenId> completion;
  double log_p = 0.0;  // base-model log probability of the completion
  int draws = 1;
};

BaselineResult run_baseline(const AutoregressiveModel& model, BaselineKind kind,
                            double alpha, int max_tokens, int n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Convergence study: importance-only estimates against the enumerated target
// ---------------------------------------------------------------------------

struct ConvergenceStudyConfig {
  ToyModelSpec model{.kind = "random-logit", .vocab = 3, .seed = 11, .order = 2};
  double alpha = 4.0;
  int num_blocks = 2;
  int block_size = 1;
  ProposalConfig proposal{1.0, 0, 1.0};
  std::vector<int> particle_grid{16, 64, 256, 1024, 4096};
  int replicates = 200;
  int test_block_value = -1;  // last-block value for the indicator; -1 auto-picks
  std::uint64_t seed = 1;
  ExecPolicy exec;
};

struct ConvergenceCell {
  int particles = 0;
  double mean_abs_error = 0.0;
  double std_error = 0.0;
  double bound = 0.0;  // (4/sqrt(P)) sqrt(1+chi2) + (8/P) chi2
};

struct ConvergenceReport {
  std::vector<ConvergenceCell> cells;
  double chi_square = 0.0;   // chi2(target || proposal) over full sequences
  double target_value = 0.0; // exact expectation of the indicator
  int test_block_value = 0;
  double slope = 0.0;        // least-squares slope of log error vs log particles
};

ConvergenceReport convergence_study(const ConvergenceStudyConfig& cfg);
ConvergenceStudyConfig convergence_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ConvergenceReport& rep);
std::string to_csv(const ConvergenceReport& rep);

// ---------------------------------------------------------------------------
// Bias study: heuristic vs corrected resampling under selection potentials
// ---------------------------------------------------------------------------

struct BiasStudyConfig {
  ToyModelSpec model{.kind = "random-logit", .vocab = 3, .seed = 7, .order = 2};
  double alpha = 4.0;
  int num_blocks = 3;
  int block_size = 1;
  ProposalConfig proposal{1.0, 0, 1.0};
  int particles = 512;
  int replicates = 200;
  double kappa = 1.0;
  double eta = 0.5;
  ResampleScheme resampling = ResampleScheme::systematic;
  double potential_scale = 1.0;  // for the pseudo-random potential
  std::vector<std::string> potentials{"oracle", "inverse-oracle", "hash"};
  std::vector<std::string> corrections{"heuristic", "corrected"};
  std::uint64_t seed = 2;
  ExecPolicy exec;
};

struct BiasCell {
  std::string potential;
  std::string correction;
  double mean_tv = 0.0;  // TV between weighted empirical and exact sequence law
  double std_error = 0.0;
};

struct BiasReport {
  std::vector<BiasCell> cells;
};

BiasReport bias_study(const BiasStudyConfig& cfg);
BiasStudyConfig bias_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const BiasReport& rep);
std::string to_csv(const BiasReport& rep);

// ---------------------------------------------------------------------------
// Planted-mode recovery study
// ---------------------------------------------------------------------------

struct PlantedStudyConfig {
  ToyModelSpec model{.kind = "planted-mode", .vocab = 3, .seed = 0, .trap_token = 0,
                     .trap_prob = 0.1, .mode_prob = 0.9, .depth = 4};
  double alpha = 4.0;
  ProposalConfig proposal{1.0, 0, 1.0};  // exploration needs the untempered proposal
  int particles = 16;
  int replicates = 500;
  double kappa = 1.0;
  double eta = 0.5;
  int rollouts = 2;
  int horizon = 3;
  std::vector<std::string> methods{"p-only", "rollout"};  // optionally "learned"
  std::string head_path;
  std::uint64_t seed = 3;
  ExecPolicy exec;
};

struct PlantedCell {
  std::string method;
  int recoveries = 0;
  int replicates = 0;
  double rate = 0.0;
  double std_error = 0.0;  // binomial
};

struct PlantedReport {
  std::vector<PlantedCell> cells;
};

PlantedReport planted_study(const PlantedStudyConfig& cfg);
PlantedStudyConfig planted_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const PlantedReport& rep);
std::string to_csv(const PlantedReport& rep);

// ---------------------------------------------------------------------------
// Supervision collection
// ---------------------------------------------------------------------------

/**
 * Run `runs` rollout-potential experiments with seeds base+0..base+runs-1 and
 * gather every scored boundary group. Row order follows (run, boundary, slot).
 */
Dataset collect_supervision(const ExperimentConfig& base, int runs);

// ---------------------------------------------------------------------------
// Small numeric helpers shared by studies and tests
// ---------------------------------------------------------------------------

/** Least-squares slope of y against x. */
double least_squares_slope(std::span<const double> x, std::span<const double> y);

/**
 * Weighted empirical distribution of final sequences over oracle leaves.
 * Throws if a particle's sequence is missing from the tables.
 */
std::vector<double> weighted_leaf_distribution(const RunResult& result,
                                               const OracleTables& tables);

}  // namespace apps
