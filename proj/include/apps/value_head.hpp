#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

// ============================================================================
// Learned boundary value head.
//
// A small MLP (input -> tanh hidden -> scalar) distilled from rollout scores.
// Supervision arrives in boundary groups: all particles scored together at one
// boundary form a group, and the losses care about within-group ordering far
// more than absolute scale. Targets are passed through a decode-aligned
// transform (center within the group, clip, scale) so the head learns the
// quantity that is actually exponentiated during selection.
//
// Training is plain AdamW with cosine decay, dropout on the hidden layer,
// an EMA shadow of the parameters for evaluation, and early stopping on
// validation loss with checkpoint selection by ranking agreement. All
// gradients are analytic and checked against finite differences in tests.
// ============================================================================

namespace apps {

// ---------------------------------------------------------------------------
// Parameters and forward/backward
// ---------------------------------------------------------------------------

struct HeadParams {
  int input_dim = 0;
  int hidden_dim = 0;
  std::vector<double> w1;  // hidden_dim x input_dim, row-major
  std::vector<double> b1;  // hidden_dim
  std::vector<double> w2;  // hidden_dim
  double b2 = 0.0;

  static HeadParams zeros(int input_dim, int hidden_dim);
  static HeadParams seeded(int input_dim, int hidden_dim, std::uint64_t seed);

  std::size_t size() const { return w1.size() + b1.size() + w2.size() + 1; }
  /** Flat view helpers for optimizers; order w1, b1, w2, b2. */
  void add_scaled(const HeadParams& other, double scale);
  void scale(double factor);
};

/** Deterministic forward pass (no dropout). */
double head_forward(const HeadParams& p, std::span<const double> x);

/**
 * Forward with an externally supplied keep mask on hidden units (inverted
 * dropout: kept activations are scaled by 1/keep_prob). `hidden` receives the
 * post-dropout activations for reuse in the backward pass.
 */
double head_forward_train(const HeadParams& p, std::span<const double> x,
                          std::span<const std::uint8_t> keep_mask, double keep_prob,
                          std::span<double> hidden);

/**
 * Accumulate d(loss)/d(params) into `grad` given d(loss)/d(output). `hidden`
 * must come from the matching forward call.
 */
void head_backward(const HeadParams& p, std::span<const double> x,
                   std::span<const double> hidden, std::span<const std::uint8_t> keep_mask,
                   double keep_prob, double d_out, HeadParams& grad);

// ---------------------------------------------------------------------------
// Supervision data
// ---------------------------------------------------------------------------

struct BoundarySample {
  std::vector<double> features;
  double target = 0.0;      // raw log psi from rollouts
  std::int64_t group = 0;   // boundary group id
};

using Dataset = std::vector<BoundarySample>;

/** Contiguous index ranges per group, in order of first appearance. */
struct GroupIndex {
  std::vector<std::vector<std::size_t>> groups;
};
GroupIndex build_group_index(const Dataset& data);

/**
 * Drop groups that carry no ranking signal: fewer than two rows, or a target
 * spread below `min_spread`.
 */
Dataset filter_degenerate_groups(const Dataset& data, double min_spread = 1e-9);

/** Deterministic group-level split; the second part holds `val_fraction`. */
std::pair<Dataset, Dataset> split_by_group(const Dataset& data, double val_fraction,
                                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Targets, losses, metrics
// ---------------------------------------------------------------------------

enum class TargetTransform { decode_aligned, standardized };

/**
 * Decode-aligned transform: eta * clip(y - mean(y), -clip_at, clip_at),
 * applied within one group. The standardized variant centers and divides by
 * the group standard deviation instead.
 */
std::vector<double> effective_targets(std::span<const double> y, double eta, double clip_at,
                                      TargetTransform transform = TargetTransform::decode_aligned);

struct LossWeights {
  double pointwise = 1.0;
  double centered = 1.0;
  double listwise = 1.0;
  double pairwise = 1.0;
  double top_one = 1.0;
};

/**
 * Composite ranking loss for one group. Raw predictions go through the same
 * transform as targets; the returned gradient is with respect to the raw
 * predictions. `targets_eff` must already be transformed.
 */
struct GroupLoss {
  double loss = 0.0;
  std::vector<double> d_pred;
};
GroupLoss composite_group_loss(std::span<const double> pred_raw,
                               std::span<const double> targets_eff, double eta, double clip_at,
                               TargetTransform transform, const LossWeights& weights,
                               double group_weight);

/** Emphasis weight from target spread and top margin, in [1, 3]. */
double group_emphasis(std::span<const double> targets_eff, double clip_at);

struct HeadMetrics {
  double top_one_agreement = 0.0;
  double pairwise_accuracy = 0.0;  // ties in predictions earn half credit
  double pearson = 0.0;            // per group against effective targets, averaged
  double pointwise_mae = 0.0;
  int groups = 0;
};

HeadMetrics evaluate_head(const HeadParams& params, const Dataset& data, double eta,
                          double clip_at,
                          TargetTransform transform = TargetTransform::decode_aligned);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  int hidden_dim = 64;
  double eta = 0.4;          // distillation scale inside the transform
  double clip_at = 5.0;
  TargetTransform transform = TargetTransform::decode_aligned;
  LossWeights loss_weights;
  int batch_rows = 512;      // group-preserving target batch size
  double peak_lr = 0.01;
  double weight_decay = 0.05;
  double dropout = 0.10;
  double ema_decay = 0.995;
  int max_epochs = 60;
  int patience = 12;
  double min_improvement = 1e-3;
  std::uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  HeadMetrics val_metrics;
};

struct TrainResult {
  HeadParams params;  // EMA checkpoint with the best validation ranking
  std::vector<EpochStats> history;
  HeadMetrics val_metrics;
  int best_epoch = 0;
};

TrainResult train_head(const Dataset& train, const Dataset& val, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

nlohmann::json to_json(const HeadParams& params);
/** Throws ConfigError on malformed input or dimension mismatch. */
HeadParams head_from_json(const nlohmann::json& j);

nlohmann::json to_json(const HeadMetrics& m);

}  // namespace apps
