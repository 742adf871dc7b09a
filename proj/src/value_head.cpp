#include "apps/value_head.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "apps/errors.hpp"
#include "apps/logspace.hpp"
#include "apps/rng.hpp"

namespace apps {

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

HeadParams HeadParams::zeros(int input_dim, int hidden_dim) {
  HeadParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.w1.assign(static_cast<std::size_t>(hidden_dim) * input_dim, 0.0);
  p.b1.assign(static_cast<std::size_t>(hidden_dim), 0.0);
  p.w2.assign(static_cast<std::size_t>(hidden_dim), 0.0);
  p.b2 = 0.0;
  return p;
}

HeadParams HeadParams::seeded(int input_dim, int hidden_dim, std::uint64_t seed) {
  HeadParams p = zeros(input_dim, hidden_dim);
  CounterRng rng(seed, stream_id(RngDomain::init, 0));
  const double s1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (double& w : p.w1) w = rng.next_gaussian() * s1;
  for (double& w : p.w2) w = rng.next_gaussian() * s2;
  return p;
}

void HeadParams::add_scaled(const HeadParams& other, double scale) {
  for (std::size_t i = 0; i < w1.size(); ++i) w1[i] += scale * other.w1[i];
  for (std::size_t i = 0; i < b1.size(); ++i) b1[i] += scale * other.b1[i];
  for (std::size_t i = 0; i < w2.size(); ++i) w2[i] += scale * other.w2[i];
  b2 += scale * other.b2;
}

void HeadParams::scale(double factor) {
  for (double& x : w1) x *= factor;
  for (double& x : b1) x *= factor;
  for (double& x : w2) x *= factor;
  b2 *= factor;
}

double head_forward(const HeadParams& p, std::span<const double> x) {
  double out = p.b2;
  for (int h = 0; h < p.hidden_dim; ++h) {
    double u = p.b1[static_cast<std::size_t>(h)];
    const double* row = p.w1.data() + static_cast<std::size_t>(h) * p.input_dim;
    for (int i = 0; i < p.input_dim; ++i) u += row[i] * x[static_cast<std::size_t>(i)];
    out += p.w2[static_cast<std::size_t>(h)] * std::tanh(u);
  }
  return out;
}

double head_forward_train(const HeadParams& p, std::span<const double> x,
                          std::span<const std::uint8_t> keep_mask, double keep_prob,
                          std::span<double> hidden) {
  double out = p.b2;
  for (int h = 0; h < p.hidden_dim; ++h) {
    double u = p.b1[static_cast<std::size_t>(h)];
    const double* row = p.w1.data() + static_cast<std::size_t>(h) * p.input_dim;
    for (int i = 0; i < p.input_dim; ++i) u += row[i] * x[static_cast<std::size_t>(i)];
    double a = std::tanh(u);
    a = keep_mask[static_cast<std::size_t>(h)] ? a / keep_prob : 0.0;
    hidden[static_cast<std::size_t>(h)] = a;
    out += p.w2[static_cast<std::size_t>(h)] * a;
  }
  return out;
}

void head_backward(const HeadParams& p, std::span<const double> x,
                   std::span<const double> hidden, std::span<const std::uint8_t> keep_mask,
                   double keep_prob, double d_out, HeadParams& grad) {
  grad.b2 += d_out;
  for (int h = 0; h < p.hidden_dim; ++h) {
    const double a = hidden[static_cast<std::size_t>(h)];
    grad.w2[static_cast<std::size_t>(h)] += d_out * a;
    if (!keep_mask[static_cast<std::size_t>(h)]) continue;
    // a = tanh(u)/keep_prob on kept units, so da/du = (1 - tanh(u)^2)/keep_prob
    // and tanh(u) = a * keep_prob.
    const double t = a * keep_prob;
    const double du = d_out * p.w2[static_cast<std::size_t>(h)] * (1.0 - t * t) / keep_prob;
    grad.b1[static_cast<std::size_t>(h)] += du;
    double* row = grad.w1.data() + static_cast<std::size_t>(h) * p.input_dim;
    for (int i = 0; i < p.input_dim; ++i) row[i] += du * x[static_cast<std::size_t>(i)];
  }
}

// ---------------------------------------------------------------------------
// Supervision data
// ---------------------------------------------------------------------------

GroupIndex build_group_index(const Dataset& data) {
  GroupIndex gi;
  std::vector<std::int64_t> ids;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::int64_t g = data[i].group;
    std::size_t slot = 0;
    bool found = false;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (ids[k] == g) {
        slot = k;
        found = true;
        break;
      }
    }
    if (!found) {
      ids.push_back(g);
      gi.groups.emplace_back();
      slot = ids.size() - 1;
    }
    gi.groups[slot].push_back(i);
  }
  return gi;
}

Dataset filter_degenerate_groups(const Dataset& data, double min_spread) {
  GroupIndex gi = build_group_index(data);
  Dataset out;
  for (const std::vector<std::size_t>& rows : gi.groups) {
    if (rows.size() < 2) continue;
    double lo = data[rows[0]].target, hi = lo;
    for (std::size_t r : rows) {
      lo = std::min(lo, data[r].target);
      hi = std::max(hi, data[r].target);
    }
    if (hi - lo < min_spread) continue;
    for (std::size_t r : rows) out.push_back(data[r]);
  }
  return out;
}

std::pair<Dataset, Dataset> split_by_group(const Dataset& data, double val_fraction,
                                           std::uint64_t seed) {
  GroupIndex gi = build_group_index(data);
  std::vector<std::size_t> order(gi.groups.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(seed, stream_id(RngDomain::dataset, 0));
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_double() * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  const std::size_t val_groups =
      static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(order.size())));
  Dataset train, val;
  for (std::size_t k = 0; k < order.size(); ++k) {
    Dataset& dst = (k < order.size() - val_groups) ? train : val;
    for (std::size_t r : gi.groups[order[k]]) dst.push_back(data[r]);
  }
  return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// Targets and losses
// ---------------------------------------------------------------------------

std::vector<double> effective_targets(std::span<const double> y, double eta, double clip_at,
                                      TargetTransform transform) {
  const std::size_t n = y.size();
  std::vector<double> out(n, 0.0);
  if (n == 0) return out;
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(n);
  if (transform == TargetTransform::decode_aligned) {
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = eta * std::clamp(y[i] - mean, -clip_at, clip_at);
    }
  } else {
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    const double denom = std::max(sd, 1e-9);
    for (std::size_t i = 0; i < n; ++i) out[i] = (y[i] - mean) / denom;
  }
  return out;
}

double group_emphasis(std::span<const double> targets_eff, double clip_at) {
  if (targets_eff.size() < 2) return 1.0;
  std::vector<double> sorted(targets_eff.begin(), targets_eff.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  const double spread = sorted.front() - sorted.back();
  const double margin = sorted[0] - sorted[1];
  const double unit = std::max(clip_at, 1e-9);
  return 1.0 + std::min(spread, unit) / unit + std::min(margin, unit) / unit;
}

namespace {

double huber(double e) { return std::abs(e) < 1.0 ? 0.5 * e * e : std::abs(e) - 0.5; }
double huber_grad(double e) { return std::abs(e) < 1.0 ? e : (e > 0.0 ? 1.0 : -1.0); }

std::vector<double> softmax(std::span<const double> v) {
  std::vector<double> s(v.begin(), v.end());
  double m = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double& x : s) {
    x = std::exp(x - m);
    z += x;
  }
  for (double& x : s) x /= z;
  return s;
}

}  // namespace

GroupLoss composite_group_loss(std::span<const double> pred_raw,
                               std::span<const double> targets_eff, double eta, double clip_at,
                               TargetTransform transform, const LossWeights& weights,
                               double group_weight) {
  const std::size_t n = pred_raw.size();
  GroupLoss gl;
  gl.d_pred.assign(n, 0.0);
  if (n == 0) return gl;

  // Predictions go through the same transform as targets. d_t[i][k] entries of
  // the Jacobian are eta * phi'(c_i) * (delta_ik - 1/n) in the decode-aligned
  // case; the standardized case treats the group sd as a constant scale.
  double mean = 0.0;
  for (double v : pred_raw) mean += v;
  mean /= static_cast<double>(n);
  std::vector<double> p(n, 0.0);        // transformed predictions
  std::vector<double> dphi(n, 1.0);     // pointwise transform slope
  double scale = eta;
  bool sd_floored = false;
  if (transform == TargetTransform::decode_aligned) {
    for (std::size_t i = 0; i < n; ++i) {
      const double c = pred_raw[i] - mean;
      p[i] = eta * std::clamp(c, -clip_at, clip_at);
      dphi[i] = std::abs(c) < clip_at ? 1.0 : 0.0;
    }
  } else {
    double var = 0.0;
    for (double v : pred_raw) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    sd_floored = sd < 1e-9;
    scale = 1.0 / std::max(sd, 1e-9);
    for (std::size_t i = 0; i < n; ++i) p[i] = (pred_raw[i] - mean) * scale;
  }

  std::vector<double> dp(n, 0.0);  // d loss / d transformed prediction
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);

  // Pointwise smooth-L1.
  if (weights.pointwise != 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      const double e = p[i] - targets_eff[i];
      loss += weights.pointwise * inv_n * huber(e);
      dp[i] += weights.pointwise * inv_n * huber_grad(e);
    }
  }

  // Group-centered smooth-L1.
  if (weights.centered != 0.0) {
    double pm = 0.0, tm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      pm += p[i];
      tm += targets_eff[i];
    }
    pm *= inv_n;
    tm *= inv_n;
    double gsum = 0.0;
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double e = (p[i] - pm) - (targets_eff[i] - tm);
      loss += weights.centered * inv_n * huber(e);
      g[i] = weights.centered * inv_n * huber_grad(e);
      gsum += g[i];
    }
    for (std::size_t i = 0; i < n; ++i) dp[i] += g[i] - gsum * inv_n;
  }

  // Listwise cross-entropy between softmaxes.
  if (weights.listwise != 0.0 && n > 1) {
    std::vector<double> sp = softmax(p);
    std::vector<double> st = softmax(targets_eff);
    for (std::size_t i = 0; i < n; ++i) {
      loss -= weights.listwise * st[i] * std::log(std::max(sp[i], 1e-300));
      dp[i] += weights.listwise * (sp[i] - st[i]);
    }
  }

  // Pairwise logistic ranking over pairs with strictly ordered targets.
  if (weights.pairwise != 0.0 && n > 1) {
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < n; ++k) {
        if (targets_eff[i] > targets_eff[k] + 1e-12) ++pairs;
      }
    }
    if (pairs > 0) {
      const double w = weights.pairwise / static_cast<double>(pairs);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
          if (!(targets_eff[i] > targets_eff[k] + 1e-12)) continue;
          const double d = p[i] - p[k];
          // log(1 + exp(-d)), stable on both sides.
          loss += w * (d > 0.0 ? std::log1p(std::exp(-d)) : -d + std::log1p(std::exp(d)));
          const double sig = 1.0 / (1.0 + std::exp(d));  // sigmoid(-d)
          dp[i] -= w * sig;
          dp[k] += w * sig;
        }
      }
    }
  }

  // Top-1 cross-entropy against the argmax target (first maximum).
  if (weights.top_one != 0.0 && n > 1) {
    const std::size_t star = static_cast<std::size_t>(
        std::max_element(targets_eff.begin(), targets_eff.end()) - targets_eff.begin());
    std::vector<double> sp = softmax(p);
    loss -= weights.top_one * std::log(std::max(sp[star], 1e-300));
    for (std::size_t i = 0; i < n; ++i) {
      dp[i] += weights.top_one * (sp[i] - (i == star ? 1.0 : 0.0));
    }
  }

  // Chain through the transform back to raw predictions.
  if (transform == TargetTransform::decode_aligned) {
    double coupled = 0.0;
    for (std::size_t i = 0; i < n; ++i) coupled += dp[i] * dphi[i];
    for (std::size_t i = 0; i < n; ++i) {
      gl.d_pred[i] = group_weight * scale * (dp[i] * dphi[i] - coupled * inv_n);
    }
  } else {
    // p_i = (x_i - mean) / sd: the sd term feeds back into every coordinate
    // unless the sd floor was active (then sd is a constant).
    double dp_mean = 0.0, dp_dot_p = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dp_mean += dp[i] * inv_n;
      dp_dot_p += dp[i] * p[i] * inv_n;
    }
    const bool floored = sd_floored;
    for (std::size_t i = 0; i < n; ++i) {
      double g = dp[i] - dp_mean;
      if (!floored) g -= p[i] * dp_dot_p;
      gl.d_pred[i] = group_weight * scale * g;
    }
  }
  gl.loss = group_weight * loss;
  return gl;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

HeadMetrics evaluate_head(const HeadParams& params, const Dataset& data, double eta,
                          double clip_at, TargetTransform transform) {
  GroupIndex gi = build_group_index(data);
  HeadMetrics m;
  double top1 = 0.0, pair_acc = 0.0, pearson = 0.0, mae = 0.0;
  int counted = 0;
  for (const std::vector<std::size_t>& rows : gi.groups) {
    const std::size_t n = rows.size();
    if (n < 2) continue;
    std::vector<double> raw_pred(n), raw_y(n);
    for (std::size_t k = 0; k < n; ++k) {
      raw_pred[k] = head_forward(params, data[rows[k]].features);
      raw_y[k] = data[rows[k]].target;
    }
    std::vector<double> t = effective_targets(raw_y, eta, clip_at, transform);
    std::vector<double> p = effective_targets(raw_pred, eta, clip_at, transform);

    const std::size_t best_t = static_cast<std::size_t>(
        std::max_element(t.begin(), t.end()) - t.begin());
    const std::size_t best_p = static_cast<std::size_t>(
        std::max_element(p.begin(), p.end()) - p.begin());
    top1 += best_t == best_p ? 1.0 : 0.0;

    double correct = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < n; ++k) {
        if (!(t[i] > t[k] + 1e-12)) continue;
        ++pairs;
        if (p[i] > p[k]) {
          correct += 1.0;
        } else if (p[i] == p[k]) {
          correct += 0.5;  // prediction ties earn half credit
        }
      }
    }
    if (pairs > 0) pair_acc += correct / static_cast<double>(pairs);

    double pm = 0.0, tm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      pm += p[i];
      tm += t[i];
    }
    pm /= static_cast<double>(n);
    tm /= static_cast<double>(n);
    double cov = 0.0, vp = 0.0, vt = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      cov += (p[i] - pm) * (t[i] - tm);
      vp += (p[i] - pm) * (p[i] - pm);
      vt += (t[i] - tm) * (t[i] - tm);
    }
    if (vp > 0.0 && vt > 0.0) pearson += cov / std::sqrt(vp * vt);

    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) err += std::abs(p[i] - t[i]);
    mae += err / static_cast<double>(n);

    ++counted;
  }
  if (counted > 0) {
    const double inv = 1.0 / static_cast<double>(counted);
    m.top_one_agreement = top1 * inv;
    m.pairwise_accuracy = pair_acc * inv;
    m.pearson = pearson * inv;
    m.pointwise_mae = mae * inv;
  }
  m.groups = counted;
  return m;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct AdamW {
  HeadParams m, v;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long steps = 0;

  explicit AdamW(const HeadParams& like)
      : m(HeadParams::zeros(like.input_dim, like.hidden_dim)),
        v(HeadParams::zeros(like.input_dim, like.hidden_dim)) {}

  void step(HeadParams& params, const HeadParams& grad, double lr, double weight_decay) {
    ++steps;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    auto update = [&](double& p, double& mm, double& vv, double g, bool decay) {
      mm = beta1 * mm + (1.0 - beta1) * g;
      vv = beta2 * vv + (1.0 - beta2) * g * g;
      const double mh = mm / bc1;
      const double vh = vv / bc2;
      p -= lr * (mh / (std::sqrt(vh) + eps));
      if (decay) p -= lr * weight_decay * p;
    };
    for (std::size_t i = 0; i < params.w1.size(); ++i) {
      update(params.w1[i], m.w1[i], v.w1[i], grad.w1[i], true);
    }
    for (std::size_t i = 0; i < params.b1.size(); ++i) {
      update(params.b1[i], m.b1[i], v.b1[i], grad.b1[i], false);
    }
    for (std::size_t i = 0; i < params.w2.size(); ++i) {
      update(params.w2[i], m.w2[i], v.w2[i], grad.w2[i], true);
    }
    update(params.b2, m.b2, v.b2, grad.b2, false);
  }
};

double dataset_loss(const HeadParams& params, const Dataset& data, const GroupIndex& gi,
                    const TrainConfig& cfg) {
  double total = 0.0;
  int groups = 0;
  for (const std::vector<std::size_t>& rows : gi.groups) {
    const std::size_t n = rows.size();
    std::vector<double> pred(n), y(n);
    for (std::size_t k = 0; k < n; ++k) {
      pred[k] = head_forward(params, data[rows[k]].features);
      y[k] = data[rows[k]].target;
    }
    std::vector<double> t = effective_targets(y, cfg.eta, cfg.clip_at, cfg.transform);
    GroupLoss gl = composite_group_loss(pred, t, cfg.eta, cfg.clip_at, cfg.transform,
                                        cfg.loss_weights, group_emphasis(t, cfg.clip_at));
    total += gl.loss;
    ++groups;
  }
  return groups > 0 ? total / groups : 0.0;
}

}  // namespace

TrainResult train_head(const Dataset& train, const Dataset& val, const TrainConfig& cfg) {
  if (train.empty()) throw ConfigError("train_head: empty training set");
  const int input_dim = static_cast<int>(train.front().features.size());
  for (const BoundarySample& s : train) {
    if (static_cast<int>(s.features.size()) != input_dim) {
      throw ConfigError("train_head: inconsistent feature dimensions");
    }
  }

  HeadParams params = HeadParams::seeded(input_dim, cfg.hidden_dim, cfg.seed);
  HeadParams ema = params;
  AdamW opt(params);

  GroupIndex train_gi = build_group_index(train);
  GroupIndex val_gi = build_group_index(val);
  const std::size_t num_groups = train_gi.groups.size();

  // Precompute effective targets and emphasis per group (targets are fixed).
  std::vector<std::vector<double>> group_targets(num_groups);
  std::vector<double> group_w(num_groups);
  for (std::size_t g = 0; g < num_groups; ++g) {
    std::vector<double> y;
    for (std::size_t r : train_gi.groups[g]) y.push_back(train[r].target);
    group_targets[g] = effective_targets(y, cfg.eta, cfg.clip_at, cfg.transform);
    group_w[g] = group_emphasis(group_targets[g], cfg.clip_at);
  }

  const std::size_t batches_per_epoch = std::max<std::size_t>(
      1, (train.size() + static_cast<std::size_t>(cfg.batch_rows) - 1) /
             static_cast<std::size_t>(cfg.batch_rows));
  const double total_steps =
      static_cast<double>(batches_per_epoch) * static_cast<double>(cfg.max_epochs);
  const double keep_prob = 1.0 - cfg.dropout;

  TrainResult result;
  double best_val_loss = std::numeric_limits<double>::infinity();
  double best_rank = -1.0, best_rank_tie = -1.0;
  int since_improvement = 0;
  long global_step = 0;

  std::vector<double> hidden(static_cast<std::size_t>(cfg.hidden_dim));
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(cfg.hidden_dim));

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    // Group-preserving batches over a seeded shuffle of group order.
    std::vector<std::size_t> order(num_groups);
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng shuffle_rng(cfg.seed, stream_id(RngDomain::dataset,
                                               static_cast<std::uint64_t>(epoch) + 1));
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j =
          static_cast<std::size_t>(shuffle_rng.next_double() * static_cast<double>(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }

    double epoch_loss = 0.0;
    int epoch_groups = 0;
    std::size_t cursor = 0;
    int batch_index = 0;
    while (cursor < order.size()) {
      // Collect whole groups until the batch reaches the row target.
      std::vector<std::size_t> batch;
      std::size_t rows = 0;
      while (cursor < order.size() &&
             (batch.empty() || rows < static_cast<std::size_t>(cfg.batch_rows))) {
        batch.push_back(order[cursor]);
        rows += train_gi.groups[order[cursor]].size();
        ++cursor;
      }

      const double lr =
          cfg.peak_lr * 0.5 *
          (1.0 + std::cos(3.14159265358979323846 *
                          std::min(1.0, static_cast<double>(global_step) / total_steps)));

      HeadParams grad = HeadParams::zeros(input_dim, cfg.hidden_dim);
      CounterRng drop_rng(cfg.seed, stream_id(RngDomain::dropout,
                                              static_cast<std::uint64_t>(epoch),
                                              static_cast<std::uint64_t>(batch_index)));
      double batch_loss = 0.0;
      std::vector<std::vector<double>> batch_hidden;
      std::vector<std::vector<std::uint8_t>> batch_mask;
      for (std::size_t g : batch) {
        const std::vector<std::size_t>& rows_g = train_gi.groups[g];
        const std::size_t n = rows_g.size();
        std::vector<double> pred(n);
        batch_hidden.assign(n, std::vector<double>(static_cast<std::size_t>(cfg.hidden_dim)));
        batch_mask.assign(n, std::vector<std::uint8_t>(static_cast<std::size_t>(cfg.hidden_dim)));
        for (std::size_t k = 0; k < n; ++k) {
          for (int h = 0; h < cfg.hidden_dim; ++h) {
            batch_mask[k][static_cast<std::size_t>(h)] =
                cfg.dropout > 0.0 ? (drop_rng.next_double() >= cfg.dropout ? 1 : 0) : 1;
          }
          pred[k] = head_forward_train(params, train[rows_g[k]].features, batch_mask[k],
                                       keep_prob, batch_hidden[k]);
        }
        GroupLoss gl = composite_group_loss(pred, group_targets[g], cfg.eta, cfg.clip_at,
                                            cfg.transform, cfg.loss_weights, group_w[g]);
        batch_loss += gl.loss;
        for (std::size_t k = 0; k < n; ++k) {
          head_backward(params, train[rows_g[k]].features, batch_hidden[k], batch_mask[k],
                        keep_prob, gl.d_pred[k] / static_cast<double>(batch.size()), grad);
        }
      }
      batch_loss /= static_cast<double>(batch.size());
      epoch_loss += batch_loss * static_cast<double>(batch.size());
      epoch_groups += static_cast<int>(batch.size());

      opt.step(params, grad, lr, cfg.weight_decay);
      ema.scale(cfg.ema_decay);
      ema.add_scaled(params, 1.0 - cfg.ema_decay);
      ++global_step;
      ++batch_index;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_groups > 0 ? epoch_loss / epoch_groups : 0.0;
    stats.val_loss = dataset_loss(ema, val, val_gi, cfg);
    stats.lr = cfg.peak_lr * 0.5 *
               (1.0 + std::cos(3.14159265358979323846 *
                               std::min(1.0, static_cast<double>(global_step) / total_steps)));
    stats.val_metrics = evaluate_head(ema, val, cfg.eta, cfg.clip_at, cfg.transform);
    result.history.push_back(stats);

    const double rank = stats.val_metrics.top_one_agreement;
    const double tie = stats.val_metrics.pairwise_accuracy;
    if (rank > best_rank || (rank == best_rank && tie > best_rank_tie)) {
      best_rank = rank;
      best_rank_tie = tie;
      result.params = ema;
      result.val_metrics = stats.val_metrics;
      result.best_epoch = epoch;
    }

    if (best_val_loss - stats.val_loss >= cfg.min_improvement) {
      best_val_loss = stats.val_loss;
      since_improvement = 0;
    } else {
      ++since_improvement;
      if (since_improvement >= cfg.patience) break;
    }
  }

  if (result.params.input_dim == 0) {
    result.params = ema;
    result.val_metrics = evaluate_head(ema, val, cfg.eta, cfg.clip_at, cfg.transform);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

nlohmann::json to_json(const HeadParams& params) {
  return {{"input_dim", params.input_dim}, {"hidden_dim", params.hidden_dim},
          {"w1", params.w1},               {"b1", params.b1},
          {"w2", params.w2},               {"b2", params.b2}};
}

HeadParams head_from_json(const nlohmann::json& j) {
  try {
    HeadParams p;
    p.input_dim = j.at("input_dim").get<int>();
    p.hidden_dim = j.at("hidden_dim").get<int>();
    p.w1 = j.at("w1").get<std::vector<double>>();
    p.b1 = j.at("b1").get<std::vector<double>>();
    p.w2 = j.at("w2").get<std::vector<double>>();
    p.b2 = j.at("b2").get<double>();
    if (p.input_dim < 1 || p.hidden_dim < 1 ||
        p.w1.size() != static_cast<std::size_t>(p.input_dim) * p.hidden_dim ||
        p.b1.size() != static_cast<std::size_t>(p.hidden_dim) ||
        p.w2.size() != static_cast<std::size_t>(p.hidden_dim)) {
      throw ConfigError(
          "value head: parameter shapes disagree with declared dimensions "
          "(expected w1 of hidden_dim*input_dim, b1 and w2 of hidden_dim)");
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("value head: ") + e.what());
  }
}

nlohmann::json to_json(const HeadMetrics& m) {
  return {{"top_one_agreement", m.top_one_agreement},
          {"pairwise_accuracy", m.pairwise_accuracy},
          {"pearson", m.pearson},
          {"pointwise_mae", m.pointwise_mae},
          {"groups", m.groups}};
}

}  // namespace apps
