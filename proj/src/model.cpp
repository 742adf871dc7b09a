#include "apps/model.hpp"

#include <cmath>
#include <stdexcept>

#include "apps/errors.hpp"
#include "apps/logspace.hpp"
#include "apps/rng.hpp"

namespace apps {
namespace {

// Model-table randomness is keyed off a salted copy of the spec seed so the
// same numeric seed used for engine decisions cannot alias a logit stream.
constexpr std::uint64_t kModelSeedSalt = 0x6C6F676974736565ull;

void log_softmax_inplace(std::vector<double>& v) {
  double lse = log_sum_exp(v);
  for (double& x : v) x -= lse;
}

// 64-bit FNV-1a over the context window, used as a stream id for hashed rows.
std::uint64_t window_stream(std::span<const TokenId> window) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (TokenId t : window) {
    h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(t)) + 1u;
    h *= 0x100000001B3ull;
  }
  return h;
}

std::vector<double> seeded_row(std::uint64_t seed, std::uint64_t stream, int vocab) {
  std::vector<double> logits(static_cast<std::size_t>(vocab), 0.0);
  if (seed != 0) {
    CounterRng rng(seed ^ kModelSeedSalt, stream);
    for (double& x : logits) x = rng.next_gaussian();
  }
  log_softmax_inplace(logits);
  return logits;
}

// Shared behavior for the two order-k families: context window maintenance,
// optional absorbing EOS, last-token features.
class OrderKModel : public AutoregressiveModel {
 public:
  OrderKModel(int vocab, int order, std::optional<TokenId> eos)
      : vocab_(vocab), order_(order), eos_(eos) {}

  int vocab_size() const override { return vocab_; }
  std::optional<TokenId> eos_token() const override { return eos_; }

  ModelState initial_state() const override { return ModelState{}; }

  void next_log_probs(const ModelState& state, std::span<double> out) const override {
    if (state.terminal) {
      // Absorbed: all mass on EOS.
      for (double& x : out) x = kNegInf;
      out[static_cast<std::size_t>(*eos_)] = 0.0;
      return;
    }
    row(state, out);
  }

  ModelState advance(const ModelState& state, TokenId token) const override {
    if (token < 0 || token >= vocab_) throw std::out_of_range("advance: token outside vocabulary");
    if (state.terminal) {
      ModelState next = state;
      next.position += 1;
      return next;  // absorbing
    }
    ModelState next = state;
    next.window.push_back(token);
    if (next.window.size() > static_cast<std::size_t>(order_)) {
      next.window.erase(next.window.begin(),
                        next.window.end() - static_cast<std::ptrdiff_t>(order_));
    }
    next.position += 1;
    next.terminal = eos_.has_value() && token == *eos_;
    return next;
  }

  int feature_dim() const override { return vocab_ + 1; }

  void features(const ModelState& state, std::span<double> out) const override {
    for (double& x : out) x = 0.0;
    if (!state.window.empty()) out[static_cast<std::size_t>(state.window.back())] = 1.0;
    out[static_cast<std::size_t>(vocab_)] =
        static_cast<double>(state.position) / (1.0 + static_cast<double>(state.position));
  }

 protected:
  virtual void row(const ModelState& state, std::span<double> out) const = 0;

  // Context code in base vocab+1; a leading "begin" digit 0 pads short windows
  // so the start-of-sequence context gets its own table row.
  std::uint64_t context_code(std::span<const TokenId> window) const {
    std::uint64_t code = 0;
    const std::uint64_t base = static_cast<std::uint64_t>(vocab_) + 1;
    std::size_t pad = static_cast<std::size_t>(order_) - window.size();
    for (std::size_t i = 0; i < pad; ++i) code = code * base;
    for (TokenId t : window) code = code * base + static_cast<std::uint64_t>(t) + 1;
    return code;
  }

  int vocab_;
  int order_;
  std::optional<TokenId> eos_;
};

class MarkovModel final : public OrderKModel {
 public:
  MarkovModel(int vocab, int order, std::uint64_t seed, std::optional<TokenId> eos)
      : OrderKModel(vocab, order, eos) {
    std::uint64_t rows = 1;
    for (int k = 0; k < order; ++k) rows *= static_cast<std::uint64_t>(vocab) + 1;
    table_.resize(rows);
    for (std::uint64_t r = 0; r < rows; ++r) {
      table_[r] = seeded_row(seed, stream_id(RngDomain::init, 0, r), vocab);
    }
  }

 protected:
  void row(const ModelState& state, std::span<double> out) const override {
    const std::vector<double>& lp = table_[context_code(state.window)];
    std::copy(lp.begin(), lp.end(), out.begin());
  }

 private:
  std::vector<std::vector<double>> table_;
};

class RandomLogitModel final : public OrderKModel {
 public:
  RandomLogitModel(int vocab, int order, std::uint64_t seed, std::optional<TokenId> eos)
      : OrderKModel(vocab, order, eos), seed_(seed) {}

 protected:
  void row(const ModelState& state, std::span<double> out) const override {
    // Rows are materialized on demand from the context hash; equal windows
    // always hash to the same stream, preserving purity.
    std::span<const TokenId> w(state.window);
    if (w.size() > static_cast<std::size_t>(order_)) w = w.subspan(w.size() - order_);
    std::vector<double> lp = seeded_row(seed_, window_stream(w), vocab_);
    std::copy(lp.begin(), lp.end(), out.begin());
  }

 private:
  std::uint64_t seed_;
};

// Three-phase chain: the first token either enters a concentrated mode (the
// low-probability trap token) or falls into a uniform diffuse phase. Inside
// the mode, repeating the trap token keeps probability mode_prob; any other
// token drops to diffuse. Sequences end at a fixed depth with no EOS.
class PlantedModeModel final : public AutoregressiveModel {
 public:
  static constexpr std::int8_t kStart = 0;
  static constexpr std::int8_t kMode = 1;
  static constexpr std::int8_t kDiffuse = 2;

  PlantedModeModel(int vocab, TokenId trap, double trap_prob, double mode_prob, int depth)
      : vocab_(vocab), trap_(trap), trap_prob_(trap_prob), mode_prob_(mode_prob), depth_(depth) {}

  int vocab_size() const override { return vocab_; }
  std::optional<TokenId> eos_token() const override { return std::nullopt; }
  ModelState initial_state() const override { return ModelState{}; }

  void next_log_probs(const ModelState& state, std::span<double> out) const override {
    if (state.terminal) {
      throw std::logic_error("planted-mode: conditionals past depth are undefined");
    }
    double on_trap, off_trap;
    if (state.phase == kDiffuse) {
      on_trap = off_trap = 1.0 / static_cast<double>(vocab_);
    } else {
      const double stay = (state.phase == kStart) ? trap_prob_ : mode_prob_;
      on_trap = stay;
      off_trap = (1.0 - stay) / static_cast<double>(vocab_ - 1);
    }
    for (int v = 0; v < vocab_; ++v) {
      out[static_cast<std::size_t>(v)] = std::log(v == trap_ ? on_trap : off_trap);
    }
  }

  ModelState advance(const ModelState& state, TokenId token) const override {
    if (token < 0 || token >= vocab_) throw std::out_of_range("advance: token outside vocabulary");
    if (state.terminal) throw std::logic_error("planted-mode: advance past depth");
    ModelState next;
    next.window = {token};
    next.position = state.position + 1;
    next.phase = (state.phase != kDiffuse && token == trap_) ? kMode : kDiffuse;
    next.terminal = next.position >= depth_;
    return next;
  }

  int feature_dim() const override { return vocab_ + 4; }

  void features(const ModelState& state, std::span<double> out) const override {
    for (double& x : out) x = 0.0;
    out[static_cast<std::size_t>(state.phase)] = 1.0;
    if (!state.window.empty()) out[3 + static_cast<std::size_t>(state.window.back())] = 1.0;
    out[static_cast<std::size_t>(vocab_) + 3] =
        static_cast<double>(state.position) / static_cast<double>(depth_);
  }

 private:
  int vocab_;
  TokenId trap_;
  double trap_prob_;
  double mode_prob_;
  int depth_;
};

}  // namespace

nlohmann::json to_json(const ToyModelSpec& spec) {
  nlohmann::json j{{"kind", spec.kind},         {"vocab", spec.vocab},
                   {"seed", spec.seed},         {"order", spec.order},
                   {"trap_token", spec.trap_token}, {"trap_prob", spec.trap_prob},
                   {"mode_prob", spec.mode_prob},   {"depth", spec.depth}};
  if (spec.eos_token) j["eos_token"] = *spec.eos_token;
  return j;
}

ToyModelSpec model_spec_from_json(const nlohmann::json& j) {
  try {
    ToyModelSpec spec;
    spec.kind = j.value("kind", spec.kind);
    spec.vocab = j.value("vocab", spec.vocab);
    spec.seed = j.value("seed", spec.seed);
    spec.order = j.value("order", spec.order);
    if (j.contains("eos_token") && !j.at("eos_token").is_null()) {
      spec.eos_token = j.at("eos_token").get<TokenId>();
    }
    spec.trap_token = j.value("trap_token", spec.trap_token);
    spec.trap_prob = j.value("trap_prob", spec.trap_prob);
    spec.mode_prob = j.value("mode_prob", spec.mode_prob);
    spec.depth = j.value("depth", spec.depth);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
}

std::shared_ptr<const AutoregressiveModel> build_model(const ToyModelSpec& spec) {
  if (spec.vocab < 2) throw ConfigError("model spec: vocab must be at least 2");
  if (spec.kind == "markov" || spec.kind == "random-logit") {
    if (spec.order < 1) throw ConfigError("model spec: order must be at least 1");
    if (spec.eos_token && (*spec.eos_token < 0 || *spec.eos_token >= spec.vocab)) {
      throw ConfigError("model spec: eos_token outside vocabulary");
    }
    if (spec.kind == "markov") {
      if (spec.order > 8) throw ConfigError("model spec: markov order capped at 8");
      double rows = std::pow(static_cast<double>(spec.vocab) + 1, spec.order);
      if (rows > 65536.0) {
        throw ConfigError("model spec: markov table too large, use random-logit instead");
      }
      return std::make_shared<MarkovModel>(spec.vocab, spec.order, spec.seed, spec.eos_token);
    }
    if (spec.order > 16) throw ConfigError("model spec: random-logit order capped at 16");
    return std::make_shared<RandomLogitModel>(spec.vocab, spec.order, spec.seed, spec.eos_token);
  }
  if (spec.kind == "planted-mode") {
    if (spec.eos_token) throw ConfigError("model spec: planted-mode has no EOS token");
    if (spec.trap_token < 0 || spec.trap_token >= spec.vocab) {
      throw ConfigError("model spec: trap_token outside vocabulary");
    }
    if (!(spec.trap_prob > 0.0 && spec.trap_prob < 1.0)) {
      throw ConfigError("model spec: trap_prob must lie in (0, 1)");
    }
    if (!(spec.mode_prob > 0.0 && spec.mode_prob < 1.0)) {
      throw ConfigError("model spec: mode_prob must lie in (0, 1)");
    }
    if (spec.depth < 1) throw ConfigError("model spec: depth must be at least 1");
    return std::make_shared<PlantedModeModel>(spec.vocab, spec.trap_token, spec.trap_prob,
                                              spec.mode_prob, spec.depth);
  }
  throw ConfigError("model spec: unknown kind '" + spec.kind + "'");
}

}  // namespace apps
