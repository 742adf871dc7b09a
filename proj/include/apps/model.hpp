#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

// ============================================================================
// Toy autoregressive models.
//
// A model is a pure function family over immutable states: next_log_probs and
// advance depend only on (model, state), never on hidden mutable data, so
// identical states always produce identical conditionals and identical
// successors. That purity is what makes exhaustive enumeration, replay, and
// parallel evaluation trustworthy.
//
// Three families are provided:
//   markov        dense order-k conditional table (seeded, or uniform at seed 0)
//   random-logit  order-k conditionals hashed on the fly from (seed, context)
//   planted-mode  a three-phase chain with a low-probability entry token that
//                 leads to a concentrated continuation; used to study whether
//                 samplers can commit to an early unlikely branch
// ============================================================================

namespace apps {

using TokenId = std::int32_t;
using LogProbVector = std::vector<double>;

/**
 * Immutable snapshot of an autoregressive context. Value type: copy, compare,
 * and hash freely. `window` holds the most recent `order` tokens (shorter near
 * the start), `phase` is used only by planted-mode, `terminal` marks absorbed
 * states (EOS consumed, or planted-mode depth reached).
 */
struct ModelState {
  std::vector<TokenId> window;
  std::int32_t position = 0;
  std::int8_t phase = 0;
  bool terminal = false;

  bool operator==(const ModelState&) const = default;
};

struct ModelStateHash {
  std::size_t operator()(const ModelState& s) const noexcept {
    std::uint64_t h = 0x9E3779B97F4A7C15ull ^ (static_cast<std::uint64_t>(s.position) << 2) ^
                      (static_cast<std::uint64_t>(s.phase) << 40) ^
                      (s.terminal ? 0x8000000000000000ull : 0ull);
    for (TokenId t : s.window) {
      h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(t)) + 0x9E3779B97F4A7C15ull +
           (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

/**
 * Abstract autoregressive model over a finite vocabulary 0..vocab_size()-1.
 *
 * Contract:
 *   - next_log_probs fills `out` (size vocab_size()) with log p(token | state);
 *     entries sum to 1 after exponentiation.
 *   - advance returns the successor state; advancing equal states by the same
 *     token yields equal states.
 *   - For models with an EOS token, conditionals from a terminal state place
 *     all mass on EOS and advance(terminal, eos) is terminal again.
 *   - features fills a fixed-size observation vector for learned potentials.
 */
class AutoregressiveModel {
 public:
  virtual ~AutoregressiveModel() = default;

  virtual int vocab_size() const = 0;
  virtual std::optional<TokenId> eos_token() const = 0;
  virtual ModelState initial_state() const = 0;
  virtual void next_log_probs(const ModelState& state, std::span<double> out) const = 0;
  virtual ModelState advance(const ModelState& state, TokenId token) const = 0;

  virtual int feature_dim() const = 0;
  virtual void features(const ModelState& state, std::span<double> out) const = 0;

  /** Convenience wrapper returning a fresh vector. */
  LogProbVector next_log_probs(const ModelState& state) const {
    LogProbVector lp(static_cast<std::size_t>(vocab_size()));
    next_log_probs(state, lp);
    return lp;
  }
};

/**
 * Declarative model description. Serializes to JSON with documented keys
 * (kind, vocab, seed, order, trap_token, trap_prob, mode_prob, depth, plus
 * eos_token when present) and round-trips without loss.
 */
struct ToyModelSpec {
  std::string kind = "markov";  // "markov" | "random-logit" | "planted-mode"
  int vocab = 2;
  std::uint64_t seed = 0;
  int order = 1;                       // context length for markov / random-logit
  std::optional<TokenId> eos_token;    // markov / random-logit only
  TokenId trap_token = 0;              // planted-mode entry token
  double trap_prob = 0.1;              // entry probability at the first step
  double mode_prob = 0.9;              // stay probability inside the mode
  int depth = 4;                       // planted-mode sequence length

  bool operator==(const ToyModelSpec&) const = default;
};

nlohmann::json to_json(const ToyModelSpec& spec);
ToyModelSpec model_spec_from_json(const nlohmann::json& j);

/** Validate the spec and construct the model. Throws ConfigError on bad input. */
std::shared_ptr<const AutoregressiveModel> build_model(const ToyModelSpec& spec);

}  // namespace apps
