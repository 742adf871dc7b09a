/**
 * Toy autoregressive model families.
 *
 * Covers conditional normalization, purity (equal states give equal
 * conditionals and successors), context-window maintenance, EOS absorption,
 * the planted-mode phase machine with its hand-computable conditionals,
 * feature vectors, spec JSON round-trips, and constructor validation.
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "apps/errors.hpp"
#include "apps/logspace.hpp"
#include "apps/model.hpp"

using namespace apps;

namespace {

double prob_sum(const AutoregressiveModel& model, const ModelState& state) {
  LogProbVector lp = model.next_log_probs(state);
  double s = 0.0;
  for (double l : lp) s += std::exp(l);
  return s;
}

}  // namespace

// ============================================================================
// Shared contracts
// ============================================================================

TEST_CASE("conditionals are normalized across families and states") {
  std::vector<ToyModelSpec> specs;
  specs.push_back({.kind = "markov", .vocab = 3, .seed = 4, .order = 1});
  specs.push_back({.kind = "markov", .vocab = 4, .seed = 9, .order = 2, .eos_token = 3});
  specs.push_back({.kind = "random-logit", .vocab = 5, .seed = 21, .order = 2});
  specs.push_back({.kind = "planted-mode", .vocab = 3, .trap_token = 1});

  for (const ToyModelSpec& spec : specs) {
    CAPTURE(spec.kind);
    auto model = build_model(spec);
    ModelState s = model->initial_state();
    CHECK(prob_sum(*model, s) == doctest::Approx(1.0).epsilon(1e-12));
    // Walk a few tokens along the argmax and re-check at every state.
    for (int step = 0; step < 3; ++step) {
      LogProbVector lp = model->next_log_probs(s);
      TokenId best = 0;
      for (int v = 1; v < model->vocab_size(); ++v) {
        if (lp[static_cast<std::size_t>(v)] > lp[static_cast<std::size_t>(best)]) best = v;
      }
      s = model->advance(s, best);
      if (s.terminal) break;
      CHECK(prob_sum(*model, s) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("equal states produce equal conditionals and successors") {
  auto model = build_model({.kind = "random-logit", .vocab = 4, .seed = 13, .order = 2});
  ModelState a = model->initial_state();
  ModelState b = model->initial_state();
  for (TokenId t : {2, 0, 3, 1}) {
    a = model->advance(a, t);
    b = model->advance(b, t);
  }
  CHECK(a == b);
  CHECK(model->next_log_probs(a) == model->next_log_probs(b));
  CHECK(model->advance(a, 1) == model->advance(b, 1));
  CHECK(ModelStateHash{}(a) == ModelStateHash{}(b));
}

TEST_CASE("context window keeps only the last order tokens") {
  auto model = build_model({.kind = "markov", .vocab = 5, .seed = 1, .order = 2});
  ModelState s = model->initial_state();
  s = model->advance(s, 4);
  s = model->advance(s, 1);
  s = model->advance(s, 3);
  CHECK(s.window == std::vector<TokenId>{1, 3});
  CHECK(s.position == 3);

  // States reached by different histories with the same window agree.
  ModelState other = model->advance(model->advance(model->advance(
      model->initial_state(), 0), 1), 3);
  CHECK(other.window == s.window);
  CHECK(model->next_log_probs(other) == model->next_log_probs(s));
}

TEST_CASE("advance rejects tokens outside the vocabulary") {
  auto model = build_model({.kind = "markov", .vocab = 3, .seed = 0, .order = 1});
  CHECK_THROWS_AS(model->advance(model->initial_state(), 3), std::out_of_range);
  CHECK_THROWS_AS(model->advance(model->initial_state(), -1), std::out_of_range);
}

// ============================================================================
// Markov
// ============================================================================

TEST_CASE("markov at seed zero is the uniform model") {
  auto model = build_model({.kind = "markov", .vocab = 4, .seed = 0, .order = 1});
  ModelState s = model->initial_state();
  for (int step = 0; step < 3; ++step) {
    LogProbVector lp = model->next_log_probs(s);
    for (double l : lp) CHECK(l == doctest::Approx(std::log(0.25)).epsilon(1e-12));
    s = model->advance(s, step % 4);
  }
}

TEST_CASE("markov start context differs from interior contexts") {
  // The begin padding gives the empty window its own table row, so the
  // start-of-sequence conditional generally differs from every interior one.
  auto model = build_model({.kind = "markov", .vocab = 3, .seed = 17, .order = 1});
  const LogProbVector at_start = model->next_log_probs(model->initial_state());
  bool differs = false;
  for (TokenId t = 0; t < 3; ++t) {
    ModelState s = model->advance(model->initial_state(), t);
    if (model->next_log_probs(s) != at_start) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("eos token absorbs the chain") {
  auto model = build_model({.kind = "markov", .vocab = 3, .seed = 6, .order = 1,
                            .eos_token = 2});
  ModelState s = model->advance(model->initial_state(), 2);
  CHECK(s.terminal);
  LogProbVector lp = model->next_log_probs(s);
  CHECK(lp[2] == doctest::Approx(0.0));
  CHECK(lp[0] == kNegInf);
  CHECK(lp[1] == kNegInf);
  ModelState again = model->advance(s, 2);
  CHECK(again.terminal);

  ModelState alive = model->advance(model->initial_state(), 0);
  CHECK_FALSE(alive.terminal);
}

// ============================================================================
// Random-logit
// ============================================================================

TEST_CASE("random-logit rows depend on seed and context") {
  auto m1 = build_model({.kind = "random-logit", .vocab = 6, .seed = 3, .order = 1});
  auto m2 = build_model({.kind = "random-logit", .vocab = 6, .seed = 4, .order = 1});
  const LogProbVector r1 = m1->next_log_probs(m1->initial_state());
  const LogProbVector r2 = m2->next_log_probs(m2->initial_state());
  CHECK(r1 != r2);

  ModelState a = m1->advance(m1->initial_state(), 0);
  ModelState b = m1->advance(m1->initial_state(), 5);
  CHECK(m1->next_log_probs(a) != m1->next_log_probs(b));

  // Re-querying the same context materializes the identical row.
  CHECK(m1->next_log_probs(a) == m1->next_log_probs(m1->advance(m1->initial_state(), 0)));
}

// ============================================================================
// Planted-mode
// ============================================================================

TEST_CASE("planted-mode conditionals follow the phase machine") {
  auto model = build_model({.kind = "planted-mode", .vocab = 3, .trap_token = 0,
                            .trap_prob = 0.1, .mode_prob = 0.9, .depth = 4});
  const ModelState start = model->initial_state();

  LogProbVector lp = model->next_log_probs(start);
  CHECK(std::exp(lp[0]) == doctest::Approx(0.10).epsilon(1e-12));
  CHECK(std::exp(lp[1]) == doctest::Approx(0.45).epsilon(1e-12));
  CHECK(std::exp(lp[2]) == doctest::Approx(0.45).epsilon(1e-12));

  // Entering on the trap token reaches the concentrated mode.
  ModelState mode = model->advance(start, 0);
  lp = model->next_log_probs(mode);
  CHECK(std::exp(lp[0]) == doctest::Approx(0.90).epsilon(1e-12));
  CHECK(std::exp(lp[1]) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(std::exp(lp[2]) == doctest::Approx(0.05).epsilon(1e-12));

  // Any other first token falls into the uniform diffuse phase, for good.
  ModelState diffuse = model->advance(start, 2);
  lp = model->next_log_probs(diffuse);
  for (int v = 0; v < 3; ++v) {
    CHECK(std::exp(lp[static_cast<std::size_t>(v)]) ==
          doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }
  ModelState still_diffuse = model->advance(diffuse, 0);  // trap token cannot rescue
  lp = model->next_log_probs(still_diffuse);
  CHECK(std::exp(lp[0]) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // Leaving the mode also drops to diffuse.
  ModelState dropped = model->advance(mode, 1);
  lp = model->next_log_probs(dropped);
  CHECK(std::exp(lp[0]) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("planted-mode ends exactly at depth") {
  auto model = build_model({.kind = "planted-mode", .vocab = 3, .trap_token = 0,
                            .trap_prob = 0.1, .mode_prob = 0.9, .depth = 4});
  ModelState s = model->initial_state();
  for (int t = 0; t < 4; ++t) {
    CHECK_FALSE(s.terminal);
    s = model->advance(s, 0);
  }
  CHECK(s.terminal);
  CHECK(s.position == 4);
  CHECK_THROWS_AS(model->next_log_probs(s), std::logic_error);
  CHECK_THROWS_AS(model->advance(s, 0), std::logic_error);
}

TEST_CASE("planted-mode features expose phase, last token and progress") {
  auto model = build_model({.kind = "planted-mode", .vocab = 3, .trap_token = 0,
                            .trap_prob = 0.1, .mode_prob = 0.9, .depth = 4});
  CHECK(model->feature_dim() == 7);
  std::vector<double> f(7);

  model->features(model->initial_state(), f);
  CHECK(f[0] == 1.0);  // start phase
  CHECK(f[6] == 0.0);  // no progress yet

  ModelState mode = model->advance(model->initial_state(), 0);
  model->features(mode, f);
  CHECK(f[1] == 1.0);                       // mode phase
  CHECK(f[3] == 1.0);                       // last token 0
  CHECK(f[6] == doctest::Approx(0.25));     // one of four steps

  ModelState diffuse = model->advance(model->initial_state(), 2);
  model->features(diffuse, f);
  CHECK(f[2] == 1.0);
  CHECK(f[5] == 1.0);
}

TEST_CASE("order-k families expose last-token features") {
  auto model = build_model({.kind = "markov", .vocab = 3, .seed = 2, .order = 1});
  CHECK(model->feature_dim() == 4);
  std::vector<double> f(4);
  model->features(model->initial_state(), f);
  CHECK(f == std::vector<double>{0.0, 0.0, 0.0, 0.0});
  model->features(model->advance(model->initial_state(), 1), f);
  CHECK(f[1] == 1.0);
  CHECK(f[3] == doctest::Approx(0.5));  // position 1 -> 1/2
}

// ============================================================================
// Spec serialization and validation
// ============================================================================

TEST_CASE("model specs round-trip through JSON") {
  ToyModelSpec spec{.kind = "random-logit", .vocab = 7, .seed = 99, .order = 3,
                    .eos_token = 6};
  CHECK(model_spec_from_json(to_json(spec)) == spec);

  ToyModelSpec planted{.kind = "planted-mode", .vocab = 4, .trap_token = 2,
                       .trap_prob = 0.2, .mode_prob = 0.8, .depth = 6};
  CHECK(model_spec_from_json(to_json(planted)) == planted);

  // Absent eos_token stays absent.
  ToyModelSpec plain{.kind = "markov", .vocab = 2, .seed = 0, .order = 1};
  const ToyModelSpec back = model_spec_from_json(to_json(plain));
  CHECK_FALSE(back.eos_token.has_value());
  CHECK(back == plain);
}

TEST_CASE("malformed specs are rejected with ConfigError") {
  CHECK_THROWS_AS(build_model({.kind = "unknown"}), ConfigError);
  CHECK_THROWS_AS(build_model({.kind = "markov", .vocab = 1}), ConfigError);
  CHECK_THROWS_AS(build_model({.kind = "markov", .vocab = 3, .order = 0}), ConfigError);
  CHECK_THROWS_AS(build_model({.kind = "markov", .vocab = 3, .order = 9}), ConfigError);
  CHECK_THROWS_AS(build_model({.kind = "markov", .vocab = 16, .order = 8}), ConfigError);
  CHECK_THROWS_AS(build_model({.kind = "markov", .vocab = 3, .eos_token = 3}), ConfigError);
  CHECK_THROWS_AS(build_model({.kind = "planted-mode", .vocab = 3, .eos_token = 1}),
                  ConfigError);
  CHECK_THROWS_AS(build_model({.kind = "planted-mode", .vocab = 3, .trap_token = 5}),
                  ConfigError);
  CHECK_THROWS_AS(build_model({.kind = "planted-mode", .vocab = 3, .trap_prob = 0.0}),
                  ConfigError);
  CHECK_THROWS_AS(build_model({.kind = "planted-mode", .vocab = 3, .mode_prob = 1.0}),
                  ConfigError);
  CHECK_THROWS_AS(build_model({.kind = "planted-mode", .vocab = 3, .depth = 0}),
                  ConfigError);
  CHECK_THROWS_AS(model_spec_from_json(nlohmann::json{{"vocab", "three"}}), ConfigError);
}
