// Benchmark: serial vs OpenMP execution of the data-parallel kernels.
//
// The engine's hot loops (block proposal across the population, rollout
// scoring across states, learned-head evaluation across particles) all take
// an ExecPolicy. This tool times each kernel under both policies on the same
// inputs, reports the speedup, and verifies that the outputs are identical,
// since parallelism must never change results.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "apps/engine.hpp"
#include "apps/model.hpp"
#include "apps/potential.hpp"
#include "apps/rng.hpp"
#include "apps/studies.hpp"
#include "apps/value_head.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_best_ms(int repeats, const std::function<void()>& fn) {
  double best = 1e300;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = Clock::now();
    fn();
    const auto t1 = Clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (ms < best) best = ms;
  }
  return best;
}

struct Row {
  std::string name;
  double serial_ms = 0.0;
  double parallel_ms = 0.0;
  bool identical = false;
};

void print_table(const std::vector<Row>& rows) {
  std::printf("%-22s %12s %12s %9s %10s\n", "kernel", "serial (ms)", "openmp (ms)",
              "speedup", "identical");
  for (const Row& r : rows) {
    std::printf("%-22s %12.2f %12.2f %8.2fx %10s\n", r.name.c_str(), r.serial_ms,
                r.parallel_ms, r.serial_ms / r.parallel_ms, r.identical ? "yes" : "NO");
  }
}

bool same_run(const apps::RunResult& a, const apps::RunResult& b) {
  if (a.completion != b.completion) return false;
  if (a.population.size() != b.population.size()) return false;
  for (std::size_t i = 0; i < a.population.size(); ++i) {
    if (a.population[i].prefix != b.population[i].prefix) return false;
    if (a.population[i].log_weight != b.population[i].log_weight) return false;
    if (a.population[i].ancestry_score != b.population[i].ancestry_score) return false;
  }
  return true;
}

/**
 * A population of live particles mid-sequence, the situation in which
 * potentials are actually consulted. Random prefixes spread the particles
 * over many distinct model states so the rollout cache cannot collapse the
 * work onto a handful of entries.
 */
std::vector<apps::Particle> live_population(const apps::AutoregressiveModel& model, int count,
                                            int prefix_len, std::uint64_t seed) {
  apps::CounterRng rng(seed, apps::stream_id(apps::RngDomain::misc, 0));
  std::vector<apps::Particle> pop;
  pop.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    apps::Particle p;
    p.state = model.initial_state();
    p.prefix.reserve(static_cast<std::size_t>(prefix_len));
    for (int t = 0; t < prefix_len; ++t) {
      const double u = rng.next_double() * model.vocab_size();
      const auto tok = static_cast<apps::TokenId>(
          std::min(static_cast<int>(u), model.vocab_size() - 1));
      p.prefix.push_back(tok);
      p.state = model.advance(p.state, tok);
    }
    p.log_weight = rng.next_double();
    pop.push_back(std::move(p));
  }
  return pop;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Timing comparison of serial and OpenMP kernel execution"};
  int particles = 256;
  int repeats = 3;
  int vocab = 12;
  app.add_option("--particles", particles, "population size for the engine benchmark");
  app.add_option("--repeats", repeats, "timing repetitions (best is reported)");
  app.add_option("--vocab", vocab, "vocabulary size of the benchmark model");
  CLI11_PARSE(app, argc, argv);

#ifdef _OPENMP
  std::printf("OpenMP enabled, max threads = %d\n\n", omp_get_max_threads());
#else
  std::printf("Built without OpenMP; the parallel policy falls back to serial.\n\n");
#endif

  apps::ToyModelSpec spec;
  spec.kind = "random-logit";
  spec.vocab = vocab;
  spec.seed = 42;
  spec.order = 2;
  const auto model = apps::build_model(spec);

  std::vector<Row> rows;

  // --- Engine: full sampler run (proposal kernel dominates) ---
  {
    apps::EngineConfig cfg;
    cfg.alpha = 4.0;
    cfg.block_size = 16;
    cfg.max_tokens = 512;
    cfg.particles = particles;
    cfg.proposal = {1.0, 0, 1.0};
    cfg.seed = 7;
    apps::RunResult serial_out, parallel_out;
    Row row{"sampler run"};
    cfg.exec.parallel = false;
    row.serial_ms = time_best_ms(repeats, [&] { serial_out = apps::run_sampler(*model, cfg); });
    cfg.exec.parallel = true;
    row.parallel_ms =
        time_best_ms(repeats, [&] { parallel_out = apps::run_sampler(*model, cfg); });
    row.identical = same_run(serial_out, parallel_out);
    rows.push_back(row);
  }

  // --- Rollout potential: lookahead scoring across a population ---
  {
    const auto pop = live_population(*model, particles, 24, 11);
    apps::RolloutConfig rcfg;
    rcfg.rollouts = 8;
    rcfg.horizon = 32;
    apps::RolloutPotential pot(rcfg);
    apps::PotentialContext ctx{*model, 4.0, {1.0, 0, 1.0}, 7, 1, apps::ExecPolicy{}};
    apps::PotentialResult serial_out, parallel_out;
    Row row{"rollout scoring"};
    ctx.exec.parallel = false;
    row.serial_ms = time_best_ms(repeats, [&] { serial_out = pot.evaluate(pop, ctx); });
    ctx.exec.parallel = true;
    row.parallel_ms = time_best_ms(repeats, [&] { parallel_out = pot.evaluate(pop, ctx); });
    row.identical = serial_out.log_psi == parallel_out.log_psi;
    rows.push_back(row);
  }

  // --- Learned potential: batched head evaluation ---
  {
    const auto pop = live_population(*model, particles * 32, 24, 13);
    apps::LearnedPotential pot(apps::HeadParams::seeded(model->feature_dim(), 64, 5));
    apps::PotentialContext ctx{*model, 4.0, {1.0, 0, 1.0}, 7, 1, apps::ExecPolicy{}};
    apps::PotentialResult serial_out, parallel_out;
    Row row{"learned head"};
    ctx.exec.parallel = false;
    row.serial_ms = time_best_ms(repeats, [&] { serial_out = pot.evaluate(pop, ctx); });
    ctx.exec.parallel = true;
    row.parallel_ms = time_best_ms(repeats, [&] { parallel_out = pot.evaluate(pop, ctx); });
    row.identical = serial_out.log_psi == parallel_out.log_psi;
    rows.push_back(row);
  }

  print_table(rows);

  for (const Row& r : rows) {
    if (!r.identical) {
      std::printf("\nFAILURE: kernel '%s' changed results under OpenMP\n", r.name.c_str());
      return 1;
    }
  }
  return 0;
}
