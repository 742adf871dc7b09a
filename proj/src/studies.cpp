#include "apps/studies.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "apps/errors.hpp"
#include "apps/io.hpp"
#include "apps/logspace.hpp"

namespace apps {

// ---------------------------------------------------------------------------
// Experiment config serialization
// ---------------------------------------------------------------------------

namespace {

std::string resampling_name(ResampleScheme s) {
  return s == ResampleScheme::multinomial ? "multinomial" : "systematic";
}
ResampleScheme resampling_from_name(const std::string& s) {
  if (s == "multinomial") return ResampleScheme::multinomial;
  if (s == "systematic") return ResampleScheme::systematic;
  throw ConfigError("resampling must be 'multinomial' or 'systematic', got '" + s + "'");
}
std::string correction_name(CorrectionMode c) {
  return c == CorrectionMode::heuristic ? "heuristic" : "corrected";
}
CorrectionMode correction_from_name(const std::string& s) {
  if (s == "heuristic") return CorrectionMode::heuristic;
  if (s == "corrected") return CorrectionMode::auxiliary_corrected;
  throw ConfigError("correction must be 'heuristic' or 'corrected', got '" + s + "'");
}
std::string finalize_name(FinalizeRule f) {
  return f == FinalizeRule::best_score ? "best-score" : "weighted-sample";
}
FinalizeRule finalize_from_name(const std::string& s) {
  if (s == "best-score") return FinalizeRule::best_score;
  if (s == "weighted-sample") return FinalizeRule::weighted_sample;
  throw ConfigError("finalize must be 'best-score' or 'weighted-sample', got '" + s + "'");
}

std::uint64_t fnv_tokens(std::span<const TokenId> tokens) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (TokenId t : tokens) {
    h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(t)) + 1u;
    h *= 0x100000001B3ull;
  }
  return h;
}

struct TokenVecHash {
  std::size_t operator()(const std::vector<TokenId>& v) const noexcept {
    return static_cast<std::size_t>(fnv_tokens(v));
  }
};

using LeafMap = std::unordered_map<std::vector<TokenId>, std::size_t, TokenVecHash>;

LeafMap leaf_map(const OracleTables& tables) {
  LeafMap map;
  const std::vector<OracleNode>& leaves = tables.levels.back();
  for (std::size_t i = 0; i < leaves.size(); ++i) map.emplace(leaves[i].prefix, i);
  return map;
}

}  // namespace

nlohmann::json to_json(const ExperimentConfig& cfg) {
  return {{"model", to_json(cfg.model)},
          {"alpha", cfg.engine.alpha},
          {"block_size", cfg.engine.block_size},
          {"max_tokens", cfg.engine.max_tokens},
          {"particles", cfg.engine.particles},
          {"dynamic_allocation", cfg.engine.dynamic_allocation},
          {"min_particles", cfg.engine.min_particles},
          {"max_particles", cfg.engine.max_particles},
          {"proposal", to_json(cfg.engine.proposal)},
          {"kappa", cfg.engine.ess_threshold},
          {"eta", cfg.engine.selection_strength},
          {"resampling", resampling_name(cfg.engine.resampling)},
          {"correction", correction_name(cfg.engine.correction)},
          {"keep_elite", cfg.engine.keep_elite},
          {"finalize", finalize_name(cfg.engine.finalize)},
          {"seed", cfg.engine.seed},
          {"parallel", cfg.engine.exec.parallel},
          {"apf", cfg.apf},
          {"rollouts", cfg.rollout.rollouts},
          {"horizon", cfg.rollout.horizon},
          {"rollout_top_m", cfg.rollout.top_m},
          {"head_path", cfg.head_path}};
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  try {
    ExperimentConfig cfg;
    if (j.contains("model")) cfg.model = model_spec_from_json(j.at("model"));
    EngineConfig& e = cfg.engine;
    e.alpha = j.value("alpha", e.alpha);
    e.block_size = j.value("block_size", e.block_size);
    e.max_tokens = j.value("max_tokens", e.max_tokens);
    e.particles = j.value("particles", e.particles);
    e.dynamic_allocation = j.value("dynamic_allocation", e.dynamic_allocation);
    e.min_particles = j.value("min_particles", e.min_particles);
    e.max_particles = j.value("max_particles", e.max_particles);
    if (j.contains("proposal")) e.proposal = proposal_from_json(j.at("proposal"));
    e.ess_threshold = j.value("kappa", e.ess_threshold);
    e.selection_strength = j.value("eta", e.selection_strength);
    if (j.contains("resampling")) {
      e.resampling = resampling_from_name(j.at("resampling").get<std::string>());
    }
    if (j.contains("correction")) {
      e.correction = correction_from_name(j.at("correction").get<std::string>());
    }
    e.keep_elite = j.value("keep_elite", e.keep_elite);
    if (j.contains("finalize")) {
      e.finalize = finalize_from_name(j.at("finalize").get<std::string>());
    }
    e.seed = j.value("seed", e.seed);
    e.exec.parallel = j.value("parallel", e.exec.parallel);
    cfg.apf = j.value("apf", cfg.apf);
    if (cfg.apf != "none" && cfg.apf != "rollout" && cfg.apf != "learned") {
      throw ConfigError("apf must be 'none', 'rollout' or 'learned', got '" + cfg.apf + "'");
    }
    cfg.rollout.rollouts = j.value("rollouts", cfg.rollout.rollouts);
    cfg.rollout.horizon = j.value("horizon", cfg.rollout.horizon);
    cfg.rollout.top_m = j.value("rollout_top_m", cfg.rollout.top_m);
    cfg.head_path = j.value("head_path", cfg.head_path);
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
}

std::unique_ptr<SelectionPotential> make_potential(const ExperimentConfig& cfg,
                                                   SupervisionSink* sink) {
  if (cfg.apf == "none") return nullptr;
  if (cfg.apf == "rollout") {
    if (cfg.rollout.rollouts < 1) throw ConfigError("rollout potential: rollouts must be >= 1");
    if (cfg.rollout.horizon < 0) throw ConfigError("rollout potential: horizon must be >= 0");
    return std::make_unique<RolloutPotential>(cfg.rollout, sink);
  }
  if (cfg.head_path.empty()) {
    throw ConfigError("learned potential requires head_path");
  }
  HeadParams params = head_from_json(read_json_file(cfg.head_path));
  return std::make_unique<LearnedPotential>(std::move(params));
}

RunResult run_experiment(const ExperimentConfig& cfg, SupervisionSink* sink) {
  std::shared_ptr<const AutoregressiveModel> model = build_model(cfg.model);
  std::unique_ptr<SelectionPotential> potential = make_potential(cfg, sink);
  return run_sampler(*model, cfg.engine, potential.get());
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

BaselineResult run_baseline(const AutoregressiveModel& model, BaselineKind kind,
                            double alpha, int max_tokens, int n, std::uint64_t seed) {
  ProposalConfig proposal;
  if (kind == BaselineKind::low_temperature) proposal.temperature = 1.0 / alpha;
  const int draws = (kind == BaselineKind::best_of_n) ? std::max(1, n) : 1;

  BaselineResult best;
  best.draws = draws;
  for (int d = 0; d < draws; ++d) {
    CounterRng rng(seed, stream_id(RngDomain::propose, 0, static_cast<std::uint64_t>(d)));
    BlockDraw draw = propose_block(model, model.initial_state(), max_tokens, proposal, rng);
    if (d == 0 || draw.log_p > best.log_p) {
      best.completion = draw.tokens;
      best.log_p = draw.log_p;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Convergence study
// ---------------------------------------------------------------------------

double least_squares_slope(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::vector<double> weighted_leaf_distribution(const RunResult& result,
                                               const OracleTables& tables) {
  LeafMap map = leaf_map(tables);
  std::vector<double> log_w(result.population.size());
  for (std::size_t i = 0; i < log_w.size(); ++i) log_w[i] = result.population[i].log_weight;
  std::vector<double> wbar = normalized_from_log(log_w);
  std::vector<double> dist(tables.levels.back().size(), 0.0);
  for (std::size_t i = 0; i < result.population.size(); ++i) {
    auto it = map.find(result.population[i].prefix);
    if (it == map.end()) {
      throw std::runtime_error("weighted_leaf_distribution: sequence missing from tables");
    }
    dist[it->second] += wbar[i];
  }
  return dist;
}

namespace {

/** Code of the last block of a leaf: tokens after the level J-1 parent. */
std::int64_t last_block_code(const OracleTables& tables, std::size_t leaf) {
  const OracleNode& node = tables.levels.back()[leaf];
  const OracleNode& parent =
      tables.levels[tables.levels.size() - 2][static_cast<std::size_t>(node.parent)];
  std::int64_t code = 0;
  for (std::size_t k = parent.prefix.size(); k < node.prefix.size(); ++k) {
    code = code * 64 + node.prefix[k] + 1;
  }
  return code;  // 0 for an empty (absorbed) block
}

}  // namespace

ConvergenceReport convergence_study(const ConvergenceStudyConfig& cfg) {
  if (cfg.replicates < 2) throw ConfigError("convergence study: replicates must be >= 2");
  std::shared_ptr<const AutoregressiveModel> model = build_model(cfg.model);
  OracleTables tables =
      enumerate_power_target(*model, cfg.alpha, cfg.num_blocks, cfg.block_size);
  FiniteDistribution target = sequence_target(tables);
  std::vector<double> log_q = proposal_sequence_log_probs(*model, tables, cfg.proposal);
  FiniteDistribution qdist;
  qdist.support = target.support;
  qdist.probs.resize(log_q.size());
  for (std::size_t i = 0; i < log_q.size(); ++i) qdist.probs[i] = std::exp(log_q[i]);
  const double chi2 = chi_square(target, qdist);

  // Indicator of one last-block value; auto-pick the one nearest prob 0.3 so
  // the estimate is neither rare-event nor saturated.
  const std::size_t leaves = target.probs.size();
  std::vector<std::int64_t> codes(leaves);
  for (std::size_t i = 0; i < leaves; ++i) codes[i] = last_block_code(tables, i);
  std::int64_t chosen = -1;
  if (cfg.test_block_value >= 0) {
    chosen = cfg.test_block_value + 1;  // single-token blocks: code = token + 1
  } else {
    std::vector<std::int64_t> distinct;
    for (std::int64_t c : codes) {
      if (std::find(distinct.begin(), distinct.end(), c) == distinct.end()) {
        distinct.push_back(c);
      }
    }
    double best_gap = 2.0;
    for (std::int64_t c : distinct) {
      double mass = 0.0;
      for (std::size_t i = 0; i < leaves; ++i) {
        if (codes[i] == c) mass += target.probs[i];
      }
      const double gap = std::abs(mass - 0.3);
      if (gap < best_gap) {
        best_gap = gap;
        chosen = c;
      }
    }
  }
  std::vector<double> f(leaves, 0.0);
  double target_value = 0.0;
  for (std::size_t i = 0; i < leaves; ++i) {
    if (codes[i] == chosen) {
      f[i] = 1.0;
      target_value += target.probs[i];
    }
  }

  LeafMap map = leaf_map(tables);
  ConvergenceReport rep;
  rep.chi_square = chi2;
  rep.target_value = target_value;
  rep.test_block_value = static_cast<int>(chosen - 1);

  std::vector<double> log_p_cells, log_err_cells;
  for (int particles : cfg.particle_grid) {
    std::vector<double> errors(static_cast<std::size_t>(cfg.replicates), 0.0);
    const int reps = cfg.replicates;
#pragma omp parallel for schedule(dynamic) if (cfg.exec.parallel)
    for (int r = 0; r < reps; ++r) {
      EngineConfig e;
      e.alpha = cfg.alpha;
      e.block_size = cfg.block_size;
      e.max_tokens = cfg.num_blocks * cfg.block_size;
      e.particles = particles;
      e.proposal = cfg.proposal;
      e.ess_threshold = 0.0;  // importance sampling only
      e.keep_elite = false;
      e.seed = cfg.seed + static_cast<std::uint64_t>(r);
      RunResult run = run_sampler(*model, e, nullptr);
      std::vector<double> log_w(run.population.size());
      for (std::size_t i = 0; i < log_w.size(); ++i) log_w[i] = run.population[i].log_weight;
      std::vector<double> wbar = normalized_from_log(log_w);
      double est = 0.0;
      for (std::size_t i = 0; i < run.population.size(); ++i) {
        auto it = map.find(run.population[i].prefix);
        est += wbar[i] * f[it->second];
      }
      errors[static_cast<std::size_t>(r)] = std::abs(est - target_value);
    }
    ConvergenceCell cell;
    cell.particles = particles;
    double mean = 0.0;
    for (double e : errors) mean += e;
    mean /= static_cast<double>(reps);
    double var = 0.0;
    for (double e : errors) var += (e - mean) * (e - mean);
    var /= static_cast<double>(reps - 1);
    cell.mean_abs_error = mean;
    cell.std_error = std::sqrt(var / static_cast<double>(reps));
    const double p = static_cast<double>(particles);
    cell.bound = 4.0 / std::sqrt(p) * std::sqrt(1.0 + chi2) + 8.0 / p * chi2;
    rep.cells.push_back(cell);
    log_p_cells.push_back(std::log(p));
    log_err_cells.push_back(std::log(std::max(mean, 1e-300)));
  }
  rep.slope = least_squares_slope(log_p_cells, log_err_cells);
  return rep;
}

ConvergenceStudyConfig convergence_config_from_json(const nlohmann::json& j) {
  try {
    ConvergenceStudyConfig cfg;
    if (j.contains("model")) cfg.model = model_spec_from_json(j.at("model"));
    cfg.alpha = j.value("alpha", cfg.alpha);
    cfg.num_blocks = j.value("num_blocks", cfg.num_blocks);
    cfg.block_size = j.value("block_size", cfg.block_size);
    if (j.contains("proposal")) cfg.proposal = proposal_from_json(j.at("proposal"));
    if (j.contains("particles")) cfg.particle_grid = j.at("particles").get<std::vector<int>>();
    cfg.replicates = j.value("replicates", cfg.replicates);
    cfg.test_block_value = j.value("test_block_value", cfg.test_block_value);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.exec.parallel = j.value("parallel", cfg.exec.parallel);
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("convergence study config: ") + e.what());
  }
}

nlohmann::json to_json(const ConvergenceReport& rep) {
  nlohmann::json cells = nlohmann::json::array();
  for (const ConvergenceCell& c : rep.cells) {
    cells.push_back({{"particles", c.particles},
                     {"mean_abs_error", c.mean_abs_error},
                     {"std_error", c.std_error},
                     {"bound", c.bound}});
  }
  return {{"cells", std::move(cells)},
          {"chi_square", rep.chi_square},
          {"target_value", rep.target_value},
          {"test_block_value", rep.test_block_value},
          {"slope", rep.slope}};
}

std::string to_csv(const ConvergenceReport& rep) {
  std::vector<std::vector<std::string>> rows;
  for (const ConvergenceCell& c : rep.cells) {
    rows.push_back({std::to_string(c.particles), format_double(c.mean_abs_error),
                    format_double(c.std_error), format_double(c.bound)});
  }
  return to_csv({"particles", "mean_abs_error", "std_error", "bound"}, rows);
}

// ---------------------------------------------------------------------------
// Bias study
// ---------------------------------------------------------------------------

BiasReport bias_study(const BiasStudyConfig& cfg) {
  if (cfg.replicates < 2) throw ConfigError("bias study: replicates must be >= 2");
  std::shared_ptr<const AutoregressiveModel> model = build_model(cfg.model);
  OracleTables tables =
      enumerate_power_target(*model, cfg.alpha, cfg.num_blocks, cfg.block_size);
  FiniteDistribution target = sequence_target(tables);

  BiasReport rep;
  for (const std::string& pot_name : cfg.potentials) {
    if (pot_name != "oracle" && pot_name != "inverse-oracle" && pot_name != "hash" &&
        pot_name != "unit") {
      throw ConfigError("bias study: unknown potential '" + pot_name + "'");
    }
    for (const std::string& corr_name : cfg.corrections) {
      const CorrectionMode corr = correction_from_name(corr_name);
      std::vector<double> tvs(static_cast<std::size_t>(cfg.replicates), 0.0);
      const int reps = cfg.replicates;
#pragma omp parallel for schedule(dynamic) if (cfg.exec.parallel)
      for (int r = 0; r < reps; ++r) {
        std::unique_ptr<SelectionPotential> potential;
        if (pot_name == "oracle") {
          potential = std::make_unique<OracleSuffixPotential>(tables, false);
        } else if (pot_name == "inverse-oracle") {
          potential = std::make_unique<OracleSuffixPotential>(tables, true);
        } else if (pot_name == "hash") {
          potential = std::make_unique<HashPotential>(cfg.potential_scale);
        } else {
          potential = std::make_unique<UnitPotential>();
        }
        EngineConfig e;
        e.alpha = cfg.alpha;
        e.block_size = cfg.block_size;
        e.max_tokens = cfg.num_blocks * cfg.block_size;
        e.particles = cfg.particles;
        e.proposal = cfg.proposal;
        e.ess_threshold = cfg.kappa;
        e.selection_strength = cfg.eta;
        e.resampling = cfg.resampling;
        e.correction = corr;
        e.keep_elite = false;  // isolate selection bias
        e.seed = cfg.seed + static_cast<std::uint64_t>(r);
        RunResult run = run_sampler(*model, e, potential.get());
        std::vector<double> dist = weighted_leaf_distribution(run, tables);
        tvs[static_cast<std::size_t>(r)] = tv_distance(dist, target.probs);
      }
      BiasCell cell;
      cell.potential = pot_name;
      cell.correction = corr_name;
      double mean = 0.0;
      for (double t : tvs) mean += t;
      mean /= static_cast<double>(reps);
      double var = 0.0;
      for (double t : tvs) var += (t - mean) * (t - mean);
      var /= static_cast<double>(reps - 1);
      cell.mean_tv = mean;
      cell.std_error = std::sqrt(var / static_cast<double>(reps));
      rep.cells.push_back(std::move(cell));
    }
  }
  return rep;
}

BiasStudyConfig bias_config_from_json(const nlohmann::json& j) {
  try {
    BiasStudyConfig cfg;
    if (j.contains("model")) cfg.model = model_spec_from_json(j.at("model"));
    cfg.alpha = j.value("alpha", cfg.alpha);
    cfg.num_blocks = j.value("num_blocks", cfg.num_blocks);
    cfg.block_size = j.value("block_size", cfg.block_size);
    if (j.contains("proposal")) cfg.proposal = proposal_from_json(j.at("proposal"));
    cfg.particles = j.value("particles", cfg.particles);
    cfg.replicates = j.value("replicates", cfg.replicates);
    cfg.kappa = j.value("kappa", cfg.kappa);
    cfg.eta = j.value("eta", cfg.eta);
    if (j.contains("resampling")) {
      cfg.resampling = resampling_from_name(j.at("resampling").get<std::string>());
    }
    cfg.potential_scale = j.value("potential_scale", cfg.potential_scale);
    if (j.contains("potentials")) {
      cfg.potentials = j.at("potentials").get<std::vector<std::string>>();
    }
    if (j.contains("corrections")) {
      cfg.corrections = j.at("corrections").get<std::vector<std::string>>();
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.exec.parallel = j.value("parallel", cfg.exec.parallel);
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bias study config: ") + e.what());
  }
}

nlohmann::json to_json(const BiasReport& rep) {
  nlohmann::json cells = nlohmann::json::array();
  for (const BiasCell& c : rep.cells) {
    cells.push_back({{"potential", c.potential},
                     {"correction", c.correction},
                     {"mean_tv", c.mean_tv},
                     {"std_error", c.std_error}});
  }
  return {{"cells", std::move(cells)}};
}

std::string to_csv(const BiasReport& rep) {
  std::vector<std::vector<std::string>> rows;
  for (const BiasCell& c : rep.cells) {
    rows.push_back({c.potential, c.correction, format_double(c.mean_tv),
                    format_double(c.std_error)});
  }
  return to_csv({"potential", "correction", "mean_tv", "std_error"}, rows);
}

// ---------------------------------------------------------------------------
// Planted-mode study
// ---------------------------------------------------------------------------

PlantedReport planted_study(const PlantedStudyConfig& cfg) {
  if (cfg.model.kind != "planted-mode") {
    throw ConfigError("planted study: model kind must be planted-mode");
  }
  std::shared_ptr<const AutoregressiveModel> model = build_model(cfg.model);
  std::optional<HeadParams> head;
  for (const std::string& m : cfg.methods) {
    if (m == "learned") {
      if (cfg.head_path.empty()) {
        throw ConfigError("planted study: 'learned' method requires head_path");
      }
      head = head_from_json(read_json_file(cfg.head_path));
    }
  }

  PlantedReport rep;
  for (const std::string& method : cfg.methods) {
    if (method != "p-only" && method != "rollout" && method != "learned") {
      throw ConfigError("planted study: unknown method '" + method + "'");
    }
    std::vector<char> hits(static_cast<std::size_t>(cfg.replicates), 0);
    const int reps = cfg.replicates;
#pragma omp parallel for schedule(dynamic) if (cfg.exec.parallel)
    for (int r = 0; r < reps; ++r) {
      std::unique_ptr<SelectionPotential> potential;
      if (method == "rollout") {
        RolloutConfig rc;
        rc.rollouts = cfg.rollouts;
        rc.horizon = cfg.horizon;
        potential = std::make_unique<RolloutPotential>(rc);
      } else if (method == "learned") {
        potential = std::make_unique<LearnedPotential>(*head);
      }
      EngineConfig e;
      e.alpha = cfg.alpha;
      e.block_size = 1;
      e.max_tokens = cfg.model.depth;
      e.particles = cfg.particles;
      e.proposal = cfg.proposal;
      e.ess_threshold = cfg.kappa;
      e.selection_strength = cfg.eta;
      e.finalize = FinalizeRule::best_score;
      e.seed = cfg.seed + static_cast<std::uint64_t>(r);
      RunResult run = run_sampler(*model, e, potential.get());
      hits[static_cast<std::size_t>(r)] =
          (!run.completion.empty() && run.completion.front() == cfg.model.trap_token) ? 1 : 0;
    }
    PlantedCell cell;
    cell.method = method;
    cell.replicates = reps;
    for (char h : hits) cell.recoveries += h;
    cell.rate = static_cast<double>(cell.recoveries) / static_cast<double>(reps);
    cell.std_error = std::sqrt(std::max(cell.rate * (1.0 - cell.rate), 1e-12) /
                               static_cast<double>(reps));
    rep.cells.push_back(std::move(cell));
  }
  return rep;
}

PlantedStudyConfig planted_config_from_json(const nlohmann::json& j) {
  try {
    PlantedStudyConfig cfg;
    if (j.contains("model")) cfg.model = model_spec_from_json(j.at("model"));
    cfg.alpha = j.value("alpha", cfg.alpha);
    if (j.contains("proposal")) cfg.proposal = proposal_from_json(j.at("proposal"));
    cfg.particles = j.value("particles", cfg.particles);
    cfg.replicates = j.value("replicates", cfg.replicates);
    cfg.kappa = j.value("kappa", cfg.kappa);
    cfg.eta = j.value("eta", cfg.eta);
    cfg.rollouts = j.value("rollouts", cfg.rollouts);
    cfg.horizon = j.value("horizon", cfg.horizon);
    if (j.contains("methods")) cfg.methods = j.at("methods").get<std::vector<std::string>>();
    cfg.head_path = j.value("head_path", cfg.head_path);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.exec.parallel = j.value("parallel", cfg.exec.parallel);
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("planted study config: ") + e.what());
  }
}

nlohmann::json to_json(const PlantedReport& rep) {
  nlohmann::json cells = nlohmann::json::array();
  for (const PlantedCell& c : rep.cells) {
    cells.push_back({{"method", c.method},
                     {"recoveries", c.recoveries},
                     {"replicates", c.replicates},
                     {"rate", c.rate},
                     {"std_error", c.std_error}});
  }
  return {{"cells", std::move(cells)}};
}

std::string to_csv(const PlantedReport& rep) {
  std::vector<std::vector<std::string>> rows;
  for (const PlantedCell& c : rep.cells) {
    rows.push_back({c.method, std::to_string(c.recoveries), std::to_string(c.replicates),
                    format_double(c.rate), format_double(c.std_error)});
  }
  return to_csv({"method", "recoveries", "replicates", "rate", "std_error"}, rows);
}

// ---------------------------------------------------------------------------
// Supervision collection
// ---------------------------------------------------------------------------

namespace {

class RecordingSink final : public SupervisionSink {
 public:
  void accept_group(std::int64_t group_id, const std::vector<std::vector<double>>& features,
                    const std::vector<double>& log_psi) override {
    for (std::size_t k = 0; k < features.size(); ++k) {
      BoundarySample s;
      s.features = features[k];
      s.target = log_psi[k];
      s.group = group_id;
      rows.push_back(std::move(s));
    }
  }

  Dataset rows;
};

}  // namespace

Dataset collect_supervision(const ExperimentConfig& base, int runs) {
  if (base.apf != "rollout") {
    throw ConfigError("collect_supervision: config must use the rollout potential");
  }
  if (runs < 1) throw ConfigError("collect_supervision: runs must be >= 1");
  RecordingSink sink;
  for (int run = 0; run < runs; ++run) {
    ExperimentConfig cfg = base;
    cfg.engine.seed = base.engine.seed + static_cast<std::uint64_t>(run);
    run_experiment(cfg, &sink);
  }
  return std::move(sink.rows);
}

}  // namespace apps
