// Command-line front end.
//
// Subcommands:
//   run         one sampler run, optional trace/result files and oracle check
//   baseline    ancestral / low-temperature / best-of-n reference decoding
//   study       convergence | bias | planted replication studies
//   collect     gather rollout supervision into a JSONL dataset
//   train-head  fit the learned value head from a supervision dataset
//   oracle      enumerate and dump exact target tables
//
// Exit codes: 0 success, 1 usage error, 2 invalid configuration, 3 runtime
// failure.

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "apps/engine.hpp"
#include "apps/errors.hpp"
#include "apps/io.hpp"
#include "apps/logspace.hpp"
#include "apps/model.hpp"
#include "apps/oracle.hpp"
#include "apps/studies.hpp"
#include "apps/value_head.hpp"

namespace {

using namespace apps;

struct CommonOverrides {
  std::optional<double> alpha;
  std::optional<int> particles;
  std::optional<int> block_size;
  std::optional<double> eta;
  std::optional<double> kappa;
  std::optional<std::string> apf;
  std::optional<int> rollouts;
  std::optional<int> horizon;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> correction;
  std::optional<bool> dynamic_allocation;
  std::optional<std::string> head_path;
  bool parallel = false;
};

void add_overrides(CLI::App* cmd, CommonOverrides& ov) {
  cmd->add_option("--alpha", ov.alpha, "Power applied to model probabilities");
  cmd->add_option("--particles", ov.particles, "Population size");
  cmd->add_option("--block-size", ov.block_size, "Tokens per block");
  cmd->add_option("--eta", ov.eta, "Selection potential strength");
  cmd->add_option("--kappa", ov.kappa, "ESS resampling threshold in [0,1]; 0 disables");
  cmd->add_option("--apf", ov.apf, "Selection potential: none|rollout|learned");
  cmd->add_option("--rollouts", ov.rollouts, "Rollouts per state");
  cmd->add_option("--horizon", ov.horizon, "Rollout horizon in tokens");
  cmd->add_option("--seed", ov.seed, "Base random seed");
  cmd->add_option("--correction", ov.correction, "Resampling weights: heuristic|corrected");
  cmd->add_option("--dynamic-allocation", ov.dynamic_allocation,
                  "Adapt population size to boundary ambiguity");
  cmd->add_option("--head", ov.head_path, "Learned head parameter file");
  cmd->add_flag("--parallel", ov.parallel, "Run data-parallel kernels with OpenMP");
}

ExperimentConfig load_experiment(const std::string& config_path, const CommonOverrides& ov) {
  ExperimentConfig cfg;
  if (!config_path.empty()) cfg = experiment_from_json(read_json_file(config_path));
  if (ov.alpha) cfg.engine.alpha = *ov.alpha;
  if (ov.particles) cfg.engine.particles = *ov.particles;
  if (ov.block_size) cfg.engine.block_size = *ov.block_size;
  if (ov.eta) cfg.engine.selection_strength = *ov.eta;
  if (ov.kappa) cfg.engine.ess_threshold = *ov.kappa;
  if (ov.apf) cfg.apf = *ov.apf;
  if (ov.rollouts) cfg.rollout.rollouts = *ov.rollouts;
  if (ov.horizon) cfg.rollout.horizon = *ov.horizon;
  if (ov.seed) cfg.engine.seed = *ov.seed;
  if (ov.correction) {
    nlohmann::json j{{"correction", *ov.correction}};
    cfg.engine.correction = experiment_from_json(j).engine.correction;
  }
  if (ov.dynamic_allocation) cfg.engine.dynamic_allocation = *ov.dynamic_allocation;
  if (ov.head_path) cfg.head_path = *ov.head_path;
  if (ov.parallel) cfg.engine.exec.parallel = true;
  if (cfg.apf != "none" && cfg.apf != "rollout" && cfg.apf != "learned") {
    throw ConfigError("apf must be 'none', 'rollout' or 'learned'");
  }
  return cfg;
}

int cmd_run(const std::string& config_path, const CommonOverrides& ov,
            const std::string& trace_path, const std::string& output_path,
            bool oracle_check) {
  ExperimentConfig cfg = load_experiment(config_path, ov);
  RunResult result = run_experiment(cfg);

  if (!trace_path.empty()) {
    std::vector<nlohmann::json> lines;
    for (const BoundaryRecord& rec : result.trace) lines.push_back(to_json(rec));
    write_text_file(trace_path, to_jsonl(lines));
  }
  nlohmann::json out = to_json(result);
  out["config"] = to_json(cfg);

  if (oracle_check) {
    std::shared_ptr<const AutoregressiveModel> model = build_model(cfg.model);
    const int blocks =
        (cfg.engine.max_tokens + cfg.engine.block_size - 1) / cfg.engine.block_size;
    OracleTables tables =
        enumerate_power_target(*model, cfg.engine.alpha, blocks, cfg.engine.block_size);
    FiniteDistribution target = sequence_target(tables);
    std::vector<double> empirical = weighted_leaf_distribution(result, tables);
    out["oracle_check"] = {{"log_normalizer", tables.log_normalizer},
                           {"tv_to_target", tv_distance(empirical, target.probs)},
                           {"leaves", target.probs.size()}};
  }

  const std::string dump = out.dump(2) + "\n";
  if (output_path.empty()) {
    std::cout << dump;
  } else {
    write_text_file(output_path, dump);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blockwise particle sampler for power-distributed sequences"};
  app.require_subcommand(1);

  // run
  auto* run_cmd = app.add_subcommand("run", "Run the sampler once");
  std::string run_config, run_trace, run_output;
  bool run_oracle_check = false;
  CommonOverrides run_ov;
  run_cmd->add_option("--config", run_config, "Experiment config JSON");
  run_cmd->add_option("--trace", run_trace, "Write per-boundary JSONL trace here");
  run_cmd->add_option("--output", run_output, "Write the run result JSON here");
  run_cmd->add_flag("--oracle-check", run_oracle_check,
                    "Compare the weighted empirical law against exhaustive enumeration");
  add_overrides(run_cmd, run_ov);

  // baseline
  auto* base_cmd = app.add_subcommand("baseline", "Reference decoding without selection");
  std::string base_config, base_method = "ancestral";
  int base_n = 16;
  CommonOverrides base_ov;
  base_cmd->add_option("--config", base_config, "Experiment config JSON (model and budget)");
  base_cmd->add_option("--method", base_method, "ancestral|low-temperature|best-of-n");
  base_cmd->add_option("--n", base_n, "Draw count for best-of-n");
  add_overrides(base_cmd, base_ov);

  // study
  auto* study_cmd = app.add_subcommand("study", "Replication studies");
  std::string study_kind, study_config, study_out;
  bool study_parallel = false;
  study_cmd->add_option("kind", study_kind, "convergence|bias|planted")->required();
  study_cmd->add_option("--config", study_config, "Study config JSON");
  study_cmd->add_option("--out", study_out, "Directory for report.json and report.csv");
  study_cmd->add_flag("--parallel", study_parallel, "Parallelize over replicates");

  // collect
  auto* collect_cmd = app.add_subcommand("collect", "Collect rollout supervision");
  std::string collect_config, collect_out = "supervision.jsonl";
  int collect_runs = 100;
  CommonOverrides collect_ov;
  collect_cmd->add_option("--config", collect_config, "Experiment config JSON");
  collect_cmd->add_option("--runs", collect_runs, "Number of collection runs");
  collect_cmd->add_option("--out", collect_out, "Output dataset path");
  add_overrides(collect_cmd, collect_ov);

  // train-head
  auto* train_cmd = app.add_subcommand("train-head", "Fit the learned value head");
  std::string train_data, train_out = "head.json", train_log;
  double train_val_fraction = 0.2;
  std::uint64_t train_seed = 0;
  train_cmd->add_option("--data", train_data, "Supervision dataset (JSONL)")->required();
  train_cmd->add_option("--out", train_out, "Where to write head parameters");
  train_cmd->add_option("--log", train_log, "Optional training log CSV");
  train_cmd->add_option("--val-fraction", train_val_fraction, "Group fraction held out");
  train_cmd->add_option("--seed", train_seed, "Training seed");

  // oracle
  auto* oracle_cmd = app.add_subcommand("oracle", "Dump exact enumeration tables");
  std::string oracle_config, oracle_out;
  int oracle_blocks = 2;
  CommonOverrides oracle_ov;
  oracle_cmd->add_option("--config", oracle_config, "Experiment config JSON (model, alpha)");
  oracle_cmd->add_option("--blocks", oracle_blocks, "Number of blocks to enumerate");
  oracle_cmd->add_option("--out", oracle_out, "Output path (stdout when omitted)");
  add_overrides(oracle_cmd, oracle_ov);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*run_cmd) {
      return cmd_run(run_config, run_ov, run_trace, run_output, run_oracle_check);
    }
    if (*base_cmd) {
      ExperimentConfig cfg = load_experiment(base_config, base_ov);
      BaselineKind kind;
      if (base_method == "ancestral") {
        kind = BaselineKind::ancestral;
      } else if (base_method == "low-temperature") {
        kind = BaselineKind::low_temperature;
      } else if (base_method == "best-of-n") {
        kind = BaselineKind::best_of_n;
      } else {
        throw ConfigError("baseline method must be ancestral|low-temperature|best-of-n");
      }
      std::shared_ptr<const AutoregressiveModel> model = build_model(cfg.model);
      BaselineResult r = run_baseline(*model, kind, cfg.engine.alpha, cfg.engine.max_tokens,
                                      base_n, cfg.engine.seed);
      std::cout << nlohmann::json{{"method", base_method},
                                  {"completion", r.completion},
                                  {"log_p", r.log_p},
                                  {"draws", r.draws}}
                       .dump(2)
                << "\n";
      return 0;
    }
    if (*study_cmd) {
      nlohmann::json cfg_json = nlohmann::json::object();
      if (!study_config.empty()) cfg_json = read_json_file(study_config);
      if (study_parallel) cfg_json["parallel"] = true;
      nlohmann::json report;
      std::string csv;
      if (study_kind == "convergence") {
        ConvergenceReport rep = convergence_study(convergence_config_from_json(cfg_json));
        report = to_json(rep);
        csv = to_csv(rep);
      } else if (study_kind == "bias") {
        BiasReport rep = bias_study(bias_config_from_json(cfg_json));
        report = to_json(rep);
        csv = to_csv(rep);
      } else if (study_kind == "planted") {
        PlantedReport rep = planted_study(planted_config_from_json(cfg_json));
        report = to_json(rep);
        csv = to_csv(rep);
      } else {
        throw ConfigError("study kind must be convergence|bias|planted");
      }
      if (study_out.empty()) {
        std::cout << report.dump(2) << "\n";
      } else {
        std::filesystem::create_directories(study_out);
        write_text_file(study_out + "/report.json", report.dump(2) + "\n");
        write_text_file(study_out + "/report.csv", csv);
        std::cout << "wrote " << study_out << "/report.json and report.csv\n";
      }
      return 0;
    }
    if (*collect_cmd) {
      ExperimentConfig cfg = load_experiment(collect_config, collect_ov);
      if (cfg.apf == "none") cfg.apf = "rollout";
      Dataset data = collect_supervision(cfg, collect_runs);
      write_text_file(collect_out, dataset_to_jsonl(data));
      std::cout << "wrote " << data.size() << " rows to " << collect_out << "\n";
      return 0;
    }
    if (*train_cmd) {
      std::ifstream in(train_data);
      if (!in) throw ConfigError("cannot open dataset: " + train_data);
      std::string content((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
      Dataset all = filter_degenerate_groups(dataset_from_jsonl(content));
      if (all.empty()) throw ConfigError("dataset has no usable groups after filtering");
      auto [train_set, val_set] = split_by_group(all, train_val_fraction, train_seed);
      TrainConfig tc;
      tc.seed = train_seed;
      TrainResult result = train_head(train_set, val_set, tc);
      write_text_file(train_out, to_json(result.params).dump(2) + "\n");
      if (!train_log.empty()) {
        std::vector<std::vector<std::string>> rows;
        for (const EpochStats& s : result.history) {
          rows.push_back({std::to_string(s.epoch), format_double(s.train_loss),
                          format_double(s.val_loss), format_double(s.lr),
                          format_double(s.val_metrics.top_one_agreement),
                          format_double(s.val_metrics.pairwise_accuracy),
                          format_double(s.val_metrics.pearson),
                          format_double(s.val_metrics.pointwise_mae)});
        }
        write_text_file(train_log,
                        to_csv({"epoch", "train_loss", "val_loss", "lr", "top_one",
                                "pairwise", "pearson", "pointwise_mae"},
                               rows));
      }
      nlohmann::json summary = to_json(result.val_metrics);
      summary["best_epoch"] = result.best_epoch;
      summary["epochs_run"] = result.history.size();
      std::cout << summary.dump(2) << "\n";
      return 0;
    }
    if (*oracle_cmd) {
      ExperimentConfig cfg = load_experiment(oracle_config, oracle_ov);
      std::shared_ptr<const AutoregressiveModel> model = build_model(cfg.model);
      OracleTables tables = enumerate_power_target(*model, cfg.engine.alpha, oracle_blocks,
                                                   cfg.engine.block_size);
      const std::string dump = to_json(tables).dump(2) + "\n";
      if (oracle_out.empty()) {
        std::cout << dump;
      } else {
        write_text_file(oracle_out, dump);
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
