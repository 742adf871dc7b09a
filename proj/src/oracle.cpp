#include "apps/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "apps/errors.hpp"
#include "apps/logspace.hpp"

namespace apps {

// ---------------------------------------------------------------------------
// Finite distributions
// ---------------------------------------------------------------------------

FiniteDistribution make_distribution(std::vector<double> probs) {
  FiniteDistribution d;
  d.support.resize(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) d.support[i] = static_cast<std::int64_t>(i);
  d.probs = std::move(probs);
  return d;
}

namespace {

void check_aligned(const FiniteDistribution& a, const FiniteDistribution& b) {
  if (a.support != b.support) {
    throw ConfigError("finite distributions have mismatched supports");
  }
}

}  // namespace

double chi_square(const FiniteDistribution& target, const FiniteDistribution& proposal) {
  check_aligned(target, proposal);
  double s = 0.0;
  for (std::size_t i = 0; i < target.probs.size(); ++i) {
    const double p = target.probs[i];
    const double q = proposal.probs[i];
    if (p == 0.0) continue;
    if (q == 0.0) return std::numeric_limits<double>::infinity();
    s += p * p / q;
  }
  return s - 1.0;
}

FiniteDistribution effective_proposal(const FiniteDistribution& proposal,
                                      std::span<const double> psi) {
  if (psi.size() != proposal.probs.size()) {
    throw ConfigError("effective_proposal: psi size mismatch");
  }
  FiniteDistribution out;
  out.support = proposal.support;
  out.probs.resize(psi.size());
  double z = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    if (!(psi[i] > 0.0)) throw ConfigError("effective_proposal: psi must be positive");
    out.probs[i] = proposal.probs[i] * psi[i];
    z += out.probs[i];
  }
  for (double& p : out.probs) p /= z;
  return out;
}

CovarianceReport covariance_report(const FiniteDistribution& target,
                                   const FiniteDistribution& proposal,
                                   std::span<const double> psi) {
  check_aligned(target, proposal);
  CovarianceReport rep{};
  rep.chi_square_base = chi_square(target, proposal);
  FiniteDistribution eff = effective_proposal(proposal, psi);
  rep.chi_square_effective = chi_square(target, eff);

  // Normalize psi to unit proposal mean, then take the covariance under q.
  double mean_psi = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) mean_psi += proposal.probs[i] * psi[i];
  double e_r2 = 0.0, e_ratio = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    const double q = proposal.probs[i];
    if (q == 0.0) continue;
    const double r = target.probs[i] / q;
    const double psi_n = psi[i] / mean_psi;
    e_r2 += q * r * r;
    e_ratio += q * (r * r / psi_n);
  }
  rep.expectation_term = e_r2;
  // Cov(psi_n, r^2/psi_n) = E[r^2] - E[psi_n] E[r^2/psi_n], and E[psi_n] = 1.
  rep.covariance_term = e_r2 - e_ratio;
  rep.strict_reduction = rep.covariance_term > 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Block-tree enumeration
// ---------------------------------------------------------------------------

int OracleTables::find(int level, std::span<const TokenId> prefix) const {
  if (level < 0 || static_cast<std::size_t>(level) >= levels.size()) return -1;
  const std::vector<OracleNode>& nodes = levels[static_cast<std::size_t>(level)];
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::vector<TokenId>& p = nodes[i].prefix;
    if (p.size() == prefix.size() && std::equal(p.begin(), p.end(), prefix.begin())) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

namespace {

struct ChildAccumulator {
  std::vector<OracleNode>* out;
  std::size_t node_cap;
  std::size_t* total_nodes;
  int parent_index;
  double parent_log_mass;
  double alpha;
};

// Depth-first expansion of one block from `state`, accumulating base log
// probability. Stops early on absorption so blocks can be shorter than
// block_size.
void expand_block(const AutoregressiveModel& model, const ModelState& state,
                  std::vector<TokenId>& prefix, int remaining, double acc_log_p,
                  ChildAccumulator& acc) {
  if (remaining == 0 || state.terminal) {
    if (*acc.total_nodes >= acc.node_cap) {
      throw EnumerationLimitError("oracle enumeration exceeds node cap");
    }
    ++*acc.total_nodes;
    OracleNode child;
    child.prefix = prefix;
    child.state = state;
    child.parent = acc.parent_index;
    child.log_prefix_mass = acc.parent_log_mass + acc.alpha * acc_log_p;
    acc.out->push_back(std::move(child));
    return;
  }
  LogProbVector lp = model.next_log_probs(state);
  for (int v = 0; v < model.vocab_size(); ++v) {
    const double l = lp[static_cast<std::size_t>(v)];
    if (l == kNegInf) continue;
    prefix.push_back(static_cast<TokenId>(v));
    expand_block(model, model.advance(state, static_cast<TokenId>(v)), prefix, remaining - 1,
                 acc_log_p + l, acc);
    prefix.pop_back();
  }
}

}  // namespace

OracleTables enumerate_power_target(const AutoregressiveModel& model, double alpha,
                                    int num_blocks, int block_size, std::size_t node_cap) {
  if (num_blocks < 1) throw ConfigError("oracle: num_blocks must be at least 1");
  if (block_size < 1) throw ConfigError("oracle: block_size must be at least 1");
  if (!(alpha > 0.0)) throw ConfigError("oracle: alpha must be positive");

  OracleTables t;
  t.alpha = alpha;
  t.num_blocks = num_blocks;
  t.block_size = block_size;
  t.levels.resize(static_cast<std::size_t>(num_blocks) + 1);

  OracleNode root;
  root.state = model.initial_state();
  t.levels[0].push_back(std::move(root));
  std::size_t total_nodes = 1;

  for (int j = 0; j < num_blocks; ++j) {
    std::vector<OracleNode>& parents = t.levels[static_cast<std::size_t>(j)];
    std::vector<OracleNode>& children = t.levels[static_cast<std::size_t>(j) + 1];
    for (std::size_t pi = 0; pi < parents.size(); ++pi) {
      OracleNode& parent = parents[pi];
      parent.first_child = static_cast<int>(children.size());
      ChildAccumulator acc{&children, node_cap, &total_nodes, static_cast<int>(pi),
                           parent.log_prefix_mass, alpha};
      std::vector<TokenId> prefix = parent.prefix;
      if (parent.state.terminal) {
        // Absorbed: one empty continuation block with mass factor 1.
        expand_block(model, parent.state, prefix, 0, 0.0, acc);
      } else {
        expand_block(model, parent.state, prefix, block_size, 0.0, acc);
      }
      parent.num_children = static_cast<int>(children.size()) - parent.first_child;
    }
  }

  // Backward pass: suffix values bottom-up, then the normalizer and marginals.
  std::vector<OracleNode>& leaves = t.levels[static_cast<std::size_t>(num_blocks)];
  for (OracleNode& leaf : leaves) leaf.log_suffix_value = 0.0;
  std::vector<double> scratch;
  for (int j = num_blocks - 1; j >= 0; --j) {
    std::vector<OracleNode>& nodes = t.levels[static_cast<std::size_t>(j)];
    const std::vector<OracleNode>& children = t.levels[static_cast<std::size_t>(j) + 1];
    for (OracleNode& node : nodes) {
      scratch.clear();
      for (int c = 0; c < node.num_children; ++c) {
        const OracleNode& child = children[static_cast<std::size_t>(node.first_child + c)];
        scratch.push_back(child.log_prefix_mass - node.log_prefix_mass +
                          child.log_suffix_value);
      }
      node.log_suffix_value = log_sum_exp(scratch);
    }
  }
  t.log_normalizer = t.levels[0][0].log_suffix_value;  // gamma_0 = 1

  for (std::vector<OracleNode>& level : t.levels) {
    for (OracleNode& node : level) {
      node.prefix_marginal =
          std::exp(node.log_prefix_mass + node.log_suffix_value - t.log_normalizer);
    }
  }
  return t;
}

FiniteDistribution next_block_conditional(const OracleTables& tables, int level, int node) {
  const OracleNode& parent = tables.levels.at(static_cast<std::size_t>(level))
                                 .at(static_cast<std::size_t>(node));
  const std::vector<OracleNode>& children = tables.levels.at(static_cast<std::size_t>(level) + 1);
  FiniteDistribution d;
  for (int c = 0; c < parent.num_children; ++c) {
    const int ci = parent.first_child + c;
    const OracleNode& child = children[static_cast<std::size_t>(ci)];
    d.support.push_back(ci);
    d.probs.push_back(std::exp(child.log_prefix_mass - parent.log_prefix_mass +
                               child.log_suffix_value - parent.log_suffix_value));
  }
  return d;
}

FiniteDistribution sequence_target(const OracleTables& tables) {
  const std::vector<OracleNode>& leaves = tables.levels.back();
  FiniteDistribution d;
  d.support.resize(leaves.size());
  d.probs.resize(leaves.size());
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    d.support[i] = static_cast<std::int64_t>(i);
    d.probs[i] = leaves[i].prefix_marginal;
  }
  return d;
}

std::vector<double> proposal_sequence_log_probs(const AutoregressiveModel& model,
                                                const OracleTables& tables,
                                                const ProposalConfig& proposal) {
  // Walk each level once, extending parent log q by the block's tokens.
  std::vector<std::vector<double>> level_log_q(tables.levels.size());
  level_log_q[0] = {0.0};
  for (std::size_t j = 0; j + 1 < tables.levels.size(); ++j) {
    const std::vector<OracleNode>& parents = tables.levels[j];
    const std::vector<OracleNode>& children = tables.levels[j + 1];
    level_log_q[j + 1].assign(children.size(), 0.0);
    for (std::size_t pi = 0; pi < parents.size(); ++pi) {
      const OracleNode& parent = parents[pi];
      for (int c = 0; c < parent.num_children; ++c) {
        const std::size_t ci = static_cast<std::size_t>(parent.first_child + c);
        const OracleNode& child = children[ci];
        ModelState state = parent.state;
        double acc = level_log_q[j][pi];
        for (std::size_t k = parent.prefix.size(); k < child.prefix.size(); ++k) {
          LogProbVector q = proposal_log_probs(model.next_log_probs(state), proposal);
          const TokenId tok = child.prefix[k];
          acc += q[static_cast<std::size_t>(tok)];
          state = model.advance(state, tok);
        }
        level_log_q[j + 1][ci] = acc;
      }
    }
  }
  return level_log_q.back();
}

double log_truncated_power_mass(const AutoregressiveModel& model, const ModelState& state,
                                int horizon, double alpha) {
  if (horizon == 0 || state.terminal) return 0.0;
  LogProbVector lp = model.next_log_probs(state);
  std::vector<double> terms;
  for (int v = 0; v < model.vocab_size(); ++v) {
    const double l = lp[static_cast<std::size_t>(v)];
    if (l == kNegInf) continue;
    const double tail = log_truncated_power_mass(model, model.advance(state, static_cast<TokenId>(v)),
                                                 horizon - 1, alpha);
    terms.push_back(alpha * l + tail);
  }
  return log_sum_exp(terms);
}

nlohmann::json to_json(const OracleTables& tables) {
  nlohmann::json j{{"alpha", tables.alpha},
                   {"num_blocks", tables.num_blocks},
                   {"block_size", tables.block_size},
                   {"log_normalizer", tables.log_normalizer}};
  nlohmann::json levels = nlohmann::json::array();
  for (const std::vector<OracleNode>& level : tables.levels) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const OracleNode& node : level) {
      nodes.push_back({{"prefix", node.prefix},
                       {"parent", node.parent},
                       {"log_prefix_mass", node.log_prefix_mass},
                       {"log_suffix_value", node.log_suffix_value},
                       {"prefix_marginal", node.prefix_marginal}});
    }
    levels.push_back(std::move(nodes));
  }
  j["levels"] = std::move(levels);
  return j;
}

}  // namespace apps
