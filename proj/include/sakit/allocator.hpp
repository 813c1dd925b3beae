#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sakit/checkpoint.hpp"
#include "sakit/flops.hpp"
#include "sakit/net_builder.hpp"

namespace sakit::alloc {

struct NeuronRecord {
  int block = 0;
  int scale = 0;          // factor
  int channel = 0;        // index within the scale's conv
  double gamma = 0;       // raw BN gamma
  double importance = 0;  // |gamma|
  std::int64_t cost = 0;  // O_kl, MACs per output neuron
};

struct ProjectionConfig {
  double exponent = 0;  // rank by V / cost^b
  int min_total_neurons_per_block = 1;
  void validate() const;
};

struct Selection {
  std::vector<std::size_t> selected;  // indices into the record list, rank order
  std::int64_t cost = 0;
  bool forced = false;  // budget admitted too few neurons; top-ranked ones were forced in
};

// Indices sorted by V/cost^b descending, ties by (scale asc, channel asc).
std::vector<std::size_t> rank_order(std::span<const NeuronRecord> records, const ProjectionConfig& config);

// Skip-and-continue greedy scan over rank order under sum(cost) <= budget.
Selection greedy_project(std::span<const NeuronRecord> records, std::int64_t budget,
                         const ProjectionConfig& config);

struct OracleResult {
  Selection greedy;              // what the greedy policy must select
  double knapsack_value = 0;     // max sum V subject to the budget
  std::vector<std::size_t> knapsack_set;
};

// Exhaustive reference for at most 24 records. The greedy scan selects the
// lexicographically greatest feasible subset in rank order; this finds it by
// enumerating every subset, with ranks derived by pairwise counting.
OracleResult brute_oracle(std::span<const NeuronRecord> records, std::int64_t budget,
                          const ProjectionConfig& config);

// Per-scale counts of a selection, aligned with `scale_factors`.
std::vector<int> scale_counts(std::span<const NeuronRecord> records, const Selection& s,
                              const std::vector<int>& scale_factors);

// One record per SA output channel of a seed network: V = |gamma| of the
// BN following each per-scale conv, cost from the block's grid.
std::vector<NeuronRecord> extract_importance(const Checkpoint& ckpt, const NetworkSpec& spec);

struct BlockResult {
  int block = 0;
  std::int64_t budget = 0;
  Selection selection;
  std::vector<int> counts;
};

struct ProjectionResult {
  net::AllocationPlan plan;
  std::vector<BlockResult> blocks;
};

// Greedy projection of every block; records are grouped by block.
ProjectionResult project_all(const std::vector<NeuronRecord>& records,
                             const std::vector<std::int64_t>& budgets,  // budgets[k-1]
                             const std::vector<int>& scale_factors, const ProjectionConfig& config);

// `k,scale,channel,gamma,abs_gamma,unit_cost`
std::string importance_csv(const std::vector<NeuronRecord>& records);
std::vector<NeuronRecord> parse_importance_csv(const std::string& text);
// `k,budget`
std::string budgets_csv(const std::vector<flops::BlockBudget>& budgets);
std::vector<std::int64_t> parse_budgets_csv(const std::string& text);

}  // namespace sakit::alloc
