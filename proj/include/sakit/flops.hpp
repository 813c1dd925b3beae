#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sakit/network_spec.hpp"
#include "sakit/nn_ops.hpp"
#include "sakit/sa_block.hpp"

// Multiply-accumulate accounting. All counts are per sample.
namespace sakit::flops {

struct CostModel {
  bool count_bn = false;      // 1 per output element
  bool count_pool = false;    // k*k per output element
  bool count_resize = false;  // 1 per output element
  bool count_relu = false;    // 1 per output element
  bool mac_equals_one_flop = true;  // otherwise 1 MAC = 2 FLOPs
};

// 9 * C_in * ceil(H/s) * ceil(W/s)
std::int64_t neuron_cost(const sa::SABlockSpec& block, std::size_t scale_index, int height, int width);
std::int64_t neuron_cost(int in_channels, int factor, int height, int width);

struct BlockBudget {
  int block_index = 0;
  std::int64_t budget = 0;                 // O_k
  int in_channels = 0;
  int base_channels = 0;                   // C_out of the replaced 3x3
  int height = 0, width = 0;               // SA block output grid
  std::vector<int> scale_factors;
  std::vector<std::int64_t> unit_costs;    // O_kl, aligned with scale_factors
};

// O_k = 9 * C_in * C_out * H_out * W_out for a 3x3 baseline conv.
BlockBudget block_budget(const nn::Conv2dSpec& baseline, int height, int width,
                         const std::vector<int>& scale_factors = {1});

struct BlockRow {
  int block_index = 0;
  int scale = 0;            // factor
  int channels = 0;
  std::int64_t unit_cost = 0;
  std::int64_t subtotal = 0;
  std::int64_t budget = 0;
};

struct Report {
  std::int64_t total = 0;            // in the model's unit
  std::int64_t total_macs = 0;
  std::int64_t conv_macs = 0;
  std::int64_t dense_macs = 0;
  std::int64_t other = 0;            // bn/pool/resize/relu when counted
  std::vector<BlockRow> rows;        // SA per-scale rows, or one row per plain 3x3 block
  std::vector<BlockBudget> budgets;  // one per annotated block

  // SA-internal 3x3 cost of block k (sum of its rows).
  std::int64_t block_cost(int block_index) const;
  double gflops() const { return static_cast<double>(total) / 1e9; }
};

Report network_flops(const NetworkSpec& spec, const CostModel& model = {});

// Budgets of every SA block (or plain 3x3 block) in spec, recovered from
// node annotations. Unit costs are computed for `scale_factors` at each
// block's grid.
std::vector<BlockBudget> block_budgets(const NetworkSpec& spec, const std::vector<int>& scale_factors);

// `k,scale,channels,unit_cost,subtotal,budget,utilization`; each block is
// followed by an aggregate row with scale `all`.
std::string report_csv(const Report& r);

}  // namespace sakit::flops
