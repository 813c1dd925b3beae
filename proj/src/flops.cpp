#include "sakit/flops.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "sakit/error.hpp"
#include "sakit/layers.hpp"

namespace sakit::flops {

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

std::int64_t elements(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

}  // namespace

std::int64_t neuron_cost(int in_channels, int factor, int height, int width) {
  if (factor <= 0) throw Error("scale factor must be positive");
  return 9LL * in_channels * ceil_div(height, factor) * ceil_div(width, factor);
}

std::int64_t neuron_cost(const sa::SABlockSpec& block, std::size_t scale_index, int height, int width) {
  if (scale_index >= block.scale_factors.size()) throw Error("scale index out of range");
  return neuron_cost(block.in_channels, block.scale_factors[scale_index], height, width);
}

BlockBudget block_budget(const nn::Conv2dSpec& baseline, int height, int width,
                         const std::vector<int>& scale_factors) {
  if (baseline.kernel != 3) throw Error("block budget needs a 3x3 baseline conv");
  BlockBudget b;
  b.in_channels = baseline.in_channels;
  b.base_channels = baseline.out_channels;
  b.height = baseline.out_dim(height);
  b.width = baseline.out_dim(width);
  b.budget = 9LL * baseline.in_channels * baseline.out_channels * b.height * b.width;
  b.scale_factors = scale_factors;
  for (int f : scale_factors) b.unit_costs.push_back(neuron_cost(b.in_channels, f, b.height, b.width));
  return b;
}

std::int64_t Report::block_cost(int block_index) const {
  std::int64_t s = 0;
  for (const auto& r : rows)
    if (r.block_index == block_index) s += r.subtotal;
  return s;
}

namespace {

struct BlockInfo {
  int in_channels = 0;
  int base = 0;
  int h = 0, w = 0;
  bool sa = false;
};

std::map<int, BlockInfo> collect_blocks(const NetworkSpec& spec, const std::vector<layers::CompiledLayer>& cl) {
  std::map<int, BlockInfo> blocks;
  for (std::size_t i = 0; i < cl.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string role = l.str_arg("role", "");
    if (role == "sa" && l.op == "conv") {
      auto& b = blocks[l.int_arg("block")];
      b.sa = true;
      b.in_channels = cl[static_cast<std::size_t>(cl[i].inputs[0])].shape[0];
    } else if (role == "sacat") {
      auto& b = blocks[l.int_arg("block")];
      b.sa = true;
      b.base = l.int_arg("base", 0);
      b.h = cl[i].shape[1];
      b.w = cl[i].shape[2];
    } else if (role == "mid" && l.op == "conv") {
      auto& b = blocks[l.int_arg("block")];
      b.in_channels = cl[static_cast<std::size_t>(cl[i].inputs[0])].shape[0];
      b.base = cl[i].shape[0];
      b.h = cl[i].shape[1];
      b.w = cl[i].shape[2];
    }
  }
  return blocks;
}

}  // namespace

Report network_flops(const NetworkSpec& spec, const CostModel& model) {
  const auto cl = layers::compile(spec);
  Report r;
  for (std::size_t i = 0; i < cl.size(); ++i) {
    const auto& c = cl[i];
    const LayerSpec& l = spec.layers[i];
    if (const auto* conv = std::get_if<layers::ConvOp>(&c.attrs)) {
      const auto& s = conv->spec;
      const std::int64_t macs = static_cast<std::int64_t>(s.out_channels) * s.in_channels * s.kernel *
                                s.kernel * c.shape[1] * c.shape[2];
      r.conv_macs += macs;
      const std::string role = l.str_arg("role", "");
      if (role == "sa" || role == "mid") {
        BlockRow row;
        row.block_index = l.int_arg("block");
        row.scale = role == "sa" ? l.int_arg("scale") : 1;
        row.channels = s.out_channels;
        row.unit_cost = macs / s.out_channels;
        row.subtotal = macs;
        r.rows.push_back(row);
      }
    } else if (const auto* d = std::get_if<layers::DenseOp>(&c.attrs)) {
      r.dense_macs += static_cast<std::int64_t>(d->in_features) * d->out_features;
    } else if (std::holds_alternative<layers::BatchNormOp>(c.attrs)) {
      if (model.count_bn) r.other += elements(c.shape);
    } else if (const auto* p = std::get_if<layers::PoolOp>(&c.attrs)) {
      if (model.count_pool) r.other += elements(c.shape) * p->spec.kernel * p->spec.kernel;
    } else if (std::holds_alternative<layers::ResizeOp>(c.attrs)) {
      if (model.count_resize) r.other += elements(c.shape);
    } else if (std::holds_alternative<layers::ReluOp>(c.attrs)) {
      if (model.count_relu) r.other += elements(c.shape);
    }
  }
  r.total_macs = r.conv_macs + r.dense_macs;
  r.total = (r.total_macs + r.other) * (model.mac_equals_one_flop ? 1 : 2);

  for (const auto& [k, info] : collect_blocks(spec, cl)) {
    BlockBudget b;
    b.block_index = k;
    b.in_channels = info.in_channels;
    b.base_channels = info.base;
    b.height = info.h;
    b.width = info.w;
    b.budget = 9LL * info.in_channels * info.base * info.h * info.w;
    r.budgets.push_back(b);
  }
  std::stable_sort(r.rows.begin(), r.rows.end(), [](const BlockRow& a, const BlockRow& b) {
    return a.block_index != b.block_index ? a.block_index < b.block_index : a.scale < b.scale;
  });
  for (auto& row : r.rows)
    for (const auto& b : r.budgets)
      if (b.block_index == row.block_index) row.budget = b.budget;
  return r;
}

std::vector<BlockBudget> block_budgets(const NetworkSpec& spec, const std::vector<int>& scale_factors) {
  const auto cl = layers::compile(spec);
  std::vector<BlockBudget> out;
  for (const auto& [k, info] : collect_blocks(spec, cl)) {
    if (info.base <= 0) throw ShapeError("block " + std::to_string(k), "no baseline width recorded");
    BlockBudget b;
    b.block_index = k;
    b.in_channels = info.in_channels;
    b.base_channels = info.base;
    b.height = info.h;
    b.width = info.w;
    b.budget = 9LL * info.in_channels * info.base * info.h * info.w;
    b.scale_factors = scale_factors;
    for (int f : scale_factors) b.unit_costs.push_back(neuron_cost(info.in_channels, f, info.h, info.w));
    out.push_back(std::move(b));
  }
  return out;
}

std::string report_csv(const Report& r) {
  std::ostringstream out;
  out << "k,scale,channels,unit_cost,subtotal,budget,utilization\n";
  auto util = [](std::int64_t num, std::int64_t den) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0);
    return std::string(buf);
  };
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& row = r.rows[i];
    out << row.block_index << ',' << row.scale << ',' << row.channels << ',' << row.unit_cost << ','
        << row.subtotal << ',' << row.budget << ',' << util(row.subtotal, row.budget) << '\n';
    const bool last = i + 1 == r.rows.size() || r.rows[i + 1].block_index != row.block_index;
    if (last) {
      int channels = 0;
      for (const auto& x : r.rows)
        if (x.block_index == row.block_index) channels += x.channels;
      const std::int64_t cost = r.block_cost(row.block_index);
      out << row.block_index << ",all," << channels << ",," << cost << ',' << row.budget << ','
          << util(cost, row.budget) << '\n';
    }
  }
  return out.str();
}

}  // namespace sakit::flops
