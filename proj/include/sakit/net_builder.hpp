#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sakit/network_spec.hpp"
#include "sakit/sa_block.hpp"

namespace sakit::net {

// Per-block SA channel counts, one row per SA block in network order.
struct AllocationPlan {
  std::vector<int> scale_factors;
  std::vector<std::vector<int>> rows;  // rows[k-1] = C_1..C_L of block k
  // metadata
  std::string source;                  // checkpoint or run the plan came from
  std::optional<double> exponent;      // importance exponent b
  std::vector<std::int64_t> budgets;   // O_k per block, MACs

  std::size_t blocks() const { return rows.size(); }
  void validate() const;  // throws Error
  std::string serialize() const;
  static AllocationPlan parse(std::string_view text);  // ParseError with line numbers

  friend bool operator==(const AllocationPlan&, const AllocationPlan&) = default;
};

AllocationPlan load_plan(const std::string& path);
void save_plan(const std::string& path, const AllocationPlan& plan);

enum class Stem { imagenet, cifar };

struct Bottleneck {
  int in_channels = 0;
  int mid_channels = 0;   // width of the baseline 3x3 conv
  int out_channels = 0;
  int stride = 1;         // baseline form: stride of the 3x3 conv
  bool pool_before = false;  // ScaleNet form: 2x2 max pool ahead of the unit
  // Set when the 3x3 conv is replaced by an SA block.
  std::optional<std::vector<int>> sa_channels;
};

struct Architecture {
  std::string name;
  std::string label;      // human-facing name, may differ from the layer count
  Shape input;            // CxHxW
  int num_classes = 0;
  Stem stem = Stem::imagenet;
  std::vector<std::vector<Bottleneck>> stages;
  std::vector<int> scale_factors;  // used by SA blocks
  sa::Downsample downsample = sa::Downsample::max;

  int block_count() const;
  int sa_block_count() const;
  // Weighted layers on the main path (stem conv, three convs per
  // bottleneck, classifier); projection shortcuts are not counted.
  int weighted_layers() const;
  std::vector<const Bottleneck*> blocks() const;
  std::vector<Bottleneck*> blocks();
};

Architecture build_resnet(int depth, int num_classes = 1000);
Architecture build_cifar_resnet(int n, int num_classes = 100);

// Replaces every bottleneck 3x3 with an SA block carrying the plan row;
// strided units become 2x2 max pool + stride-1 unit.
Architecture build_scalenet(const Architecture& base, const AllocationPlan& plan);
Architecture build_seed(const Architecture& base, const std::vector<int>& scale_factors);
AllocationPlan even_allocation(const Architecture& base, const std::vector<int>& scale_factors);
AllocationPlan plan_of(const Architecture& arch);  // throws if arch has no SA blocks

std::vector<int> default_scales(const Architecture& base);

// Flat DAG: image/labels inputs, stem, units, gap, fc, loss.
NetworkSpec lower(const Architecture& arch);

// Baseline presets: resnet50|resnet101|resnet152 and cifar-n<k>.
Architecture preset(const std::string& name, std::optional<int> num_classes = std::nullopt);

}  // namespace sakit::net
