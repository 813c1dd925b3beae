#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sakit/allocator.hpp"
#include "sakit/data.hpp"
#include "sakit/net_builder.hpp"
#include "sakit/sa_block.hpp"
#include "sakit/train.hpp"

namespace sakit::pipeline {

struct DataConfig {
  std::string dataset = "synthetic";  // synthetic | cifar10 | cifar100 | folder
  std::filesystem::path data_dir;     // cifar: binaries; folder: <dir>/train, <dir>/val
  int classes = 10;                   // synthetic only
  int train_per_class = 100;
  int val_per_class = 30;
  int size = 16;
  std::uint64_t seed = 0;
};

struct Splits {
  data::Dataset train, val;  // val carries the train stats
};
Splits load_data(const DataConfig& config);

struct ArchConfig {
  std::string preset = "cifar-n1";
  std::optional<int> classes;  // defaults to the dataset's class count
  std::optional<int> input;    // square input side override
  std::vector<int> scales;     // empty: preset default
  sa::Downsample downsample = sa::Downsample::max;
};

// Which network a command operates on.
enum class Variant { baseline, seed, even, scalenet };
Variant parse_variant(const std::string& s);

net::Architecture base_arch(const ArchConfig& config);
std::vector<int> scales_of(const ArchConfig& config, const net::Architecture& base);
// `plan` is required for Variant::scalenet and ignored otherwise.
net::Architecture make_arch(const ArchConfig& config, Variant v, const std::optional<net::AllocationPlan>& plan = {});

struct PipelineConfig {
  ArchConfig arch;
  DataConfig data;
  train::TrainConfig train;  // used for both the seed and the final network
  alloc::ProjectionConfig projection;
  std::filesystem::path out_dir = "pipeline_out";
  bool resume = false;  // reuse finished stages found in out_dir
};

struct PipelineResult {
  net::AllocationPlan plan;
  net::AllocationPlan even;
  std::vector<alloc::BlockResult> blocks;
  train::EvalResult seed_eval;
  train::EvalResult final_eval;
  double base_gflops = 0, seed_gflops = 0, final_gflops = 0;
  bool budgets_ok = false;
  bool differs_from_even = false;
  std::vector<std::string> resumed;  // stages skipped because their artifacts existed
};

using Log = std::function<void(const std::string&)>;

// Seed train -> importance -> projection -> plan -> ScaleNet -> retrain
// from scratch -> report. Artifacts land under out_dir (see README).
PipelineResult run_pipeline(const PipelineConfig& config, const Log& log = {});

struct AblationRow {
  sa::Downsample mode = sa::Downsample::max;
  double val_top1 = 0;
  double val_top5 = 0;
  double gflops = 0;
  std::int64_t params = 0;
};

// Trains the ScaleNet built from `plan` (even allocation when empty) once
// per downsampling mode and writes ablation.csv to out_dir.
std::vector<AblationRow> run_ablation(const PipelineConfig& config, const std::vector<sa::Downsample>& modes,
                                      const std::optional<net::AllocationPlan>& plan = {}, const Log& log = {});
std::string ablation_csv(const std::vector<AblationRow>& rows);

std::int64_t parameter_count(const NetworkSpec& spec);

}  // namespace sakit::pipeline
