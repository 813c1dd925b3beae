#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sakit/net_builder.hpp"
#include "sakit/network_spec.hpp"
#include "sakit/rf.hpp"

namespace sakit::report {

// Per-block C_l / sum(C_l).
std::vector<std::vector<double>> proportions(const net::AllocationPlan& plan);
// `k,s1,s2,...` with one column per factor, 3 decimals.
std::string proportions_csv(const net::AllocationPlan& plan);
// Stacked bars, one per block.
std::string proportions_svg(const net::AllocationPlan& plan);
// Min and max RF per block as two polylines.
std::string rf_svg(const std::vector<rf::BlockRF>& rows);

// proportions.{csv,svg} and rf.{csv,svg} under out_dir.
void emit_report(const net::AllocationPlan& plan, const std::vector<rf::BlockRF>& rf_rows,
                 const std::filesystem::path& out_dir);

struct BenchResult {
  int repeats = 0;
  int batch = 0;
  double mean_ms = 0;
  double p50_ms = 0;
  double p90_ms = 0;
  double min_ms = 0;
  std::int64_t macs = 0;  // per sample
};

// Times inference forward passes on zero input after `warmup` discarded runs.
BenchResult bench(const NetworkSpec& spec, int batch, int repeats, int warmup = 1);
std::string bench_csv(const BenchResult& r);

}  // namespace sakit::report
