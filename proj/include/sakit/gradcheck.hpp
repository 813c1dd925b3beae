#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sakit/graph.hpp"

namespace sakit {

struct GradcheckOptions {
  double step = 1e-4;
  double tolerance = 1e-5;
  // Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
  // near-zero gradients from turning rounding noise into huge ratios.
  double floor = 1e-3;
  Mode mode = Mode::train;
  bool check_inputs = true;  // also check d(loss)/d(input node)
  // Applied to the analytic gradients before comparison (test fixtures).
  std::function<void(ParamMap<double>&)> grad_hook;
};

struct GradcheckEntry {
  std::string name;  // parameter name, or "input:<node>"
  double max_rel_error = 0;
  std::size_t checked = 0;
  bool passed = true;
  std::string note;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool passed() const {
    for (const auto& e : entries)
      if (!e.passed) return false;
    return true;
  }
  double max_rel_error() const {
    double m = 0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
};

double relative_error(double analytic, double numeric, double floor);

// Central finite differences over every trainable parameter element (and
// every fed input element when check_inputs) against backward().
GradcheckReport gradcheck(Graph<double>& graph, const Feed<double>& feed,
                          const std::string& loss_node, const GradcheckOptions& options = {});

}  // namespace sakit

namespace sakit {

struct OpSuiteResult {
  std::string op;
  int cases = 0;
  int failed = 0;
  double max_rel_error = 0;
  std::string worst_case;  // spec text of the case with the largest error
};

// Ops covered by op_gradcheck_suite, in report order.
const std::vector<std::string>& suite_ops();

// Gradient check of every op on `cases_per_op` random small shapes (f64).
// Inputs are distinct values spaced far wider than the FD step, so max-pool
// ties and ReLU kinks never sit inside the stencil.
std::vector<OpSuiteResult> op_gradcheck_suite(int cases_per_op, std::uint64_t seed,
                                              const GradcheckOptions& options = {});

}  // namespace sakit
