#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/rational.hpp>

#include "sakit/layers.hpp"
#include "sakit/network_spec.hpp"

// Theoretical receptive fields along the H axis, in input pixels.
namespace sakit::rf {

using Rational = boost::rational<std::int64_t>;

struct RFState {
  Rational jump{1};  // input pixels per output step
  Rational rf{1};    // input pixels spanned
  friend bool operator==(const RFState&, const RFState&) = default;
};

struct RFInterval {
  RFState min;
  RFState max;
  friend bool operator==(const RFInterval&, const RFInterval&) = default;
};

// Propagates through one node. `in_height` is the first input's H, needed
// for resize. Throws Error for ops with no spatial meaning (gap, dense, ...).
RFInterval rf_propagate(const layers::OpAttrs& op, std::span<const RFInterval> incoming, int in_height = 0);

// Interval at every node reachable from the inputs through supported ops;
// nullopt past the first unsupported op.
std::vector<std::optional<RFInterval>> rf_analyze(const NetworkSpec& spec);

struct BlockRF {
  int block_index = 0;
  RFInterval interval;
};

// Interval at each residual-unit output (`role=out`).
std::vector<BlockRF> rf_network_report(const NetworkSpec& spec);

// `block_index,min_rf,max_rf`; integers print exactly, fractions with 3 decimals.
std::string rf_csv(const std::vector<BlockRF>& rows);
std::string format_rational(const Rational& r);

// Per-channel influence extent (rows of the input) of the centre unit of
// `node`, found by perturbing one input row at a time in a copy of the
// network with positive constant weights, zero biases and identity BN.
// 0 means the channel was not influenced. Single-input specs only.
std::vector<int> rf_empirical_oracle(const NetworkSpec& spec, const std::string& node);

}  // namespace sakit::rf
