#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sakit/network_spec.hpp"
#include "sakit/tensor.hpp"

namespace sakit::sa {

// How each coarse branch reaches ceil(H/s) x ceil(W/s). `max` is the
// standard block; the others exist for the downsampling ablation and keep
// the per-scale conv cost identical.
enum class Downsample { max, avg, conv, dilated };

Downsample parse_downsample(const std::string& s);
std::string downsample_name(Downsample d);

struct SABlockSpec {
  int in_channels = 0;
  std::vector<int> scale_factors;
  std::vector<int> per_scale_channels;
  int block_index = 0;
  Downsample downsample = Downsample::max;
  // Output channels of the 3x3 conv this block replaces; recorded on the
  // concat node so budgets can be recovered from the graph. 0 = unknown.
  int base_channels = 0;

  int out_channels() const;
  void validate() const;  // throws ShapeError
};

enum class Shortcut { identity, projection };

struct SAResidualSpec {
  int in_channels = 0;
  int reduce_channels = 0;
  SABlockSpec sa;
  int expand_channels = 0;
  Shortcut shortcut = Shortcut::identity;
};

// A tensor inside a graph under construction: node name and CxHxW shape.
struct Port {
  std::string node;
  Shape shape;

  int channels() const { return shape.at(0); }
  int height() const { return shape.at(1); }
  int width() const { return shape.at(2); }
};

// Appends layers to a NetworkSpec in topological order.
class SpecWriter {
 public:
  explicit SpecWriter(std::string network_name) { spec_.name = std::move(network_name); }

  LayerSpec& add(std::string name, std::string op, std::vector<std::string> inputs = {}) {
    LayerSpec l;
    l.name = std::move(name);
    l.op = std::move(op);
    l.inputs = std::move(inputs);
    spec_.layers.push_back(std::move(l));
    return spec_.layers.back();
  }

  NetworkSpec& spec() { return spec_; }
  NetworkSpec take() { return std::move(spec_); }

 private:
  NetworkSpec spec_;
};

// Adds `prefix.{conv,bn,relu}` style nodes for one conv + BN (+ ReLU).
Port add_conv_bn(SpecWriter& w, const std::string& name, const Port& in, int out, int k, int s,
                 int p, bool relu);

// Per-scale branches (pool -> 3x3 conv -> BN -> ReLU -> resize) concatenated
// in the listed order. Zero-channel scales produce no nodes. Nodes are
// named `<prefix>.s<factor>.<part>` and `<prefix>.cat`.
Port build_sa_block(SpecWriter& w, const SABlockSpec& spec, const std::string& prefix, const Port& in);

// 1x1 reduce -> SA block -> 1x1 expand -> add shortcut -> ReLU. The final
// ReLU is `<prefix>.out`.
Port build_sa_residual(SpecWriter& w, const SAResidualSpec& spec, const std::string& prefix,
                       const Port& in);

// Standalone network `input -> SA block` for tests and tools.
NetworkSpec sa_block_network(const SABlockSpec& spec, int height, int width);

}  // namespace sakit::sa
