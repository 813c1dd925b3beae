#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sakit/layers.hpp"
#include "sakit/network_spec.hpp"
#include "sakit/nn_ops.hpp"
#include "sakit/rng.hpp"
#include "sakit/tensor.hpp"

namespace sakit {

template <class T>
using ParamMap = std::map<std::string, BasicTensor<T>>;

enum class Mode { train, infer };

template <class T>
struct Feed {
  std::map<std::string, BasicTensor<T>> tensors;     // input nodes, batch-first
  std::map<std::string, std::vector<int>> labels;    // labels nodes
};

// Static computation graph compiled once from a NetworkSpec. forward()
// caches every node output; backward() runs reverse-mode differentiation
// from a scalar node and fills grads() for every trainable parameter
// (parameters off the loss path get zeros).
template <class T>
class Graph {
 public:
  explicit Graph(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<layers::CompiledLayer>& compiled() const { return layers_; }

  ParamMap<T>& params() { return params_; }
  const ParamMap<T>& params() const { return params_; }
  ParamMap<T>& buffers() { return buffers_; }
  const ParamMap<T>& buffers() const { return buffers_; }
  ParamMap<T>& grads() { return grads_; }
  const ParamMap<T>& grads() const { return grads_; }

  void forward(const Feed<T>& feed, Mode mode);
  void backward(std::string_view loss_node);

  const BasicTensor<T>& value(std::string_view node) const;
  // Gradient reaching a node during the last backward (zeros if none).
  BasicTensor<T> node_grad(std::string_view node) const;
  // Nodes whose output feeds nothing, mapped to their values.
  std::map<std::string, BasicTensor<T>> outputs() const;

  int batch_size() const { return batch_; }

 private:
  struct NodeState {
    BasicTensor<T> value;
    std::vector<int> labels;
    nn::PoolResult<T> pool;
    nn::BatchNormCache<T> bn;
    Mode mode = Mode::infer;
  };

  int index(std::string_view node) const;
  void run_node(std::size_t i, const Feed<T>& feed, Mode mode);
  void back_node(std::size_t i, std::vector<BasicTensor<T>>& node_grads);
  const BasicTensor<T>& param(const std::string& name) const;

  NetworkSpec spec_;
  std::vector<layers::CompiledLayer> layers_;
  ParamMap<T> params_;
  ParamMap<T> buffers_;
  ParamMap<T> grads_;
  std::vector<NodeState> state_;
  std::vector<BasicTensor<T>> last_node_grads_;
  int batch_ = 0;
  bool forward_done_ = false;
};

// He-normal (fan-in) for conv weights, uniform +-1/sqrt(fan_in) for dense
// weights, zero biases, gamma=1, beta=0, running mean 0, running var 1.
// Each tensor draws from its own stream keyed by name.
template <class T>
void initialize_parameters(Graph<T>& graph, std::uint64_t seed);

// Deterministic probe weights used by `sum(seed=...)` layers.
template <class T>
std::vector<T> probe_weights(std::uint64_t seed, std::size_t count);

}  // namespace sakit
