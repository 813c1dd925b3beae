#include "sakit/graph.hpp"

#include <cmath>
#include <type_traits>

namespace sakit {

namespace {

template <class T>
void accumulate(BasicTensor<T>& dst, BasicTensor<T>&& g) {
  if (dst.empty()) {
    dst = std::move(g);
    return;
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

template <class T>
void accumulate_into(BasicTensor<T>& dst, const BasicTensor<T>& g) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

}  // namespace

template <class T>
std::vector<T> probe_weights(std::uint64_t seed, std::size_t count) {
  Rng rng(seed);
  std::vector<T> w(count);
  for (auto& v : w) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  return w;
}

template <class T>
Graph<T>::Graph(NetworkSpec spec) : spec_(std::move(spec)), layers_(layers::compile(spec_)) {
  for (const auto& l : layers_) {
    for (const auto& p : l.params) {
      if (p.trainable) {
        params_.emplace(p.name, BasicTensor<T>(p.shape));
        grads_.emplace(p.name, BasicTensor<T>(p.shape));
      } else {
        buffers_.emplace(p.name, BasicTensor<T>(p.shape));
      }
    }
  }
  for (auto& [name, t] : buffers_)
    if (name.ends_with(".running_var")) t.fill(T(1));
  for (auto& [name, t] : params_)
    if (name.ends_with(".gamma")) t.fill(T(1));
  state_.resize(layers_.size());
}

template <class T>
int Graph<T>::index(std::string_view node) const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].name == node) return static_cast<int>(i);
  throw ShapeError(std::string(node), "no such node");
}

template <class T>
const BasicTensor<T>& Graph<T>::param(const std::string& name) const {
  if (auto it = params_.find(name); it != params_.end()) return it->second;
  if (auto it = buffers_.find(name); it != buffers_.end()) return it->second;
  throw ShapeError(name, "no such parameter");
}

template <class T>
void Graph<T>::forward(const Feed<T>& feed, Mode mode) {
  batch_ = -1;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      run_node(i, feed, mode);
    } catch (const ShapeError& e) {
      if (!e.node().empty()) throw;
      throw ShapeError(layers_[i].name, e.what());
    } catch (const Error& e) {
      throw Error("node '" + layers_[i].name + "': " + e.what());
    }
  }
  forward_done_ = true;
}

template <class T>
void Graph<T>::run_node(std::size_t i, const Feed<T>& feed, Mode mode) {
  const auto& L = layers_[i];
  NodeState& st = state_[i];
  st.mode = mode;
  auto in = [&](std::size_t k) -> const BasicTensor<T>& {
    return state_[static_cast<std::size_t>(L.inputs[k])].value;
  };
  std::visit(
      [&](const auto& op) {
        using Op = std::decay_t<decltype(op)>;
        if constexpr (std::is_same_v<Op, layers::InputOp>) {
          auto it = feed.tensors.find(L.name);
          if (it == feed.tensors.end()) throw ShapeError(L.name, "no tensor fed for input");
          const Shape& s = it->second.shape();
          Shape expect = op.shape;
          const int n = s.empty() ? 0 : s[0];
          expect.insert(expect.begin(), n);
          if (s != expect)
            throw ShapeError(L.name, "fed shape " + shape_str(s) + " does not match declared " +
                                         shape_str(op.shape) + " with a batch dimension");
          if (batch_ >= 0 && n != batch_) throw ShapeError(L.name, "batch size differs between inputs");
          batch_ = n;
          st.value = it->second;
        } else if constexpr (std::is_same_v<Op, layers::LabelsOp>) {
          auto it = feed.labels.find(L.name);
          if (it == feed.labels.end()) throw ShapeError(L.name, "no labels fed");
          for (int y : it->second)
            if (y < 0 || y >= op.classes)
              throw ShapeError(L.name, "label " + std::to_string(y) + " out of range");
          st.labels = it->second;
          st.value = BasicTensor<T>();
        } else if constexpr (std::is_same_v<Op, layers::ConvOp>) {
          const BasicTensor<T>* bias = op.spec.bias ? &param(L.name + ".bias") : nullptr;
          st.value = nn::conv2d_forward(in(0), param(L.name + ".weight"), bias, op.spec);
        } else if constexpr (std::is_same_v<Op, layers::PoolOp>) {
          st.pool = nn::pool2d_forward(in(0), op.spec);
          st.value = st.pool.y;
        } else if constexpr (std::is_same_v<Op, layers::ResizeOp>) {
          st.value = nn::resize_nearest_forward(in(0), op.height, op.width);
        } else if constexpr (std::is_same_v<Op, layers::BatchNormOp>) {
          const auto& gamma = param(L.name + ".gamma");
          const auto& beta = param(L.name + ".beta");
          auto& rm = buffers_.at(L.name + ".running_mean");
          auto& rv = buffers_.at(L.name + ".running_var");
          if (mode == Mode::train)
            st.value = nn::batchnorm_forward_train(in(0), gamma, beta, rm, rv, op.spec, st.bn);
          else
            st.value = nn::batchnorm_forward_infer(in(0), gamma, beta, rm, rv, op.spec);
        } else if constexpr (std::is_same_v<Op, layers::ReluOp>) {
          st.value = nn::relu_forward(in(0));
        } else if constexpr (std::is_same_v<Op, layers::IdentityOp>) {
          st.value = in(0);
        } else if constexpr (std::is_same_v<Op, layers::ConcatOp>) {
          std::vector<const BasicTensor<T>*> xs;
          for (std::size_t k = 0; k < L.inputs.size(); ++k) xs.push_back(&in(k));
          st.value = nn::concat_channels<T>(xs);
        } else if constexpr (std::is_same_v<Op, layers::AddOp>) {
          st.value = nn::residual_add(in(0), in(1));
        } else if constexpr (std::is_same_v<Op, layers::GlobalAvgPoolOp>) {
          st.value = nn::global_avg_pool_forward(in(0));
        } else if constexpr (std::is_same_v<Op, layers::DenseOp>) {
          const BasicTensor<T>* bias = op.bias ? &param(L.name + ".bias") : nullptr;
          st.value = nn::dense_forward(in(0), param(L.name + ".weight"), bias);
        } else if constexpr (std::is_same_v<Op, layers::SoftmaxXentOp>) {
          const auto& labels = state_[static_cast<std::size_t>(L.inputs[1])].labels;
          st.value = BasicTensor<T>({1}, {nn::softmax_cross_entropy(in(0), std::span<const int>(labels))});
        } else if constexpr (std::is_same_v<Op, layers::SumOp>) {
          const auto& x = in(0);
          double total = 0;
          if (op.seed == 0) {
            for (T v : x.data()) total += v;
          } else {
            const auto w = probe_weights<T>(op.seed, x.size());
            for (std::size_t k = 0; k < x.size(); ++k) total += static_cast<double>(w[k]) * x[k];
          }
          st.value = BasicTensor<T>({1}, {static_cast<T>(total)});
        }
      },
      L.attrs);
}

template <class T>
void Graph<T>::backward(std::string_view loss_node) {
  if (!forward_done_) throw Error("backward called before forward");
  const int li = index(loss_node);
  const auto& loss = state_[static_cast<std::size_t>(li)].value;
  if (layers_[static_cast<std::size_t>(li)].batched || loss.size() != 1)
    throw ShapeError(std::string(loss_node), "loss node must be a scalar");
  for (auto& [name, g] : grads_) g.fill(T(0));
  std::vector<BasicTensor<T>> node_grads(layers_.size());
  node_grads[static_cast<std::size_t>(li)] = BasicTensor<T>({1}, {T(1)});
  for (int i = li; i >= 0; --i) {
    if (node_grads[static_cast<std::size_t>(i)].empty()) continue;
    back_node(static_cast<std::size_t>(i), node_grads);
  }
  last_node_grads_ = std::move(node_grads);
}

template <class T>
void Graph<T>::back_node(std::size_t i, std::vector<BasicTensor<T>>& node_grads) {
  const auto& L = layers_[i];
  const NodeState& st = state_[i];
  const BasicTensor<T>& dy = node_grads[i];
  auto in = [&](std::size_t k) -> const BasicTensor<T>& {
    return state_[static_cast<std::size_t>(L.inputs[k])].value;
  };
  auto give = [&](std::size_t k, BasicTensor<T>&& g) {
    accumulate(node_grads[static_cast<std::size_t>(L.inputs[k])], std::move(g));
  };
  std::visit(
      [&](const auto& op) {
        using Op = std::decay_t<decltype(op)>;
        if constexpr (std::is_same_v<Op, layers::ConvOp>) {
          auto g = nn::conv2d_backward(in(0), param(L.name + ".weight"), dy, op.spec);
          accumulate_into(grads_.at(L.name + ".weight"), g.dweight);
          if (op.spec.bias) accumulate_into(grads_.at(L.name + ".bias"), g.dbias);
          give(0, std::move(g.dx));
        } else if constexpr (std::is_same_v<Op, layers::PoolOp>) {
          give(0, nn::pool2d_backward(in(0), st.pool, dy, op.spec));
        } else if constexpr (std::is_same_v<Op, layers::ResizeOp>) {
          give(0, nn::resize_nearest_backward(dy, in(0).dim(2), in(0).dim(3)));
        } else if constexpr (std::is_same_v<Op, layers::BatchNormOp>) {
          const auto& gamma = param(L.name + ".gamma");
          nn::BatchNormGrads<T> g;
          if (st.mode == Mode::train)
            g = nn::batchnorm_backward_train(st.bn, gamma, dy);
          else
            g = nn::batchnorm_backward_infer(in(0), gamma, param(L.name + ".running_mean"),
                                             param(L.name + ".running_var"), dy, op.spec);
          accumulate_into(grads_.at(L.name + ".gamma"), g.dgamma);
          accumulate_into(grads_.at(L.name + ".beta"), g.dbeta);
          give(0, std::move(g.dx));
        } else if constexpr (std::is_same_v<Op, layers::ReluOp>) {
          give(0, nn::relu_backward(in(0), dy));
        } else if constexpr (std::is_same_v<Op, layers::IdentityOp>) {
          give(0, BasicTensor<T>(dy));
        } else if constexpr (std::is_same_v<Op, layers::ConcatOp>) {
          int offset = 0;
          for (std::size_t k = 0; k < L.inputs.size(); ++k) {
            const int c = in(k).dim(1);
            give(k, nn::slice_channels(dy, offset, c));
            offset += c;
          }
        } else if constexpr (std::is_same_v<Op, layers::AddOp>) {
          give(0, BasicTensor<T>(dy));
          give(1, BasicTensor<T>(dy));
        } else if constexpr (std::is_same_v<Op, layers::GlobalAvgPoolOp>) {
          give(0, nn::global_avg_pool_backward(in(0).shape(), dy));
        } else if constexpr (std::is_same_v<Op, layers::DenseOp>) {
          auto g = nn::dense_backward(in(0), param(L.name + ".weight"), op.bias, dy);
          accumulate_into(grads_.at(L.name + ".weight"), g.dweight);
          if (op.bias) accumulate_into(grads_.at(L.name + ".bias"), g.dbias);
          give(0, std::move(g.dx));
        } else if constexpr (std::is_same_v<Op, layers::SoftmaxXentOp>) {
          const auto& labels = state_[static_cast<std::size_t>(L.inputs[1])].labels;
          give(0, nn::softmax_cross_entropy_backward(in(0), std::span<const int>(labels), dy[0]));
        } else if constexpr (std::is_same_v<Op, layers::SumOp>) {
          const auto& x = in(0);
          BasicTensor<T> dx(x.shape(), dy[0]);
          if (op.seed != 0) {
            const auto w = probe_weights<T>(op.seed, x.size());
            for (std::size_t k = 0; k < x.size(); ++k) dx[k] = w[k] * dy[0];
          }
          give(0, std::move(dx));
        }
        // input and labels nodes are leaves
      },
      L.attrs);
}

template <class T>
const BasicTensor<T>& Graph<T>::value(std::string_view node) const {
  if (!forward_done_) throw Error("value requested before forward");
  return state_[static_cast<std::size_t>(index(node))].value;
}

template <class T>
BasicTensor<T> Graph<T>::node_grad(std::string_view node) const {
  const auto i = static_cast<std::size_t>(index(node));
  if (i < last_node_grads_.size() && !last_node_grads_[i].empty()) return last_node_grads_[i];
  const auto& v = state_[i].value;
  return v.empty() ? BasicTensor<T>() : BasicTensor<T>(v.shape());
}

template <class T>
std::map<std::string, BasicTensor<T>> Graph<T>::outputs() const {
  std::vector<bool> consumed(layers_.size(), false);
  for (const auto& l : layers_)
    for (int k : l.inputs) consumed[static_cast<std::size_t>(k)] = true;
  std::map<std::string, BasicTensor<T>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (!consumed[i] && !state_[i].value.empty()) out.emplace(layers_[i].name, state_[i].value);
  return out;
}

template <class T>
void initialize_parameters(Graph<T>& graph, std::uint64_t seed) {
  const Rng root(seed);
  for (auto& [name, t] : graph.params()) {
    Rng rng = root.split(name_hash(name));
    if (name.ends_with(".gamma")) {
      t.fill(T(1));
    } else if (name.ends_with(".beta") || name.ends_with(".bias")) {
      t.fill(T(0));
    } else if (name.ends_with(".weight") && t.rank() == 4) {
      const double fan_in = static_cast<double>(t.dim(1)) * t.dim(2) * t.dim(3);
      const double sd = std::sqrt(2.0 / fan_in);
      for (auto& v : t.data()) v = static_cast<T>(sd * rng.normal());
    } else if (name.ends_with(".weight") && t.rank() == 2) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.dim(1)));
      for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
  }
  for (auto& [name, t] : graph.buffers()) t.fill(name.ends_with(".running_var") ? T(1) : T(0));
}

template class Graph<float>;
template class Graph<double>;
template void initialize_parameters(Graph<float>&, std::uint64_t);
template void initialize_parameters(Graph<double>&, std::uint64_t);
template std::vector<float> probe_weights<float>(std::uint64_t, std::size_t);
template std::vector<double> probe_weights<double>(std::uint64_t, std::size_t);

}  // namespace sakit
