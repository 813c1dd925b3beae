#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sakit/tensor.hpp"

// Layer kernels over NCHW tensors. Every kernel is a pure function of its
// arguments; backward kernels return fresh gradient tensors.
namespace sakit::nn {

struct Conv2dSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int dilation = 1;
  int padding = 0;  // applied to every side
  bool bias = false;

  // floor((in + 2p - d(k-1) - 1) / s) + 1; throws when not positive.
  int out_dim(int in) const;
  Shape weight_shape() const { return {out_channels, in_channels, kernel, kernel}; }
};

enum class PoolMode { max, avg };

struct Pool2dSpec {
  PoolMode mode = PoolMode::max;
  int kernel = 2;
  int stride = 2;
  int padding = 0;
  bool ceil_mode = false;

  // Ceil mode drops a trailing window that would start in the right padding.
  int out_dim(int in) const;
};

struct BatchNormSpec {
  int channels = 0;
  double eps = 1e-5;
  double momentum = 0.1;
};

template <class T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                              const BasicTensor<T>* bias, const Conv2dSpec& spec);

template <class T>
struct Conv2dGrads {
  BasicTensor<T> dx;
  BasicTensor<T> dweight;
  BasicTensor<T> dbias;  // empty unless spec.bias
};

template <class T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                               const BasicTensor<T>& dy, const Conv2dSpec& spec);

template <class T>
struct PoolResult {
  BasicTensor<T> y;
  std::vector<std::int64_t> argmax;  // flat input index per output, max mode only
};

template <class T>
PoolResult<T> pool2d_forward(const BasicTensor<T>& x, const Pool2dSpec& spec);

template <class T>
BasicTensor<T> pool2d_backward(const BasicTensor<T>& x, const PoolResult<T>& fwd,
                               const BasicTensor<T>& dy, const Pool2dSpec& spec);

// out[i, j] = in[floor(i * H' / H), floor(j * W' / W)]
template <class T>
BasicTensor<T> resize_nearest_forward(const BasicTensor<T>& x, int out_h, int out_w);

template <class T>
BasicTensor<T> resize_nearest_backward(const BasicTensor<T>& dy, int in_h, int in_w);

template <class T>
struct BatchNormCache {
  BasicTensor<T> xhat;
  std::vector<T> inv_std;
};

// Training mode: normalizes with batch statistics, updates running stats
// (running var uses the unbiased estimate), fills `cache` for backward.
template <class T>
BasicTensor<T> batchnorm_forward_train(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                       const BasicTensor<T>& beta, BasicTensor<T>& running_mean,
                                       BasicTensor<T>& running_var, const BatchNormSpec& spec,
                                       BatchNormCache<T>& cache);

template <class T>
BasicTensor<T> batchnorm_forward_infer(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                       const BasicTensor<T>& beta,
                                       const BasicTensor<T>& running_mean,
                                       const BasicTensor<T>& running_var,
                                       const BatchNormSpec& spec);

template <class T>
struct BatchNormGrads {
  BasicTensor<T> dx;
  BasicTensor<T> dgamma;
  BasicTensor<T> dbeta;
};

template <class T>
BatchNormGrads<T> batchnorm_backward_train(const BatchNormCache<T>& cache,
                                           const BasicTensor<T>& gamma, const BasicTensor<T>& dy);

// Backward for inference-mode normalization (fixed statistics).
template <class T>
BatchNormGrads<T> batchnorm_backward_infer(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                           const BasicTensor<T>& running_mean,
                                           const BasicTensor<T>& running_var,
                                           const BasicTensor<T>& dy, const BatchNormSpec& spec);

template <class T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> xs);

// Slice channels [begin, begin + count) of an NCHW tensor.
template <class T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, int begin, int count);

template <class T>
BasicTensor<T> relu_forward(const BasicTensor<T>& x);

template <class T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy);

template <class T>
BasicTensor<T> residual_add(const BasicTensor<T>& a, const BasicTensor<T>& b);

// NCHW -> NC
template <class T>
BasicTensor<T> global_avg_pool_forward(const BasicTensor<T>& x);

template <class T>
BasicTensor<T> global_avg_pool_backward(const Shape& x_shape, const BasicTensor<T>& dy);

// x is flattened to [N, features]; weight is [out, features].
template <class T>
BasicTensor<T> dense_forward(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                             const BasicTensor<T>* bias);

template <class T>
struct DenseGrads {
  BasicTensor<T> dx;
  BasicTensor<T> dweight;
  BasicTensor<T> dbias;
};

template <class T>
DenseGrads<T> dense_backward(const BasicTensor<T>& x, const BasicTensor<T>& weight, bool has_bias,
                             const BasicTensor<T>& dy);

// Mean over the batch of -log softmax(logits)[label].
template <class T>
T softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

// d(loss)/d(logits) scaled by `upstream`.
template <class T>
BasicTensor<T> softmax_cross_entropy_backward(const BasicTensor<T>& logits,
                                              std::span<const int> labels, T upstream);

}  // namespace sakit::nn
