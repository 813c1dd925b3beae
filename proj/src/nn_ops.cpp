#include "sakit/nn_ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

namespace sakit::nn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

void require_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) throw ShapeError("", std::string(what) + " expects NCHW input, got " + shape_str(s));
}

bool is_pointwise(const Conv2dSpec& s) {
  return s.kernel == 1 && s.stride == 1 && s.padding == 0;
}

template <class T>
void im2col(const T* x, int channels, int height, int width, const Conv2dSpec& s, int out_h,
            int out_w, T* cols) {
  const int k = s.kernel;
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * plane;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * s.stride - s.padding + ki * s.dilation;
          T* dst = row + static_cast<std::size_t>(oh) * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * s.stride - s.padding + kj * s.dilation;
            dst[ow] = (iw >= 0 && iw < width) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, int channels, int height, int width, const Conv2dSpec& s, int out_h,
            int out_w, T* dx) {
  const int k = s.kernel;
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    T* dxc = dx + static_cast<std::size_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * plane;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * s.stride - s.padding + ki * s.dilation;
          if (ih < 0 || ih >= height) continue;
          const T* src = row + static_cast<std::size_t>(oh) * out_w;
          T* dst = dxc + static_cast<std::size_t>(ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * s.stride - s.padding + kj * s.dilation;
            if (iw >= 0 && iw < width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

int Conv2dSpec::out_dim(int in) const {
  const int num = in + 2 * padding - dilation * (kernel - 1) - 1;
  if (num < 0 || stride <= 0)
    throw ShapeError("", "convolution output dimension is not positive for input " +
                             std::to_string(in));
  return num / stride + 1;
}

int Pool2dSpec::out_dim(int in) const {
  if (kernel <= 0 || stride <= 0) throw ShapeError("", "pool kernel and stride must be positive");
  const int num = in + 2 * padding - kernel;
  if (!ceil_mode) {
    if (num < 0)
      throw ShapeError("", "pool kernel " + std::to_string(kernel) + " exceeds padded input " +
                               std::to_string(in + 2 * padding));
    return num / stride + 1;
  }
  if (num < 0) return 1;
  int out = (num + stride - 1) / stride + 1;
  if ((out - 1) * stride >= in + padding) --out;
  return out;
}

template <class T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                              const BasicTensor<T>* bias, const Conv2dSpec& spec) {
  require_rank4(x.shape(), "conv2d");
  if (x.dim(1) != spec.in_channels)
    throw ShapeError("", "conv2d expects " + std::to_string(spec.in_channels) +
                             " input channels, got " + std::to_string(x.dim(1)));
  if (weight.shape() != spec.weight_shape())
    throw ShapeError("", "conv2d weight shape " + shape_str(weight.shape()) + " != " +
                             shape_str(spec.weight_shape()));
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int oh = spec.out_dim(h), ow = spec.out_dim(w);
  const int kdim = spec.in_channels * spec.kernel * spec.kernel;
  const int plane = oh * ow;
  BasicTensor<T> y({n, spec.out_channels, oh, ow});
  ConstMapMat<T> wm(weight.ptr(), spec.out_channels, kdim);
  std::vector<T> cols;
  if (!is_pointwise(spec)) cols.resize(static_cast<std::size_t>(kdim) * plane);
  for (int b = 0; b < n; ++b) {
    const T* xb = x.ptr() + static_cast<std::size_t>(b) * spec.in_channels * h * w;
    const T* colp = xb;
    if (!is_pointwise(spec)) {
      im2col(xb, spec.in_channels, h, w, spec, oh, ow, cols.data());
      colp = cols.data();
    }
    MapMat<T> ym(y.ptr() + static_cast<std::size_t>(b) * spec.out_channels * plane,
                 spec.out_channels, plane);
    ym.noalias() = wm * ConstMapMat<T>(colp, kdim, plane);
    if (spec.bias && bias) {
      for (int c = 0; c < spec.out_channels; ++c) ym.row(c).array() += (*bias)[c];
    }
  }
  return y;
}

template <class T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                               const BasicTensor<T>& dy, const Conv2dSpec& spec) {
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int oh = dy.dim(2), ow = dy.dim(3);
  const int kdim = spec.in_channels * spec.kernel * spec.kernel;
  const int plane = oh * ow;
  Conv2dGrads<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>(weight.shape()), {}};
  if (spec.bias) g.dbias = BasicTensor<T>({spec.out_channels});
  ConstMapMat<T> wm(weight.ptr(), spec.out_channels, kdim);
  MapMat<T> dwm(g.dweight.ptr(), spec.out_channels, kdim);
  const bool pointwise = is_pointwise(spec);
  std::vector<T> cols, dcols(static_cast<std::size_t>(kdim) * plane);
  if (!pointwise) cols.resize(static_cast<std::size_t>(kdim) * plane);
  for (int b = 0; b < n; ++b) {
    const T* xb = x.ptr() + static_cast<std::size_t>(b) * spec.in_channels * h * w;
    T* dxb = g.dx.ptr() + static_cast<std::size_t>(b) * spec.in_channels * h * w;
    const T* colp = xb;
    if (!pointwise) {
      im2col(xb, spec.in_channels, h, w, spec, oh, ow, cols.data());
      colp = cols.data();
    }
    ConstMapMat<T> dym(dy.ptr() + static_cast<std::size_t>(b) * spec.out_channels * plane,
                       spec.out_channels, plane);
    dwm.noalias() += dym * ConstMapMat<T>(colp, kdim, plane).transpose();
    if (pointwise) {
      MapMat<T>(dxb, kdim, plane).noalias() = wm.transpose() * dym;
    } else {
      MapMat<T>(dcols.data(), kdim, plane).noalias() = wm.transpose() * dym;
      col2im(dcols.data(), spec.in_channels, h, w, spec, oh, ow, dxb);
    }
    if (spec.bias) {
      for (int c = 0; c < spec.out_channels; ++c) g.dbias[c] += dym.row(c).sum();
    }
  }
  return g;
}

template <class T>
PoolResult<T> pool2d_forward(const BasicTensor<T>& x, const Pool2dSpec& spec) {
  require_rank4(x.shape(), "pool2d");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = spec.out_dim(h), ow = spec.out_dim(w);
  PoolResult<T> r{BasicTensor<T>({n, c, oh, ow}), {}};
  if (spec.mode == PoolMode::max) r.argmax.assign(r.y.size(), -1);
  std::size_t o = 0;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * h * w;
      for (int i = 0; i < oh; ++i) {
        const int h0 = std::max(i * spec.stride - spec.padding, 0);
        const int h1 = std::min(i * spec.stride - spec.padding + spec.kernel, h);
        for (int j = 0; j < ow; ++j, ++o) {
          const int w0 = std::max(j * spec.stride - spec.padding, 0);
          const int w1 = std::min(j * spec.stride - spec.padding + spec.kernel, w);
          if (h0 >= h1 || w0 >= w1) throw ShapeError("", "pool2d window has no valid cells");
          if (spec.mode == PoolMode::max) {
            T best = -std::numeric_limits<T>::infinity();
            std::int64_t arg = -1;
            for (int p = h0; p < h1; ++p)
              for (int q = w0; q < w1; ++q) {
                const std::size_t idx = base + static_cast<std::size_t>(p) * w + q;
                if (arg < 0 || x[idx] > best) {
                  best = x[idx];
                  arg = static_cast<std::int64_t>(idx);
                }
              }
            r.y[o] = best;
            r.argmax[o] = arg;
          } else {
            T sum = 0;
            for (int p = h0; p < h1; ++p)
              for (int q = w0; q < w1; ++q) sum += x[base + static_cast<std::size_t>(p) * w + q];
            r.y[o] = sum / static_cast<T>((h1 - h0) * (w1 - w0));
          }
        }
      }
    }
  }
  return r;
}

template <class T>
BasicTensor<T> pool2d_backward(const BasicTensor<T>& x, const PoolResult<T>& fwd,
                               const BasicTensor<T>& dy, const Pool2dSpec& spec) {
  BasicTensor<T> dx(x.shape());
  if (spec.mode == PoolMode::max) {
    for (std::size_t o = 0; o < dy.size(); ++o) dx[static_cast<std::size_t>(fwd.argmax[o])] += dy[o];
    return dx;
  }
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = dy.dim(2), ow = dy.dim(3);
  std::size_t o = 0;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * h * w;
      for (int i = 0; i < oh; ++i) {
        const int h0 = std::max(i * spec.stride - spec.padding, 0);
        const int h1 = std::min(i * spec.stride - spec.padding + spec.kernel, h);
        for (int j = 0; j < ow; ++j, ++o) {
          const int w0 = std::max(j * spec.stride - spec.padding, 0);
          const int w1 = std::min(j * spec.stride - spec.padding + spec.kernel, w);
          const T share = dy[o] / static_cast<T>((h1 - h0) * (w1 - w0));
          for (int p = h0; p < h1; ++p)
            for (int q = w0; q < w1; ++q) dx[base + static_cast<std::size_t>(p) * w + q] += share;
        }
      }
    }
  }
  return dx;
}

template <class T>
BasicTensor<T> resize_nearest_forward(const BasicTensor<T>& x, int out_h, int out_w) {
  require_rank4(x.shape(), "resize_nearest");
  if (out_h < 1 || out_w < 1) throw ShapeError("", "resize target must be at least 1x1");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h == out_h && w == out_w) return x;
  BasicTensor<T> y({n, c, out_h, out_w});
  std::vector<int> src_col(static_cast<std::size_t>(out_w));
  for (int j = 0; j < out_w; ++j) src_col[j] = static_cast<int>(static_cast<std::int64_t>(j) * w / out_w);
  T* out = y.ptr();
  for (int plane = 0; plane < n * c; ++plane) {
    const T* src = x.ptr() + static_cast<std::size_t>(plane) * h * w;
    for (int i = 0; i < out_h; ++i) {
      const T* row = src + static_cast<std::size_t>(static_cast<std::int64_t>(i) * h / out_h) * w;
      for (int j = 0; j < out_w; ++j) *out++ = row[src_col[j]];
    }
  }
  return y;
}

template <class T>
BasicTensor<T> resize_nearest_backward(const BasicTensor<T>& dy, int in_h, int in_w) {
  const int n = dy.dim(0), c = dy.dim(1), out_h = dy.dim(2), out_w = dy.dim(3);
  if (in_h == out_h && in_w == out_w) return dy;
  BasicTensor<T> dx({n, c, in_h, in_w});
  const T* g = dy.ptr();
  for (int plane = 0; plane < n * c; ++plane) {
    T* dst = dx.ptr() + static_cast<std::size_t>(plane) * in_h * in_w;
    for (int i = 0; i < out_h; ++i) {
      T* row = dst + static_cast<std::size_t>(static_cast<std::int64_t>(i) * in_h / out_h) * in_w;
      for (int j = 0; j < out_w; ++j) row[static_cast<std::int64_t>(j) * in_w / out_w] += *g++;
    }
  }
  return dx;
}

template <class T>
BasicTensor<T> batchnorm_forward_train(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                       const BasicTensor<T>& beta, BasicTensor<T>& running_mean,
                                       BasicTensor<T>& running_var, const BatchNormSpec& spec,
                                       BatchNormCache<T>& cache) {
  require_rank4(x.shape(), "batchnorm");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  if (c != spec.channels)
    throw ShapeError("", "batchnorm expects " + std::to_string(spec.channels) + " channels, got " +
                             std::to_string(c));
  const std::size_t count = plane * n;
  if (count < 2)
    throw ShapeError("", "batchnorm training needs at least 2 values per channel (batch x spatial)");
  BasicTensor<T> y(x.shape());
  cache.xhat = BasicTensor<T>(x.shape());
  cache.inv_std.assign(static_cast<std::size_t>(c), T(0));
  const T m = static_cast<T>(spec.momentum);
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0;
    for (int b = 0; b < n; ++b) {
      const T* p = x.ptr() + (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0;
    for (int b = 0; b < n; ++b) {
      const T* p = x.ptr() + (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
    }
    const double var = sq / static_cast<double>(count);
    const T inv = static_cast<T>(1.0 / std::sqrt(var + spec.eps));
    cache.inv_std[ch] = inv;
    const T mu = static_cast<T>(mean);
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = (x[off + i] - mu) * inv;
        cache.xhat[off + i] = xh;
        y[off + i] = gamma[ch] * xh + beta[ch];
      }
    }
    running_mean[ch] = (T(1) - m) * running_mean[ch] + m * mu;
    const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
    running_var[ch] = (T(1) - m) * running_var[ch] + m * static_cast<T>(unbiased);
  }
  return y;
}

template <class T>
BasicTensor<T> batchnorm_forward_infer(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                       const BasicTensor<T>& beta,
                                       const BasicTensor<T>& running_mean,
                                       const BasicTensor<T>& running_var,
                                       const BatchNormSpec& spec) {
  require_rank4(x.shape(), "batchnorm");
  const int n = x.dim(0), c = x.dim(1);
  if (c != spec.channels) throw ShapeError("", "batchnorm channel mismatch");
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  BasicTensor<T> y(x.shape());
  for (int ch = 0; ch < c; ++ch) {
    const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + spec.eps));
    const T scale = gamma[ch] * inv;
    const T shift = beta[ch] - running_mean[ch] * scale;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) y[off + i] = x[off + i] * scale + shift;
    }
  }
  return y;
}

template <class T>
BatchNormGrads<T> batchnorm_backward_train(const BatchNormCache<T>& cache,
                                           const BasicTensor<T>& gamma, const BasicTensor<T>& dy) {
  const int n = dy.dim(0), c = dy.dim(1);
  const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
  const double count = static_cast<double>(plane * n);
  BatchNormGrads<T> g{BasicTensor<T>(dy.shape()), BasicTensor<T>({c}), BasicTensor<T>({c})};
  for (int ch = 0; ch < c; ++ch) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xhat += static_cast<double>(dy[off + i]) * cache.xhat[off + i];
      }
    }
    g.dgamma[ch] = static_cast<T>(sum_dy_xhat);
    g.dbeta[ch] = static_cast<T>(sum_dy);
    const double k = static_cast<double>(gamma[ch]) * cache.inv_std[ch];
    const double mean_dy = sum_dy / count, mean_dy_xhat = sum_dy_xhat / count;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        g.dx[off + i] =
            static_cast<T>(k * (dy[off + i] - mean_dy - cache.xhat[off + i] * mean_dy_xhat));
    }
  }
  return g;
}

template <class T>
BatchNormGrads<T> batchnorm_backward_infer(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                           const BasicTensor<T>& running_mean,
                                           const BasicTensor<T>& running_var,
                                           const BasicTensor<T>& dy, const BatchNormSpec& spec) {
  const int n = dy.dim(0), c = dy.dim(1);
  const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
  BatchNormGrads<T> g{BasicTensor<T>(dy.shape()), BasicTensor<T>({c}), BasicTensor<T>({c})};
  for (int ch = 0; ch < c; ++ch) {
    const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + spec.eps));
    T sg = 0, sb = 0;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sb += dy[off + i];
        sg += dy[off + i] * (x[off + i] - running_mean[ch]) * inv;
        g.dx[off + i] = dy[off + i] * gamma[ch] * inv;
      }
    }
    g.dgamma[ch] = sg;
    g.dbeta[ch] = sb;
  }
  return g;
}

template <class T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> xs) {
  if (xs.empty()) throw ShapeError("", "concat needs at least one input");
  const Shape& first = xs[0]->shape();
  if (first.size() < 2) throw ShapeError("", "concat expects inputs of rank >= 2");
  int channels = 0;
  for (const auto* t : xs) {
    const Shape& s = t->shape();
    bool ok = s.size() == first.size() && s[0] == first[0];
    for (std::size_t i = 2; ok && i < s.size(); ++i) ok = s[i] == first[i];
    if (!ok)
      throw ShapeError("", "concat inputs disagree outside the channel axis: " + shape_str(first) +
                               " vs " + shape_str(s));
    channels += s[1];
  }
  Shape out_shape = first;
  out_shape[1] = channels;
  BasicTensor<T> y(out_shape);
  const std::size_t inner = shape_size(first) / (static_cast<std::size_t>(first[0]) * first[1]);
  T* dst = y.ptr();
  for (int b = 0; b < first[0]; ++b) {
    for (const auto* t : xs) {
      const std::size_t len = static_cast<std::size_t>(t->dim(1)) * inner;
      const T* src = t->ptr() + static_cast<std::size_t>(b) * len;
      dst = std::copy(src, src + len, dst);
    }
  }
  return y;
}

template <class T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, int begin, int count) {
  if (x.rank() < 2 || begin < 0 || count <= 0 || begin + count > x.dim(1))
    throw ShapeError("", "channel slice out of range");
  Shape s = x.shape();
  s[1] = count;
  BasicTensor<T> y(s);
  const std::size_t inner = x.size() / (static_cast<std::size_t>(x.dim(0)) * x.dim(1));
  T* dst = y.ptr();
  for (int b = 0; b < x.dim(0); ++b) {
    const T* src = x.ptr() + (static_cast<std::size_t>(b) * x.dim(1) + begin) * inner;
    dst = std::copy(src, src + static_cast<std::size_t>(count) * inner, dst);
  }
  return y;
}

template <class T>
BasicTensor<T> relu_forward(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <class T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) {
  BasicTensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
  return dx;
}

template <class T>
BasicTensor<T> residual_add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("", "add operands differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  BasicTensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  return y;
}

template <class T>
BasicTensor<T> global_avg_pool_forward(const BasicTensor<T>& x) {
  require_rank4(x.shape(), "global_avg_pool");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  BasicTensor<T> y({n, c});
  for (std::size_t p = 0; p < static_cast<std::size_t>(n) * c; ++p) {
    T sum = 0;
    for (std::size_t i = 0; i < plane; ++i) sum += x[p * plane + i];
    y[p] = sum / static_cast<T>(plane);
  }
  return y;
}

template <class T>
BasicTensor<T> global_avg_pool_backward(const Shape& x_shape, const BasicTensor<T>& dy) {
  BasicTensor<T> dx(x_shape);
  const std::size_t plane = static_cast<std::size_t>(x_shape[2]) * x_shape[3];
  for (std::size_t p = 0; p < dy.size(); ++p) {
    const T g = dy[p] / static_cast<T>(plane);
    for (std::size_t i = 0; i < plane; ++i) dx[p * plane + i] = g;
  }
  return dx;
}

template <class T>
BasicTensor<T> dense_forward(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                             const BasicTensor<T>* bias) {
  const int n = x.dim(0);
  const int features = static_cast<int>(x.size() / static_cast<std::size_t>(n));
  const int out = weight.dim(0);
  if (weight.dim(1) != features)
    throw ShapeError("", "dense expects " + std::to_string(weight.dim(1)) + " features, got " +
                             std::to_string(features));
  BasicTensor<T> y({n, out});
  MapMat<T>(y.ptr(), n, out).noalias() =
      ConstMapMat<T>(x.ptr(), n, features) * ConstMapMat<T>(weight.ptr(), out, features).transpose();
  if (bias) {
    for (int b = 0; b < n; ++b)
      for (int o = 0; o < out; ++o) y[static_cast<std::size_t>(b) * out + o] += (*bias)[o];
  }
  return y;
}

template <class T>
DenseGrads<T> dense_backward(const BasicTensor<T>& x, const BasicTensor<T>& weight, bool has_bias,
                             const BasicTensor<T>& dy) {
  const int n = x.dim(0);
  const int features = static_cast<int>(x.size() / static_cast<std::size_t>(n));
  const int out = weight.dim(0);
  DenseGrads<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>(weight.shape()), {}};
  ConstMapMat<T> dym(dy.ptr(), n, out);
  MapMat<T>(g.dx.ptr(), n, features).noalias() = dym * ConstMapMat<T>(weight.ptr(), out, features);
  MapMat<T>(g.dweight.ptr(), out, features).noalias() =
      dym.transpose() * ConstMapMat<T>(x.ptr(), n, features);
  if (has_bias) {
    g.dbias = BasicTensor<T>({out});
    for (int o = 0; o < out; ++o) g.dbias[o] = dym.col(o).sum();
  }
  return g;
}

template <class T>
T softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  const int n = logits.dim(0);
  const int k = static_cast<int>(logits.size() / static_cast<std::size_t>(n));
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("", "label count " + std::to_string(labels.size()) + " != batch " + std::to_string(n));
  double total = 0;
  for (int b = 0; b < n; ++b) {
    if (labels[b] < 0 || labels[b] >= k)
      throw Error("label " + std::to_string(labels[b]) + " out of range [0, " + std::to_string(k) + ")");
    const T* row = logits.ptr() + static_cast<std::size_t>(b) * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    total += std::log(z) + mx - row[labels[b]];
  }
  return static_cast<T>(total / n);
}

template <class T>
BasicTensor<T> softmax_cross_entropy_backward(const BasicTensor<T>& logits,
                                              std::span<const int> labels, T upstream) {
  const int n = logits.dim(0);
  const int k = static_cast<int>(logits.size() / static_cast<std::size_t>(n));
  BasicTensor<T> d(logits.shape());
  for (int b = 0; b < n; ++b) {
    const T* row = logits.ptr() + static_cast<std::size_t>(b) * k;
    T* drow = d.ptr() + static_cast<std::size_t>(b) * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    for (int j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(row[j]) - mx) / z;
      drow[j] = static_cast<T>((p - (j == labels[b] ? 1.0 : 0.0)) * upstream / n);
    }
  }
  return d;
}

#define SAKIT_INSTANTIATE_NN(T)                                                                   \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                         const BasicTensor<T>*, const Conv2dSpec&);               \
  template Conv2dGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                          const BasicTensor<T>&, const Conv2dSpec&);              \
  template PoolResult<T> pool2d_forward(const BasicTensor<T>&, const Pool2dSpec&);                \
  template BasicTensor<T> pool2d_backward(const BasicTensor<T>&, const PoolResult<T>&,            \
                                          const BasicTensor<T>&, const Pool2dSpec&);              \
  template BasicTensor<T> resize_nearest_forward(const BasicTensor<T>&, int, int);                \
  template BasicTensor<T> resize_nearest_backward(const BasicTensor<T>&, int, int);               \
  template BasicTensor<T> batchnorm_forward_train(const BasicTensor<T>&, const BasicTensor<T>&,   \
                                                  const BasicTensor<T>&, BasicTensor<T>&,         \
                                                  BasicTensor<T>&, const BatchNormSpec&,          \
                                                  BatchNormCache<T>&);                            \
  template BasicTensor<T> batchnorm_forward_infer(const BasicTensor<T>&, const BasicTensor<T>&,   \
                                                  const BasicTensor<T>&, const BasicTensor<T>&,   \
                                                  const BasicTensor<T>&, const BatchNormSpec&);   \
  template BatchNormGrads<T> batchnorm_backward_train(const BatchNormCache<T>&,                   \
                                                      const BasicTensor<T>&, const BasicTensor<T>&); \
  template BatchNormGrads<T> batchnorm_backward_infer(                                            \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
      const BasicTensor<T>&, const BatchNormSpec&);                                               \
  template BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const>);                \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, int, int);                        \
  template BasicTensor<T> relu_forward(const BasicTensor<T>&);                                    \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> residual_add(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> global_avg_pool_forward(const BasicTensor<T>&);                         \
  template BasicTensor<T> global_avg_pool_backward(const Shape&, const BasicTensor<T>&);          \
  template BasicTensor<T> dense_forward(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                        const BasicTensor<T>*);                                   \
  template DenseGrads<T> dense_backward(const BasicTensor<T>&, const BasicTensor<T>&, bool,       \
                                        const BasicTensor<T>&);                                   \
  template T softmax_cross_entropy(const BasicTensor<T>&, std::span<const int>);                  \
  template BasicTensor<T> softmax_cross_entropy_backward(const BasicTensor<T>&,                   \
                                                         std::span<const int>, T);

SAKIT_INSTANTIATE_NN(float)
SAKIT_INSTANTIATE_NN(double)

#undef SAKIT_INSTANTIATE_NN

}  // namespace sakit::nn
