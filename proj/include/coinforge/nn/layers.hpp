#pragma once

// Forward and backward passes of the layer kinds used by the CNN. Batched
// tensors are NCHW (images) or ND (features). Convolutions use valid
// padding and are computed as im2col followed by a matrix product.

#include <Eigen/Core>
#include <algorithm>
#include <limits>

#include "tensor.hpp"

namespace coinforge::nn {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

inline std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride) {
  return (in - kernel) / stride + 1;
}

// cols[(c*k + i)*k + j][oy*wo + ox] = x[c][oy*s + i][ox*s + j]
template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t s, T* cols) {
  const std::size_t ho = conv_out(h, k, s);
  const std::size_t wo = conv_out(w, k, s);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        T* row = cols + ((ci * k + i) * k + j) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const T* src = x + (ci * h + oy * s + i) * w + j;
          for (std::size_t ox = 0; ox < wo; ++ox) row[oy * wo + ox] = src[ox * s];
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates columns back into an image buffer.
template <typename T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t s, T* x) {
  const std::size_t ho = conv_out(h, k, s);
  const std::size_t wo = conv_out(w, k, s);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const T* row = cols + ((ci * k + i) * k + j) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          T* dst = x + (ci * h + oy * s + i) * w + j;
          for (std::size_t ox = 0; ox < wo; ++ox) dst[ox * s] += row[oy * wo + ox];
        }
      }
    }
  }
}

// Patches at most this long are convolved directly instead of through
// im2col, which only pays off once the patch dimension is large.
inline constexpr std::size_t kDirectPatchLimit = 16;

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Output rows are accumulated one at a time so they stay in L1.
template <typename T>
void conv_direct_forward(const T* x, std::size_t c, std::size_t h, std::size_t w, const T* weight, const T* bias,
                         std::size_t f, std::size_t k, std::size_t s, T* y) {
  const std::size_t ho = conv_out(h, k, s), wo = conv_out(w, k, s);
  const auto n = static_cast<Eigen::Index>(wo);
  const Eigen::InnerStride<> xs(static_cast<Eigen::Index>(s));
  for (std::size_t fi = 0; fi < f; ++fi) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      Eigen::Map<Vec<T>> out(y + (fi * ho + oy) * wo, n);
      out.setConstant(bias[fi]);
      for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const T wv = weight[((fi * c + ci) * k + i) * k + j];
            const T* src = x + (ci * h + oy * s + i) * w + j;
            if (s == 1) {
              out += wv * Eigen::Map<const Vec<T>>(src, n);
            } else {
              out += wv * Eigen::Map<const Vec<T>, 0, Eigen::InnerStride<>>(src, n, xs);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_direct_backward(const T* x, std::size_t c, std::size_t h, std::size_t w, const T* weight, std::size_t f,
                          std::size_t k, std::size_t s, const T* gy, T* dweight, T* dbias, T* dx) {
  const std::size_t ho = conv_out(h, k, s), wo = conv_out(w, k, s);
  const auto n = static_cast<Eigen::Index>(wo);
  const Eigen::InnerStride<> xs(static_cast<Eigen::Index>(s));
  const std::size_t patch = c * k * k;
  Buffer<T> acc(patch);
  for (std::size_t fi = 0; fi < f; ++fi) {
    std::fill(acc.begin(), acc.end(), T{0});
    T bias_acc = 0;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      Eigen::Map<const Vec<T>> g(gy + (fi * ho + oy) * wo, n);
      bias_acc += g.sum();
      for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t p = (ci * k + i) * k + j;
            const std::size_t off = (ci * h + oy * s + i) * w + j;
            if (s == 1) {
              acc[p] += g.dot(Eigen::Map<const Vec<T>>(x + off, n));
              if (dx != nullptr) Eigen::Map<Vec<T>>(dx + off, n) += weight[fi * patch + p] * g;
            } else {
              acc[p] += g.dot(Eigen::Map<const Vec<T>, 0, Eigen::InnerStride<>>(x + off, n, xs));
              if (dx != nullptr) Eigen::Map<Vec<T>, 0, Eigen::InnerStride<>>(dx + off, n, xs) += weight[fi * patch + p] * g;
            }
          }
        }
      }
    }
    dbias[fi] += bias_acc;
    for (std::size_t p = 0; p < patch; ++p) dweight[fi * patch + p] += acc[p];
  }
}

// Per-thread buffer reused across calls; contents are unspecified.
template <typename T, int Slot>
T* scratch(std::size_t n) {
  thread_local Buffer<T> buf;
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  if (stride < 1) throw ShapeError("conv2d stride must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t f = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c) {
    throw ShapeError("conv2d: input has " + std::to_string(c) + " channels, weight expects " + std::to_string(w.dim(1)));
  }
  if (w.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
  require_shape(b, {f}, "conv2d bias");
  if (h < k || wd < k) throw ShapeError("conv2d: input smaller than kernel");
  const std::size_t ho = detail::conv_out(h, k, stride), wo = detail::conv_out(wd, k, stride);
  const std::size_t patch = c * k * k, spatial = ho * wo;

  Tensor<T> y({n, f, ho, wo});
  if (patch <= detail::kDirectPatchLimit) {
    for (std::size_t s = 0; s < n; ++s) {
      detail::conv_direct_forward(x.raw() + s * c * h * wd, c, h, wd, w.raw(), b.raw(), f, k, stride,
                                  y.raw() + s * f * spatial);
    }
    return y;
  }
  T* cols = detail::scratch<T, 0>(patch * spatial);
  detail::ConstMatrixMap<T> wm(w.raw(), static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(patch));
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(b.raw(), static_cast<Eigen::Index>(f));
  for (std::size_t s = 0; s < n; ++s) {
    detail::im2col(x.raw() + s * c * h * wd, c, h, wd, k, stride, cols);
    detail::ConstMatrixMap<T> cm(cols, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(spatial));
    detail::MatrixMap<T> ym(y.raw() + s * f * spatial, static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(spatial));
    ym.noalias() = wm * cm;
    ym.colwise() += bias;
  }
  return y;
}

template <typename T>
struct ParamGrads {
  Tensor<T> input;   // empty when not requested
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
ParamGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, const Tensor<T>& gy,
                              bool need_input_grad = true) {
  require_rank(x, 4, "conv2d input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t f = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c) throw ShapeError("conv2d backward: channel mismatch");
  const std::size_t ho = detail::conv_out(h, k, stride), wo = detail::conv_out(wd, k, stride);
  require_shape(gy, {n, f, ho, wo}, "conv2d upstream gradient");
  const std::size_t patch = c * k * k, spatial = ho * wo;

  ParamGrads<T> g{need_input_grad ? Tensor<T>(x.shape()) : Tensor<T>(), Tensor<T>(w.shape()), Tensor<T>({f})};
  if (patch <= detail::kDirectPatchLimit) {
    for (std::size_t s = 0; s < n; ++s) {
      detail::conv_direct_backward(x.raw() + s * c * h * wd, c, h, wd, w.raw(), f, k, stride,
                                   gy.raw() + s * f * spatial, g.weight.raw(), g.bias.raw(),
                                   need_input_grad ? g.input.raw() + s * c * h * wd : nullptr);
    }
    return g;
  }
  T* cols = detail::scratch<T, 0>(patch * spatial);
  T* dcols = need_input_grad ? detail::scratch<T, 1>(patch * spatial) : nullptr;
  detail::ConstMatrixMap<T> wm(w.raw(), static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(patch));
  detail::MatrixMap<T> dw(g.weight.raw(), static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(patch));
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(g.bias.raw(), static_cast<Eigen::Index>(f));
  for (std::size_t s = 0; s < n; ++s) {
    detail::ConstMatrixMap<T> gm(gy.raw() + s * f * spatial, static_cast<Eigen::Index>(f),
                                 static_cast<Eigen::Index>(spatial));
    detail::im2col(x.raw() + s * c * h * wd, c, h, wd, k, stride, cols);
    detail::ConstMatrixMap<T> cm(cols, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(spatial));
    dw.noalias() += gm * cm.transpose();
    db += gm.rowwise().sum();
    if (need_input_grad) {
      detail::MatrixMap<T> dcm(dcols, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(spatial));
      dcm.noalias() = wm.transpose() * gm;
      detail::col2im(dcols, c, h, wd, k, stride, g.input.raw() + s * c * h * wd);
    }
  }
  return g;
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank(x, 2, "dense input");
  require_rank(w, 2, "dense weight");
  const std::size_t n = x.dim(0), d = x.dim(1), u = w.dim(0);
  if (w.dim(1) != d) {
    throw ShapeError("dense: input width " + std::to_string(d) + ", weight expects " + std::to_string(w.dim(1)));
  }
  require_shape(b, {u}, "dense bias");
  Tensor<T> y({n, u});
  detail::ConstMatrixMap<T> xm(x.raw(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  detail::ConstMatrixMap<T> wm(w.raw(), static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(d));
  detail::MatrixMap<T> ym(y.raw(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(u));
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(b.raw(), static_cast<Eigen::Index>(u));
  ym.noalias() = xm * wm.transpose();
  ym.rowwise() += bias;
  return y;
}

template <typename T>
ParamGrads<T> dense_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy,
                             bool need_input_grad = true) {
  require_rank(x, 2, "dense input");
  const std::size_t n = x.dim(0), d = x.dim(1), u = w.dim(0);
  if (w.dim(1) != d) throw ShapeError("dense backward: width mismatch");
  require_shape(gy, {n, u}, "dense upstream gradient");
  ParamGrads<T> g{need_input_grad ? Tensor<T>({n, d}) : Tensor<T>(), Tensor<T>({u, d}), Tensor<T>({u})};
  detail::ConstMatrixMap<T> xm(x.raw(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  detail::ConstMatrixMap<T> wm(w.raw(), static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(d));
  detail::ConstMatrixMap<T> gm(gy.raw(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(u));
  detail::MatrixMap<T>(g.weight.raw(), static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(d)).noalias() =
      gm.transpose() * xm;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g.bias.raw(), static_cast<Eigen::Index>(u)) = gm.colwise().sum();
  if (need_input_grad) {
    detail::MatrixMap<T>(g.input.raw(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)).noalias() = gm * wm;
  }
  return g;
}

template <typename T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index per output cell
};

// Non-overlapping max pooling; trailing rows/columns that do not fill a
// window are dropped. Ties go to the first cell in row-major order.
template <typename T>
PoolResult<T> maxpool_forward(const Tensor<T>& x, std::size_t window) {
  require_rank(x, 4, "maxpool input");
  if (window < 1) throw ShapeError("maxpool window must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / window, wo = w / window;
  if (ho == 0 || wo == 0) throw ShapeError("maxpool: input smaller than window");
  PoolResult<T> r{Tensor<T>({n, c, ho, wo}), std::vector<std::size_t>(n * c * ho * wo)};
  const T* src = x.raw();
  T* dst = r.output.raw();
  std::size_t* arg = r.argmax.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = base + (oy * window) * w + ox * window;
        T best_v = src[best];
        for (std::size_t i = 0; i < window; ++i) {
          const std::size_t row = base + (oy * window + i) * w + ox * window;
          for (std::size_t j = 0; j < window; ++j) {
            if (src[row + j] > best_v) best_v = src[row + j], best = row + j;
          }
        }
        *dst++ = best_v;
        *arg++ = best;
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax, const Tensor<T>& gy) {
  if (gy.size() != argmax.size()) throw ShapeError("maxpool backward: gradient does not match pooled output");
  Tensor<T> dx(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] >= dx.size()) throw ShapeError("maxpool backward: routing index out of range");
    dx[argmax[i]] += gy[i];
  }
  return dx;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.data()) v = std::max(v, T{0});
  return y;
}

// Gradient passes where the forward input was positive.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& gy) {
  require_shape(gy, x.shape(), "relu upstream gradient");
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{0} ? gy[i] : T{0};
  return dx;
}

}  // namespace coinforge::nn
