#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "accr/dual.hpp"
#include "accr/errors.hpp"
#include "accr/nn/gemm.hpp"
#include "accr/tensor.hpp"

namespace accr::nn {

enum class PadMode { zeros, reflect };

struct Conv2d {
  std::size_t in = 0, out = 0, kernel = 3, stride = 1;
  std::size_t pad_lo = 1, pad_hi = 1;  // asymmetric padding gives "same" output for even kernels
  PadMode mode = PadMode::zeros;
  bool bias = true;
};

/// Weight layout (in, out, k, k); output size (H-1)*stride - 2*pad + kernel.
struct ConvTranspose2d {
  std::size_t in = 0, out = 0, kernel = 4, stride = 2, pad = 1;
  bool bias = true;
};

/// Per-sample, per-channel normalization without affine parameters.
struct InstanceNorm {
  std::size_t channels = 0;
  double eps = 1e-5;
};

enum class ActKind { relu, leaky_relu, tanh };

struct Activation {
  ActKind kind = ActKind::relu;
  double slope = 0.2;
};

struct MaxPool2d {
  std::size_t size = 2;
};

struct Flatten {};

struct Linear {
  std::size_t in = 0, out = 0;
  bool bias = true;
};

struct Layer;

/// y = x + body(x)
struct Residual {
  std::vector<Layer> body;
};

struct Layer {
  std::variant<Conv2d, ConvTranspose2d, InstanceNorm, Activation, MaxPool2d, Flatten, Linear, Residual> op;
};

enum class ParamRole { weight, bias };

struct ParamDef {
  std::string name;
  Shape shape;
  ParamRole role;
  std::size_t fan_in;
};

template <class T>
struct LayerTrace {
  std::vector<Tensor<T>> saved;
  std::vector<std::size_t> indices;
  std::vector<LayerTrace> nested;
  Shape in_shape;
};

namespace detail {

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

struct Geometry {
  std::size_t channels, height, width, kernel, stride, pad_lo, pad_hi;
  PadMode mode;
  std::size_t out_h() const { return (height + pad_lo + pad_hi - kernel) / stride + 1; }
  std::size_t out_w() const { return (width + pad_lo + pad_hi - kernel) / stride + 1; }
};

/// Maps a padded coordinate to a source index, or -1 for zero padding.
inline std::ptrdiff_t source_index(std::ptrdiff_t i, std::ptrdiff_t n, PadMode mode) {
  if (i >= 0 && i < n) return i;
  if (mode == PadMode::zeros) return -1;
  if (i < 0) return -i;
  return 2 * (n - 1) - i;
}

/// Source index of every (kernel offset, output position) along one axis, -1 for zero padding.
inline std::vector<std::ptrdiff_t> axis_table(std::size_t kernel, std::size_t out, std::size_t stride, std::size_t pad_lo,
                                              std::size_t n, PadMode mode) {
  std::vector<std::ptrdiff_t> t(kernel * out);
  for (std::size_t k = 0; k < kernel; ++k)
    for (std::size_t o = 0; o < out; ++o)
      t[k * out + o] = source_index(static_cast<std::ptrdiff_t>(o * stride + k) - static_cast<std::ptrdiff_t>(pad_lo),
                                    static_cast<std::ptrdiff_t>(n), mode);
  return t;
}

/// col[(c*K+ky)*K+kx][b*P + oy*Wo + ox]
template <class T>
void im2col(const T* x, std::size_t batch, const Geometry& g, T* col) {
  const std::size_t ho = g.out_h(), wo = g.out_w(), p = ho * wo, np = batch * p;
  const auto ys = axis_table(g.kernel, ho, g.stride, g.pad_lo, g.height, g.mode);
  const auto xs = axis_table(g.kernel, wo, g.stride, g.pad_lo, g.width, g.mode);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * np;
        const std::ptrdiff_t* xi = xs.data() + kx * wo;
        for (std::size_t b = 0; b < batch; ++b) {
          const T* plane = x + (b * g.channels + c) * g.height * g.width;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const auto iy = ys[ky * ho + oy];
            T* dst = row + b * p + oy * wo;
            if (iy < 0) {
              std::fill(dst, dst + wo, T(0));
              continue;
            }
            const T* src = plane + iy * static_cast<std::ptrdiff_t>(g.width);
            for (std::size_t ox = 0; ox < wo; ++ox) dst[ox] = xi[ox] < 0 ? T(0) : src[xi[ox]];
          }
        }
      }
}

/// Adjoint of im2col: accumulates col entries back into x.
template <class T>
void col2im(const T* col, std::size_t batch, const Geometry& g, T* x) {
  const std::size_t ho = g.out_h(), wo = g.out_w(), p = ho * wo, np = batch * p;
  const auto ys = axis_table(g.kernel, ho, g.stride, g.pad_lo, g.height, g.mode);
  const auto xs = axis_table(g.kernel, wo, g.stride, g.pad_lo, g.width, g.mode);
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * np;
        const std::ptrdiff_t* xi = xs.data() + kx * wo;
        for (std::size_t b = 0; b < batch; ++b) {
          T* plane = x + (b * g.channels + c) * g.height * g.width;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const auto iy = ys[ky * ho + oy];
            if (iy < 0) continue;
            const T* src = row + b * p + oy * wo;
            T* dst = plane + iy * static_cast<std::ptrdiff_t>(g.width);
            for (std::size_t ox = 0; ox < wo; ++ox)
              if (xi[ox] >= 0) dst[xi[ox]] += src[ox];
          }
        }
      }
}

/// (N, C, P) -> (C, N*P)
template <class T>
void to_channel_major(const T* x, std::size_t n, std::size_t c, std::size_t p, T* out) {
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = x + (b * c + ch) * p;
      T* dst = out + ch * n * p + b * p;
      for (std::size_t i = 0; i < p; ++i) dst[i] = src[i];
    }
}

/// (C, N*P) -> (N, C, P)
template <class T>
void from_channel_major(const T* x, std::size_t n, std::size_t c, std::size_t p, T* out) {
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = x + ch * n * p + b * p;
      T* dst = out + (b * c + ch) * p;
      for (std::size_t i = 0; i < p; ++i) dst[i] = src[i];
    }
}

inline Geometry conv_geometry(const Conv2d& l, const Shape& in) {
  return {l.in, in[2], in[3], l.kernel, l.stride, l.pad_lo, l.pad_hi, l.mode};
}

inline void check_conv_input(const Conv2d& l, const Shape& s) {
  if (s.size() != 4 || s[1] != l.in)
    throw ShapeError("conv2d expects (N," + std::to_string(l.in) + ",H,W) input, got " + to_string(s));
  if (s[2] + l.pad_lo + l.pad_hi < l.kernel || s[3] + l.pad_lo + l.pad_hi < l.kernel)
    throw ShapeError("conv2d input " + to_string(s) + " smaller than kernel");
  if (l.mode == PadMode::reflect && (l.pad_lo >= s[2] || l.pad_hi >= s[2] || l.pad_lo >= s[3] || l.pad_hi >= s[3]))
    throw ShapeError("reflect padding needs pad < spatial size, got " + to_string(s));
}

// Conv2d ---------------------------------------------------------------------

template <class T>
Tensor<T> forward(const Conv2d& l, std::span<const Tensor<T>> p, const Tensor<T>& x, LayerTrace<T>* tr) {
  check_conv_input(l, x.shape());
  const auto g = conv_geometry(l, x.shape());
  const std::size_t n = x.dim(0), ho = g.out_h(), wo = g.out_w(), np = n * ho * wo, ckk = l.in * l.kernel * l.kernel;
  std::vector<T> col(ckk * np), res(l.out * np);
  im2col(x.data(), n, g, col.data());
  gemm<T>(false, false, l.out, np, ckk, p[0].data(), col.data(), res.data(), false);
  if (l.bias)
    for (std::size_t co = 0; co < l.out; ++co)
      for (std::size_t j = 0; j < np; ++j) res[co * np + j] += p[1][co];
  Tensor<T> y({n, l.out, ho, wo});
  from_channel_major(res.data(), n, l.out, ho * wo, y.data());
  if (tr) tr->saved = {x};
  return y;
}

template <class T>
Tensor<T> backward(const Conv2d& l, std::span<const Tensor<T>> p, const LayerTrace<T>& tr, const Tensor<T>& dy,
                   std::span<Tensor<T>> grads, bool need_dx) {
  const Tensor<T>& x = tr.saved[0];
  const auto g = conv_geometry(l, x.shape());
  const std::size_t n = x.dim(0), ho = g.out_h(), wo = g.out_w(), np = n * ho * wo, ckk = l.in * l.kernel * l.kernel;
  std::vector<T> dres(l.out * np);
  to_channel_major(dy.data(), n, l.out, ho * wo, dres.data());
  if (!grads.empty()) {
    std::vector<T> col(ckk * np);
    im2col(x.data(), n, g, col.data());
    gemm<T>(false, true, l.out, ckk, np, dres.data(), col.data(), grads[0].data(), true);
    if (l.bias)
      for (std::size_t co = 0; co < l.out; ++co) {
        T s(0);
        for (std::size_t j = 0; j < np; ++j) s += dres[co * np + j];
        grads[1][co] += s;
      }
  }
  if (!need_dx) return {};
  std::vector<T> dcol(ckk * np);
  gemm<T>(true, false, ckk, np, l.out, p[0].data(), dres.data(), dcol.data(), false);
  Tensor<T> dx(x.shape());
  col2im(dcol.data(), n, g, dx.data());
  return dx;
}

// ConvTranspose2d ------------------------------------------------------------

inline Geometry convt_geometry(const ConvTranspose2d& l, const Shape& in) {
  const std::size_t ho = (in[2] - 1) * l.stride + l.kernel - 2 * l.pad;
  const std::size_t wo = (in[3] - 1) * l.stride + l.kernel - 2 * l.pad;
  return {l.out, ho, wo, l.kernel, l.stride, l.pad, l.pad, PadMode::zeros};
}

template <class T>
Tensor<T> forward(const ConvTranspose2d& l, std::span<const Tensor<T>> p, const Tensor<T>& x, LayerTrace<T>* tr) {
  if (x.rank() != 4 || x.dim(1) != l.in)
    throw ShapeError("conv_transpose2d expects (N," + std::to_string(l.in) + ",H,W) input, got " + to_string(x.shape()));
  if ((x.dim(2) - 1) * l.stride + l.kernel < 2 * l.pad + 1) throw ShapeError("conv_transpose2d output would be empty");
  const auto g = convt_geometry(l, x.shape());
  const std::size_t n = x.dim(0), pin = x.dim(2) * x.dim(3), np = n * pin, okk = l.out * l.kernel * l.kernel;
  std::vector<T> xm(l.in * np), col(okk * np);
  to_channel_major(x.data(), n, l.in, pin, xm.data());
  gemm<T>(true, false, okk, np, l.in, p[0].data(), xm.data(), col.data(), false);
  Tensor<T> y({n, l.out, g.height, g.width});
  col2im(col.data(), n, g, y.data());
  if (l.bias) {
    const std::size_t po = g.height * g.width;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < l.out; ++c) {
        T* dst = y.data() + (b * l.out + c) * po;
        for (std::size_t i = 0; i < po; ++i) dst[i] += p[1][c];
      }
  }
  if (tr) tr->saved = {x};
  return y;
}

template <class T>
Tensor<T> backward(const ConvTranspose2d& l, std::span<const Tensor<T>> p, const LayerTrace<T>& tr,
                   const Tensor<T>& dy, std::span<Tensor<T>> grads, bool need_dx) {
  const Tensor<T>& x = tr.saved[0];
  const auto g = convt_geometry(l, x.shape());
  const std::size_t n = x.dim(0), pin = x.dim(2) * x.dim(3), np = n * pin, okk = l.out * l.kernel * l.kernel;
  std::vector<T> dcol(okk * np);
  im2col(dy.data(), n, g, dcol.data());
  if (!grads.empty()) {
    std::vector<T> xm(l.in * np);
    to_channel_major(x.data(), n, l.in, pin, xm.data());
    gemm<T>(false, true, l.in, okk, np, xm.data(), dcol.data(), grads[0].data(), true);
    if (l.bias) {
      const std::size_t po = g.height * g.width;
      for (std::size_t c = 0; c < l.out; ++c) {
        T s(0);
        for (std::size_t b = 0; b < n; ++b) {
          const T* src = dy.data() + (b * l.out + c) * po;
          for (std::size_t i = 0; i < po; ++i) s += src[i];
        }
        grads[1][c] += s;
      }
    }
  }
  if (!need_dx) return {};
  std::vector<T> dxm(l.in * np);
  gemm<T>(false, false, l.in, np, okk, p[0].data(), dcol.data(), dxm.data(), false);
  Tensor<T> dx(x.shape());
  from_channel_major(dxm.data(), n, l.in, pin, dx.data());
  return dx;
}

// InstanceNorm ---------------------------------------------------------------

template <class T>
Tensor<T> forward(const InstanceNorm& l, std::span<const Tensor<T>>, const Tensor<T>& x, LayerTrace<T>* tr) {
  if (x.rank() != 4 || x.dim(1) != l.channels)
    throw ShapeError("instance_norm expects " + std::to_string(l.channels) + " channels, got " + to_string(x.shape()));
  using std::sqrt;
  const std::size_t planes = x.dim(0) * x.dim(1), p = x.dim(2) * x.dim(3);
  Tensor<T> y(x.shape());
  Tensor<T> inv_std({planes});
  for (std::size_t q = 0; q < planes; ++q) {
    const T* src = x.data() + q * p;
    T mean(0);
    for (std::size_t i = 0; i < p; ++i) mean += src[i];
    mean /= T(static_cast<double>(p));
    T var(0);
    for (std::size_t i = 0; i < p; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= T(static_cast<double>(p));
    T inv = T(1) / sqrt(var + T(l.eps));
    inv_std[q] = inv;
    T* dst = y.data() + q * p;
    for (std::size_t i = 0; i < p; ++i) dst[i] = (src[i] - mean) * inv;
  }
  if (tr) tr->saved = {y, inv_std};
  return y;
}

template <class T>
Tensor<T> backward(const InstanceNorm&, std::span<const Tensor<T>>, const LayerTrace<T>& tr, const Tensor<T>& dy,
                   std::span<Tensor<T>>, bool need_dx) {
  if (!need_dx) return {};
  const Tensor<T>& y = tr.saved[0];
  const Tensor<T>& inv_std = tr.saved[1];
  const std::size_t planes = y.dim(0) * y.dim(1), p = y.dim(2) * y.dim(3);
  Tensor<T> dx(y.shape());
  const T inv_p = T(1.0 / static_cast<double>(p));
  for (std::size_t q = 0; q < planes; ++q) {
    const T* g = dy.data() + q * p;
    const T* yy = y.data() + q * p;
    T mg(0), mgy(0);
    for (std::size_t i = 0; i < p; ++i) {
      mg += g[i];
      mgy += g[i] * yy[i];
    }
    mg *= inv_p;
    mgy *= inv_p;
    T* d = dx.data() + q * p;
    for (std::size_t i = 0; i < p; ++i) d[i] = inv_std[q] * (g[i] - mg - yy[i] * mgy);
  }
  return dx;
}

// Activation -----------------------------------------------------------------

template <class T>
Tensor<T> forward(const Activation& l, std::span<const Tensor<T>>, const Tensor<T>& x, LayerTrace<T>* tr) {
  using std::tanh;
  Tensor<T> y(x.shape());
  const T slope(l.slope);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    switch (l.kind) {
      case ActKind::relu: y[i] = v > T(0) ? v : T(0); break;
      case ActKind::leaky_relu: y[i] = v > T(0) ? v : slope * v; break;
      case ActKind::tanh: y[i] = tanh(v); break;
    }
  }
  if (tr) tr->saved = {l.kind == ActKind::leaky_relu ? x : y};
  return y;
}

template <class T>
Tensor<T> backward(const Activation& l, std::span<const Tensor<T>>, const LayerTrace<T>& tr, const Tensor<T>& dy,
                   std::span<Tensor<T>>, bool need_dx) {
  if (!need_dx) return {};
  const Tensor<T>& s = tr.saved[0];
  Tensor<T> dx(s.shape());
  const T slope(l.slope);
  for (std::size_t i = 0; i < s.size(); ++i) {
    switch (l.kind) {
      case ActKind::relu: dx[i] = s[i] > T(0) ? dy[i] : T(0); break;
      case ActKind::leaky_relu: dx[i] = s[i] > T(0) ? dy[i] : slope * dy[i]; break;
      case ActKind::tanh: dx[i] = dy[i] * (T(1) - s[i] * s[i]); break;
    }
  }
  return dx;
}

// MaxPool2d ------------------------------------------------------------------

template <class T>
Tensor<T> forward(const MaxPool2d& l, std::span<const Tensor<T>>, const Tensor<T>& x, LayerTrace<T>* tr) {
  require_rank4(x, "max_pool2d");
  const std::size_t k = l.size, ho = x.dim(2) / k, wo = x.dim(3) / k;
  if (ho == 0 || wo == 0) throw ShapeError("max_pool2d input " + to_string(x.shape()) + " smaller than window");
  Tensor<T> y({x.dim(0), x.dim(1), ho, wo});
  std::vector<std::size_t> idx(y.size());
  std::size_t o = 0;
  for (std::size_t b = 0; b < x.dim(0); ++b)
    for (std::size_t c = 0; c < x.dim(1); ++c)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
          std::size_t best = ((b * x.dim(1) + c) * x.dim(2) + oy * k) * x.dim(3) + ox * k;
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx) {
              std::size_t i = ((b * x.dim(1) + c) * x.dim(2) + oy * k + dy) * x.dim(3) + ox * k + dx;
              if (x[i] > x[best]) best = i;
            }
          y[o] = x[best];
          idx[o] = best;
        }
  if (tr) {
    tr->indices = std::move(idx);
    tr->in_shape = x.shape();
  }
  return y;
}

template <class T>
Tensor<T> backward(const MaxPool2d&, std::span<const Tensor<T>>, const LayerTrace<T>& tr, const Tensor<T>& dy,
                   std::span<Tensor<T>>, bool need_dx) {
  if (!need_dx) return {};
  Tensor<T> dx(tr.in_shape);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[tr.indices[o]] += dy[o];
  return dx;
}

// Flatten --------------------------------------------------------------------

template <class T>
Tensor<T> forward(const Flatten&, std::span<const Tensor<T>>, const Tensor<T>& x, LayerTrace<T>* tr) {
  if (tr) tr->in_shape = x.shape();
  return x.reshaped({x.dim(0), x.item_size()});
}

template <class T>
Tensor<T> backward(const Flatten&, std::span<const Tensor<T>>, const LayerTrace<T>& tr, const Tensor<T>& dy,
                   std::span<Tensor<T>>, bool need_dx) {
  if (!need_dx) return {};
  return dy.reshaped(tr.in_shape);
}

// Linear ---------------------------------------------------------------------

template <class T>
Tensor<T> forward(const Linear& l, std::span<const Tensor<T>> p, const Tensor<T>& x, LayerTrace<T>* tr) {
  if (x.rank() != 2 || x.dim(1) != l.in)
    throw ShapeError("linear expects (N," + std::to_string(l.in) + ") input, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0);
  Tensor<T> y({n, l.out});
  gemm<T>(false, true, n, l.out, l.in, x.data(), p[0].data(), y.data(), false);
  if (l.bias)
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < l.out; ++o) y[b * l.out + o] += p[1][o];
  if (tr) tr->saved = {x};
  return y;
}

template <class T>
Tensor<T> backward(const Linear& l, std::span<const Tensor<T>> p, const LayerTrace<T>& tr, const Tensor<T>& dy,
                   std::span<Tensor<T>> grads, bool need_dx) {
  const Tensor<T>& x = tr.saved[0];
  const std::size_t n = x.dim(0);
  if (!grads.empty()) {
    gemm<T>(true, false, l.out, l.in, n, dy.data(), x.data(), grads[0].data(), true);
    if (l.bias)
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < l.out; ++o) grads[1][o] += dy[b * l.out + o];
  }
  if (!need_dx) return {};
  Tensor<T> dx(x.shape());
  gemm<T>(false, false, n, l.in, l.out, dy.data(), p[0].data(), dx.data(), false);
  return dx;
}

}  // namespace detail

// Parameter bookkeeping -------------------------------------------------------

inline void collect_params(const Layer& layer, const std::string& prefix, std::vector<ParamDef>& out);

inline void collect_params(const std::vector<Layer>& layers, const std::string& prefix, std::vector<ParamDef>& out) {
  for (std::size_t i = 0; i < layers.size(); ++i)
    collect_params(layers[i], prefix + "layer" + std::to_string(i), out);
}

inline void collect_params(const Layer& layer, const std::string& prefix, std::vector<ParamDef>& out) {
  std::visit(detail::overloaded{
                 [&](const Conv2d& l) {
                   const std::size_t fan = l.in * l.kernel * l.kernel;
                   out.push_back({prefix + ".weight", {l.out, l.in, l.kernel, l.kernel}, ParamRole::weight, fan});
                   if (l.bias) out.push_back({prefix + ".bias", {l.out}, ParamRole::bias, fan});
                 },
                 [&](const ConvTranspose2d& l) {
                   // fan_in as PyTorch computes it for transposed weights: dim 1 * k * k
                   const std::size_t fan = l.out * l.kernel * l.kernel;
                   out.push_back({prefix + ".weight", {l.in, l.out, l.kernel, l.kernel}, ParamRole::weight, fan});
                   if (l.bias) out.push_back({prefix + ".bias", {l.out}, ParamRole::bias, fan});
                 },
                 [&](const Linear& l) {
                   out.push_back({prefix + ".weight", {l.out, l.in}, ParamRole::weight, l.in});
                   if (l.bias) out.push_back({prefix + ".bias", {l.out}, ParamRole::bias, l.in});
                 },
                 [&](const Residual& r) { collect_params(r.body, prefix + ".", out); },
                 [](const auto&) {},
             },
             layer.op);
}

inline std::size_t param_count(const Layer& layer) {
  return std::visit(detail::overloaded{
                        [](const Conv2d& l) -> std::size_t { return l.bias ? 2 : 1; },
                        [](const ConvTranspose2d& l) -> std::size_t { return l.bias ? 2 : 1; },
                        [](const Linear& l) -> std::size_t { return l.bias ? 2 : 1; },
                        [](const Residual& r) {
                          std::size_t n = 0;
                          for (const auto& b : r.body) n += param_count(b);
                          return n;
                        },
                        [](const auto&) -> std::size_t { return 0; },
                    },
                    layer.op);
}

inline Shape output_shape(const std::vector<Layer>& layers, Shape s);

inline Shape output_shape(const Layer& layer, const Shape& s) {
  return std::visit(
      detail::overloaded{
          [&](const Conv2d& l) {
            detail::check_conv_input(l, s);
            auto g = detail::conv_geometry(l, s);
            return Shape{s[0], l.out, g.out_h(), g.out_w()};
          },
          [&](const ConvTranspose2d& l) {
            auto g = detail::convt_geometry(l, s);
            return Shape{s[0], l.out, g.height, g.width};
          },
          [&](const MaxPool2d& l) { return Shape{s[0], s[1], s[2] / l.size, s[3] / l.size}; },
          [&](const Flatten&) { return Shape{s[0], shape_size(s) / s[0]}; },
          [&](const Linear& l) { return Shape{s[0], l.out}; },
          [&](const Residual& r) { return output_shape(r.body, s); },
          [&](const auto&) { return s; },
      },
      layer.op);
}

inline Shape output_shape(const std::vector<Layer>& layers, Shape s) {
  for (const auto& l : layers) s = output_shape(l, s);
  return s;
}

// Layer dispatch ----------------------------------------------------------------

template <class T>
Tensor<T> forward_layers(const std::vector<Layer>& layers, std::span<const Tensor<T>> params, Tensor<T> x,
                         std::vector<LayerTrace<T>>* traces, std::size_t stop = std::numeric_limits<std::size_t>::max());

template <class T>
Tensor<T> backward_layers(const std::vector<Layer>& layers, std::span<const Tensor<T>> params,
                          const std::vector<LayerTrace<T>>& traces, Tensor<T> dy, std::span<Tensor<T>> grads,
                          bool need_dx);

template <class T>
Tensor<T> forward_layer(const Layer& layer, std::span<const Tensor<T>> p, const Tensor<T>& x, LayerTrace<T>* tr) {
  return std::visit(detail::overloaded{
                        [&](const Residual& r) {
                          std::vector<LayerTrace<T>>* nested = nullptr;
                          if (tr) nested = &tr->nested;
                          Tensor<T> y = forward_layers<T>(r.body, p, x, nested);
                          x.check_same(y, "residual");
                          y += x;
                          return y;
                        },
                        [&](const auto& l) { return detail::forward<T>(l, p, x, tr); },
                    },
                    layer.op);
}

template <class T>
Tensor<T> backward_layer(const Layer& layer, std::span<const Tensor<T>> p, const LayerTrace<T>& tr,
                         const Tensor<T>& dy, std::span<Tensor<T>> grads, bool need_dx) {
  return std::visit(detail::overloaded{
                        [&](const Residual& r) {
                          // body gradient always needed to reach its parameters; skip edge added back
                          Tensor<T> dx = backward_layers<T>(r.body, p, tr.nested, dy, grads, true);
                          dx += dy;
                          return dx;
                        },
                        [&](const auto& l) { return detail::backward<T>(l, p, tr, dy, grads, need_dx); },
                    },
                    layer.op);
}

template <class T>
Tensor<T> forward_layers(const std::vector<Layer>& layers, std::span<const Tensor<T>> params, Tensor<T> x,
                         std::vector<LayerTrace<T>>* traces, std::size_t stop) {
  if (traces) traces->assign(std::min(stop, layers.size()), {});
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < layers.size() && i < stop; ++i) {
    const std::size_t np = param_count(layers[i]);
    x = forward_layer<T>(layers[i], params.subspan(cursor, np), x, traces ? &(*traces)[i] : nullptr);
    cursor += np;
  }
  return x;
}

template <class T>
Tensor<T> backward_layers(const std::vector<Layer>& layers, std::span<const Tensor<T>> params,
                          const std::vector<LayerTrace<T>>& traces, Tensor<T> dy, std::span<Tensor<T>> grads,
                          bool need_dx) {
  std::vector<std::size_t> offsets(traces.size() + 1, 0);
  for (std::size_t i = 0; i < traces.size(); ++i) offsets[i + 1] = offsets[i] + param_count(layers[i]);
  for (std::size_t i = traces.size(); i-- > 0;) {
    const std::size_t np = offsets[i + 1] - offsets[i];
    auto g = grads.empty() ? std::span<Tensor<T>>{} : grads.subspan(offsets[i], np);
    dy = backward_layer<T>(layers[i], params.subspan(offsets[i], np), traces[i], dy, g, need_dx || i > 0);
  }
  return dy;
}

}  // namespace accr::nn
