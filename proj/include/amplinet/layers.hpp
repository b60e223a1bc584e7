#pragma once

// Layer primitives with hand-written adjoints:
//   - 1 x k convolution whose kernel is shared by every lead
//   - layer normalization over the channel vector of each (lead, time) cell
//   - aSoftmax activation  y = x * softmax(|x|)
//   - lead-wise global max/min pooling
//   - dense softmax classifier
// Every backward here is checked against central differences in tests/.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "amplinet/errors.hpp"
#include "amplinet/tensor.hpp"

namespace amplinet::layers {

template <std::floating_point S>
using ConstRowsMap = Eigen::Map<const RowMatrix<S>, 0, Eigen::OuterStride<>>;
template <std::floating_point S>
using RowsMap = Eigen::Map<RowMatrix<S>, 0, Eigen::OuterStride<>>;

// ---------------------------------------------------------------------------
// Lead-shared convolution

template <std::floating_point S>
struct ConvParams {
  std::size_t width = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t stride = 1;
  std::vector<S> kernel;  // [width][in_channels][out_channels]
  std::vector<S> bias;    // [out_channels]

  ConvParams() = default;
  ConvParams(std::size_t k, std::size_t c_in, std::size_t c_out, std::size_t s)
      : width(k), in_channels(c_in), out_channels(c_out), stride(s), kernel(k * c_in * c_out, S(0)), bias(c_out, S(0)) {
    if (k == 0 || c_in == 0 || c_out == 0 || s == 0) throw ShapeError("conv: zero-sized dimension");
    if (s == 1 && k % 2 == 0) throw ShapeError("conv: stride-1 kernels must have odd width");
  }

  [[nodiscard]] S& w(std::size_t dk, std::size_t ci, std::size_t co) {
    return kernel[(dk * in_channels + ci) * out_channels + co];
  }
  [[nodiscard]] S w(std::size_t dk, std::size_t ci, std::size_t co) const {
    return kernel[(dk * in_channels + ci) * out_channels + co];
  }
  [[nodiscard]] std::size_t param_count() const { return kernel.size() + bias.size(); }
};

/// "Same" padding geometry: out = ceil(T / stride); any odd pad goes to the right.
struct ConvGeometry {
  std::size_t out_len = 0;
  std::ptrdiff_t pad_left = 0;
};

[[nodiscard]] inline ConvGeometry conv_geometry(std::size_t time, std::size_t width, std::size_t stride) {
  const std::size_t out = (time + stride - 1) / stride;
  const auto needed = static_cast<std::ptrdiff_t>((out - 1) * stride + width) - static_cast<std::ptrdiff_t>(time);
  return {out, std::max<std::ptrdiff_t>(needed, 0) / 2};
}

namespace detail {

// Output rows [first, last] whose tap `dk` lands inside the input. Empty when first > last.
struct TapRange {
  std::ptrdiff_t first = 0;
  std::ptrdiff_t last = -1;
  std::ptrdiff_t input_start = 0;
  [[nodiscard]] std::ptrdiff_t rows() const { return last - first + 1; }
};

inline TapRange tap_range(std::size_t time, const ConvGeometry& g, std::size_t dk, std::size_t stride) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const std::ptrdiff_t lo = g.pad_left - static_cast<std::ptrdiff_t>(dk);
  const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(time) - 1 + lo;
  TapRange r;
  if (hi < 0) return r;
  r.first = lo <= 0 ? 0 : (lo + s - 1) / s;
  r.last = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(g.out_len) - 1, hi / s);
  r.input_start = r.first * s - lo;
  return r;
}

}  // namespace detail

/// Cross-correlation along time, applied to every lead with the same kernel and bias.
template <std::floating_point S>
[[nodiscard]] BasicTensor3<S> conv_lead_shared_forward(const BasicTensor3<S>& x, const ConvParams<S>& p) {
  if (x.channels() != p.in_channels) {
    throw ShapeError("conv: input has " + std::to_string(x.channels()) + " channels, kernel expects " +
                     std::to_string(p.in_channels));
  }
  if (x.time() == 0) throw ShapeError("conv: empty time axis");
  const auto g = conv_geometry(x.time(), p.width, p.stride);
  const std::size_t cin = p.in_channels;
  const std::size_t cout = p.out_channels;
  BasicTensor3<S> out(x.leads(), g.out_len, cout);
  const Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> bias(p.bias.data(), static_cast<Eigen::Index>(cout));

  for (std::size_t l = 0; l < x.leads(); ++l) {
    Eigen::Map<RowMatrix<S>> y(out.lead_data(l), static_cast<Eigen::Index>(g.out_len), static_cast<Eigen::Index>(cout));
    y.rowwise() = bias;
    for (std::size_t dk = 0; dk < p.width; ++dk) {
      const auto r = detail::tap_range(x.time(), g, dk, p.stride);
      if (r.rows() <= 0) continue;
      ConstRowsMap<S> xs(x.lead_data(l) + r.input_start * static_cast<std::ptrdiff_t>(cin), r.rows(),
                         static_cast<Eigen::Index>(cin), Eigen::OuterStride<>(static_cast<Eigen::Index>(p.stride * cin)));
      const Eigen::Map<const RowMatrix<S>> k(p.kernel.data() + dk * cin * cout, static_cast<Eigen::Index>(cin),
                                             static_cast<Eigen::Index>(cout));
      y.middleRows(r.first, r.rows()).noalias() += xs * k;
    }
  }
  return out;
}

template <std::floating_point S>
struct ConvGrads {
  BasicTensor3<S> grad_x;  // empty when not requested
  std::vector<S> grad_kernel;
  std::vector<S> grad_bias;
};

namespace detail {

// Column and row sums in a fixed order. Eigen's partial reductions pick
// scalar or packet paths from the destination's address, which changes the
// summation order and breaks bitwise reproducibility.
template <class A>
Eigen::Array<typename A::Scalar, 1, Eigen::Dynamic> col_sums(const A& a) {
  Eigen::Array<typename A::Scalar, 1, Eigen::Dynamic> out = Eigen::Array<typename A::Scalar, 1, Eigen::Dynamic>::Zero(a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) out(c) += a(r, c);
  }
  return out;
}

template <class A>
Eigen::Array<typename A::Scalar, Eigen::Dynamic, 1> row_sums(const A& a) {
  Eigen::Array<typename A::Scalar, Eigen::Dynamic, 1> out(a.rows());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    typename A::Scalar acc(0);
    for (Eigen::Index c = 0; c < a.cols(); ++c) acc += a(r, c);
    out(r) = acc;
  }
  return out;
}

}  // namespace detail

/// Adjoint of conv_lead_shared_forward. Kernel and bias gradients are summed
/// over all leads, since every lead used the same weights.
template <std::floating_point S>
[[nodiscard]] ConvGrads<S> conv_lead_shared_backward(const BasicTensor3<S>& x, const ConvParams<S>& p,
                                                     const BasicTensor3<S>& grad_out, bool want_grad_x = true) {
  if (x.channels() != p.in_channels) throw ShapeError("conv backward: input channel mismatch");
  const auto g = conv_geometry(x.time(), p.width, p.stride);
  require_dims(grad_out.dims(), Dims3{x.leads(), g.out_len, p.out_channels}, "conv backward grad_out");
  const std::size_t cin = p.in_channels;
  const std::size_t cout = p.out_channels;

  ConvGrads<S> grads;
  grads.grad_kernel.assign(p.kernel.size(), S(0));
  grads.grad_bias.assign(cout, S(0));
  if (want_grad_x) grads.grad_x = BasicTensor3<S>(x.dims());

  Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>> gb(grads.grad_bias.data(), static_cast<Eigen::Index>(cout));
  for (std::size_t l = 0; l < x.leads(); ++l) {
    const Eigen::Map<const RowMatrix<S>> go(grad_out.lead_data(l), static_cast<Eigen::Index>(g.out_len),
                                            static_cast<Eigen::Index>(cout));
    gb += detail::col_sums(go).matrix();
    for (std::size_t dk = 0; dk < p.width; ++dk) {
      const auto r = detail::tap_range(x.time(), g, dk, p.stride);
      if (r.rows() <= 0) continue;
      const auto offset = r.input_start * static_cast<std::ptrdiff_t>(cin);
      const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(p.stride * cin));
      ConstRowsMap<S> xs(x.lead_data(l) + offset, r.rows(), static_cast<Eigen::Index>(cin), stride);
      Eigen::Map<RowMatrix<S>> gk(grads.grad_kernel.data() + dk * cin * cout, static_cast<Eigen::Index>(cin),
                                  static_cast<Eigen::Index>(cout));
      gk.noalias() += xs.transpose() * go.middleRows(r.first, r.rows());
      if (want_grad_x) {
        const Eigen::Map<const RowMatrix<S>> k(p.kernel.data() + dk * cin * cout, static_cast<Eigen::Index>(cin),
                                               static_cast<Eigen::Index>(cout));
        RowsMap<S> gx(grads.grad_x.lead_data(l) + offset, r.rows(), static_cast<Eigen::Index>(cin), stride);
        gx.noalias() += go.middleRows(r.first, r.rows()) * k.transpose();
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Layer normalization over channels

template <std::floating_point S>
struct LayerNormParams {
  std::vector<S> gain;
  std::vector<S> bias;
  S epsilon = S(1e-5);

  LayerNormParams() = default;
  explicit LayerNormParams(std::size_t channels, S eps = S(1e-5))
      : gain(channels, S(1)), bias(channels, S(0)), epsilon(eps) {}

  [[nodiscard]] std::size_t channels() const { return gain.size(); }
  [[nodiscard]] std::size_t param_count() const { return gain.size() + bias.size(); }
};

namespace detail {

template <std::floating_point S>
using CellArray = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <std::floating_point S>
auto cells(const BasicTensor3<S>& x) {
  return Eigen::Map<const CellArray<S>>(x.data(), static_cast<Eigen::Index>(x.leads() * x.time()),
                                        static_cast<Eigen::Index>(x.channels()));
}

template <std::floating_point S>
auto cells(BasicTensor3<S>& x) {
  return Eigen::Map<CellArray<S>>(x.data(), static_cast<Eigen::Index>(x.leads() * x.time()),
                                  static_cast<Eigen::Index>(x.channels()));
}

template <std::floating_point S>
void check_norm_params(const BasicTensor3<S>& x, const LayerNormParams<S>& p) {
  if (p.gain.size() != x.channels() || p.bias.size() != x.channels()) {
    throw ShapeError("layernorm: parameter length " + std::to_string(p.gain.size()) + " does not match " +
                     std::to_string(x.channels()) + " channels");
  }
}

// Normalized cells and the per-cell reciprocal std.
template <std::floating_point S>
std::pair<CellArray<S>, Eigen::Array<S, Eigen::Dynamic, 1>> normalize_cells(const BasicTensor3<S>& x, S eps) {
  const auto a = cells(x);
  const auto c = static_cast<S>(x.channels());
  const Eigen::Array<S, Eigen::Dynamic, 1> mean = row_sums(a) / c;
  CellArray<S> centered = a.colwise() - mean;
  const Eigen::Array<S, Eigen::Dynamic, 1> var = row_sums(centered.square()) / c;
  Eigen::Array<S, Eigen::Dynamic, 1> rstd = (var + eps).rsqrt();
  centered.colwise() *= rstd;
  return {std::move(centered), std::move(rstd)};
}

}  // namespace detail

template <std::floating_point S>
[[nodiscard]] BasicTensor3<S> layernorm_forward(const BasicTensor3<S>& x, const LayerNormParams<S>& p) {
  detail::check_norm_params(x, p);
  BasicTensor3<S> out(x.dims());
  if (x.size() == 0) return out;
  auto [xhat, rstd] = detail::normalize_cells(x, p.epsilon);
  const Eigen::Map<const Eigen::Array<S, 1, Eigen::Dynamic>> gain(p.gain.data(), static_cast<Eigen::Index>(p.gain.size()));
  const Eigen::Map<const Eigen::Array<S, 1, Eigen::Dynamic>> bias(p.bias.data(), static_cast<Eigen::Index>(p.bias.size()));
  detail::cells(out) = (xhat.rowwise() * gain).rowwise() + bias;
  return out;
}

template <std::floating_point S>
struct LayerNormGrads {
  BasicTensor3<S> grad_x;
  std::vector<S> grad_gain;
  std::vector<S> grad_bias;
};

template <std::floating_point S>
[[nodiscard]] LayerNormGrads<S> layernorm_backward(const BasicTensor3<S>& x, const LayerNormParams<S>& p,
                                                   const BasicTensor3<S>& grad_out) {
  detail::check_norm_params(x, p);
  require_dims(grad_out.dims(), x.dims(), "layernorm backward grad_out");
  LayerNormGrads<S> grads{BasicTensor3<S>(x.dims()), std::vector<S>(p.gain.size(), S(0)),
                          std::vector<S>(p.bias.size(), S(0))};
  if (x.size() == 0) return grads;
  auto [xhat, rstd] = detail::normalize_cells(x, p.epsilon);
  const auto g = detail::cells(grad_out);
  const Eigen::Map<const Eigen::Array<S, 1, Eigen::Dynamic>> gain(p.gain.data(), static_cast<Eigen::Index>(p.gain.size()));

  Eigen::Map<Eigen::Array<S, 1, Eigen::Dynamic>>(grads.grad_gain.data(), gain.size()) = detail::col_sums(g * xhat);
  Eigen::Map<Eigen::Array<S, 1, Eigen::Dynamic>>(grads.grad_bias.data(), gain.size()) = detail::col_sums(g);

  const auto c = static_cast<S>(x.channels());
  const detail::CellArray<S> dxhat = g.rowwise() * gain;
  const Eigen::Array<S, Eigen::Dynamic, 1> mean_d = detail::row_sums(dxhat) / c;
  const Eigen::Array<S, Eigen::Dynamic, 1> mean_dx = detail::row_sums(dxhat * xhat) / c;
  detail::cells(grads.grad_x) = ((dxhat.colwise() - mean_d) - xhat.colwise() * mean_dx).colwise() * rstd;
  return grads;
}

// ---------------------------------------------------------------------------
// aSoftmax

enum class ASoftmaxAxis : std::uint8_t { time = 0, channel = 1 };

template <std::floating_point S>
struct ASoftmaxResult {
  BasicTensor3<S> y;
  BasicTensor3<S> weights;
};

/// y = x * softmax(|x|) along `axis`. The softmax weights are returned as well;
/// they are the per-sample amplification factors used for saliency.
template <std::floating_point S>
[[nodiscard]] ASoftmaxResult<S> asoftmax_forward(const BasicTensor3<S>& x, ASoftmaxAxis axis) {
  ASoftmaxResult<S> r{BasicTensor3<S>(x.dims()), BasicTensor3<S>(x.dims())};
  if (x.size() == 0) return r;
  const auto rows = static_cast<Eigen::Index>(x.time());
  const auto cols = static_cast<Eigen::Index>(x.channels());
  using A = detail::CellArray<S>;
  for (std::size_t l = 0; l < x.leads(); ++l) {
    const Eigen::Map<const A> in(x.lead_data(l), rows, cols);
    Eigen::Map<A> w(r.weights.lead_data(l), rows, cols);
    const A mag = in.abs();
    if (axis == ASoftmaxAxis::time) {
      w = (mag.rowwise() - mag.colwise().maxCoeff()).exp();
      w.rowwise() /= detail::col_sums(w);
    } else {
      w = (mag.colwise() - mag.rowwise().maxCoeff()).exp();
      w.colwise() /= detail::row_sums(w);
    }
    Eigen::Map<A>(r.y.lead_data(l), rows, cols) = in * w;
  }
  return r;
}

/// Exact adjoint using the weights of the forward pass:
///   dx_j = g_j w_j + sign(x_j) w_j (g_j x_j - sum_i g_i x_i w_i),  sign(0) = 0.
template <std::floating_point S>
[[nodiscard]] BasicTensor3<S> asoftmax_backward(const BasicTensor3<S>& x, const BasicTensor3<S>& weights,
                                                ASoftmaxAxis axis, const BasicTensor3<S>& grad_out) {
  require_dims(weights.dims(), x.dims(), "asoftmax backward weights");
  require_dims(grad_out.dims(), x.dims(), "asoftmax backward grad_out");
  BasicTensor3<S> grad_x(x.dims());
  if (x.size() == 0) return grad_x;
  const auto rows = static_cast<Eigen::Index>(x.time());
  const auto cols = static_cast<Eigen::Index>(x.channels());
  using A = detail::CellArray<S>;
  for (std::size_t l = 0; l < x.leads(); ++l) {
    const Eigen::Map<const A> in(x.lead_data(l), rows, cols);
    const Eigen::Map<const A> w(weights.lead_data(l), rows, cols);
    const Eigen::Map<const A> g(grad_out.lead_data(l), rows, cols);
    const A gx = g * in;
    A inner;
    if (axis == ASoftmaxAxis::time) {
      inner = gx.rowwise() - detail::col_sums(gx * w);
    } else {
      inner = gx.colwise() - detail::row_sums(gx * w);
    }
    Eigen::Map<A>(grad_x.lead_data(l), rows, cols) = g * w + in.sign() * w * inner;
  }
  return grad_x;
}

template <std::floating_point S>
[[nodiscard]] BasicTensor3<S> asoftmax_backward(const BasicTensor3<S>& x, ASoftmaxAxis axis,
                                                const BasicTensor3<S>& grad_out) {
  return asoftmax_backward(x, asoftmax_forward(x, axis).weights, axis, grad_out);
}

// ---------------------------------------------------------------------------
// Lead-wise min/max pooling

template <std::floating_point S>
struct PoolResult {
  RowMatrix<S> values;                // leads x 2C: [max over time | min over time]
  std::vector<std::uint32_t> argtime;  // time index that produced each value
  std::size_t time = 0;
};

/// Ties resolve to the lowest time index, which is also where backward routes the gradient.
template <std::floating_point S>
[[nodiscard]] PoolResult<S> minmax_pool(const BasicTensor3<S>& x) {
  if (x.time() == 0) throw ShapeError("minmax_pool: empty time axis");
  const std::size_t c = x.channels();
  PoolResult<S> r{RowMatrix<S>(static_cast<Eigen::Index>(x.leads()), static_cast<Eigen::Index>(2 * c)),
                  std::vector<std::uint32_t>(x.leads() * 2 * c, 0), x.time()};
  for (std::size_t l = 0; l < x.leads(); ++l) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      S hi = x(l, 0, ch);
      S lo = hi;
      std::uint32_t at_hi = 0;
      std::uint32_t at_lo = 0;
      for (std::size_t t = 1; t < x.time(); ++t) {
        const S v = x(l, t, ch);
        if (v > hi) {
          hi = v;
          at_hi = static_cast<std::uint32_t>(t);
        }
        if (v < lo) {
          lo = v;
          at_lo = static_cast<std::uint32_t>(t);
        }
      }
      const auto li = static_cast<Eigen::Index>(l);
      r.values(li, static_cast<Eigen::Index>(ch)) = hi;
      r.values(li, static_cast<Eigen::Index>(c + ch)) = lo;
      r.argtime[l * 2 * c + ch] = at_hi;
      r.argtime[l * 2 * c + c + ch] = at_lo;
    }
  }
  return r;
}

template <std::floating_point S>
[[nodiscard]] BasicTensor3<S> minmax_pool_backward(const PoolResult<S>& pool, const RowMatrix<S>& grad_out) {
  const auto leads = static_cast<std::size_t>(pool.values.rows());
  const auto two_c = static_cast<std::size_t>(pool.values.cols());
  if (grad_out.rows() != pool.values.rows() || grad_out.cols() != pool.values.cols()) {
    throw ShapeError("minmax_pool backward: gradient shape mismatch");
  }
  const std::size_t c = two_c / 2;
  BasicTensor3<S> grad_x(leads, pool.time, c);
  for (std::size_t l = 0; l < leads; ++l) {
    for (std::size_t j = 0; j < two_c; ++j) {
      grad_x(l, pool.argtime[l * two_c + j], j % c) +=
          grad_out(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(j));
    }
  }
  return grad_x;
}

// ---------------------------------------------------------------------------
// Dense softmax classifier

template <std::floating_point S>
struct DenseParams {
  RowMatrix<S> weights;  // inputs x outputs
  Vector<S> bias;        // outputs

  DenseParams() = default;
  DenseParams(std::size_t inputs, std::size_t outputs)
      : weights(RowMatrix<S>::Zero(static_cast<Eigen::Index>(inputs), static_cast<Eigen::Index>(outputs))),
        bias(Vector<S>::Zero(static_cast<Eigen::Index>(outputs))) {}

  [[nodiscard]] std::size_t inputs() const { return static_cast<std::size_t>(weights.rows()); }
  [[nodiscard]] std::size_t outputs() const { return static_cast<std::size_t>(weights.cols()); }
  [[nodiscard]] std::size_t param_count() const { return static_cast<std::size_t>(weights.size() + bias.size()); }
};

template <std::floating_point S>
[[nodiscard]] Vector<S> softmax(const Vector<S>& logits) {
  Vector<S> e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// Given dL/dprobs, returns dL/dlogits for probs = softmax(logits).
template <std::floating_point S>
[[nodiscard]] Vector<S> softmax_backward(const Vector<S>& probs, const Vector<S>& grad_probs) {
  return (probs.array() * (grad_probs.array() - grad_probs.dot(probs))).matrix();
}

template <std::floating_point S>
[[nodiscard]] Vector<S> dense_logits(const Vector<S>& v, const DenseParams<S>& p) {
  if (static_cast<std::size_t>(v.size()) != p.inputs()) {
    throw ShapeError("dense: input length " + std::to_string(v.size()) + ", expected " + std::to_string(p.inputs()));
  }
  return p.weights.transpose() * v + p.bias;
}

template <std::floating_point S>
[[nodiscard]] Vector<S> dense_softmax_forward(const Vector<S>& v, const DenseParams<S>& p) {
  return softmax(dense_logits(v, p));
}

template <std::floating_point S>
struct DenseGrads {
  Vector<S> grad_v;
  RowMatrix<S> grad_weights;
  Vector<S> grad_bias;
};

/// Backward from the gradient with respect to the logits.
template <std::floating_point S>
[[nodiscard]] DenseGrads<S> dense_backward(const Vector<S>& v, const DenseParams<S>& p, const Vector<S>& grad_logits) {
  if (static_cast<std::size_t>(v.size()) != p.inputs() || static_cast<std::size_t>(grad_logits.size()) != p.outputs()) {
    throw ShapeError("dense backward: shape mismatch");
  }
  return {p.weights * grad_logits, v * grad_logits.transpose(), grad_logits};
}

}  // namespace amplinet::layers
