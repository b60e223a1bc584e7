#pragma once

// The full network:
//
//   input 12 x T x 1
//   ConvB1 1x3/s1 -> 12 x T x 64
//   ConvB2 1x3/s1 -> 12 x T x 128
//   ConvB3 1x3/s2 -> 12 x T/2 x 128 --> tap A: minmax_pool -> 12 x 256
//   ConvB4 1x9/s1 -> 12 x T/2 x 128 --> tap B: minmax_pool -> 12 x 256
//   concat taps (12 x 512) -> flatten lead-major (6144) -> dense softmax (9)
//
// with ConvB = lead-shared conv -> layer norm -> aSoftmax. Pooling removes the
// time axis, so any T >= 1 works with the same parameters; the canonical
// input length is 1500.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "amplinet/errors.hpp"
#include "amplinet/layers.hpp"
#include "amplinet/signal_io.hpp"
#include "amplinet/tensor.hpp"

namespace amplinet {

using layers::ASoftmaxAxis;

struct ConvBlockSpec {
  std::size_t width;
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t stride;
};

inline constexpr std::size_t kNumBlocks = 4;
inline constexpr std::array<ConvBlockSpec, kNumBlocks> kBlockSpecs = {{
    {3, 1, 64, 1},
    {3, 64, 128, 1},
    {3, 128, 128, 2},
    {9, 128, 128, 1},
}};
inline constexpr std::size_t kTapAAfterBlock = 2;  // zero-based: ConvB3
inline constexpr std::size_t kTapBAfterBlock = 3;  // ConvB4
inline constexpr std::size_t kTapWidth = 2 * 128;
inline constexpr std::size_t kClassifierInputs = kNumLeads * 2 * kTapWidth;  // 6144
inline constexpr std::size_t kCanonicalInputLen = 1500;
inline constexpr std::size_t kCanonicalParamCount = 278'025;
inline constexpr std::uint32_t kModelFormatVersion = 1;

struct ConvBlockWeights {
  layers::ConvParams<double> conv;
  layers::LayerNormParams<double> norm;
};

/// Every trainable array of the network. Also used as the gradient container.
struct NetworkWeights {
  std::array<ConvBlockWeights, kNumBlocks> blocks;
  layers::DenseParams<double> classifier;

  /// Canonical shapes with all values zero except layer-norm gains (one).
  [[nodiscard]] static NetworkWeights canonical() {
    NetworkWeights w;
    for (std::size_t b = 0; b < kNumBlocks; ++b) {
      const auto& s = kBlockSpecs[b];
      w.blocks[b].conv = layers::ConvParams<double>(s.width, s.in_channels, s.out_channels, s.stride);
      w.blocks[b].norm = layers::LayerNormParams<double>(s.out_channels);
    }
    w.classifier = layers::DenseParams<double>(kClassifierInputs, kNumClasses);
    return w;
  }

  /// Same shapes as `canonical()` but every value zero; the gradient accumulator.
  [[nodiscard]] static NetworkWeights zeros() {
    NetworkWeights w = canonical();
    w.for_each_array([](const std::string&, std::span<double> v, const std::vector<std::size_t>&) {
      std::fill(v.begin(), v.end(), 0.0);
    });
    return w;
  }

  /// Visits arrays in a fixed order with their serialized name and shape.
  template <class F>
  void for_each_array(F&& f) {
    visit(*this, std::forward<F>(f));
  }
  template <class F>
  void for_each_array(F&& f) const {
    visit(*this, std::forward<F>(f));
  }

  [[nodiscard]] std::size_t param_count() const {
    std::size_t n = 0;
    for_each_array([&](const std::string&, std::span<const double> v, const std::vector<std::size_t>&) { n += v.size(); });
    return n;
  }

  friend bool operator==(const NetworkWeights& a, const NetworkWeights& b) {
    std::vector<std::vector<double>> flat_a;
    std::vector<std::vector<double>> flat_b;
    a.for_each_array([&](const std::string&, std::span<const double> v, const std::vector<std::size_t>&) {
      flat_a.emplace_back(v.begin(), v.end());
    });
    b.for_each_array([&](const std::string&, std::span<const double> v, const std::vector<std::size_t>&) {
      flat_b.emplace_back(v.begin(), v.end());
    });
    return flat_a == flat_b;
  }

 private:
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    using Elem = std::conditional_t<std::is_const_v<Self>, const double, double>;
    for (std::size_t b = 0; b < kNumBlocks; ++b) {
      auto& blk = self.blocks[b];
      const std::string prefix = "block" + std::to_string(b + 1) + ".";
      f(prefix + "conv.kernel", std::span<Elem>(blk.conv.kernel),
        std::vector<std::size_t>{1, blk.conv.width, blk.conv.in_channels, blk.conv.out_channels});
      f(prefix + "conv.bias", std::span<Elem>(blk.conv.bias), std::vector<std::size_t>{blk.conv.bias.size()});
      f(prefix + "norm.gain", std::span<Elem>(blk.norm.gain), std::vector<std::size_t>{blk.norm.gain.size()});
      f(prefix + "norm.bias", std::span<Elem>(blk.norm.bias), std::vector<std::size_t>{blk.norm.bias.size()});
    }
    auto& cls = self.classifier;
    f("classifier.weights", std::span<Elem>(cls.weights.data(), static_cast<std::size_t>(cls.weights.size())),
      std::vector<std::size_t>{cls.inputs(), cls.outputs()});
    f("classifier.bias", std::span<Elem>(cls.bias.data(), static_cast<std::size_t>(cls.bias.size())),
      std::vector<std::size_t>{cls.outputs()});
  }
};

using ParamGradients = NetworkWeights;

struct ModelParams {
  NetworkWeights weights = NetworkWeights::canonical();
  ASoftmaxAxis asoftmax_axis = ASoftmaxAxis::time;
  std::uint32_t format_version = kModelFormatVersion;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

[[nodiscard]] inline std::size_t count_params(const ModelParams& p) { return p.weights.param_count(); }

/// Glorot-uniform conv and dense weights, zero biases, unit layer-norm gains.
[[nodiscard]] inline ModelParams init_params(std::uint64_t seed, ASoftmaxAxis axis = ASoftmaxAxis::time) {
  ModelParams p;
  p.asoftmax_axis = axis;
  std::mt19937_64 rng(seed);
  auto fill = [&rng](std::span<double> v, double fan_in, double fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& x : v) x = dist(rng);
  };
  for (auto& blk : p.weights.blocks) {
    const auto& c = blk.conv;
    fill(blk.conv.kernel, double(c.width * c.in_channels), double(c.width * c.out_channels));
  }
  auto& cls = p.weights.classifier;
  fill(std::span<double>(cls.weights.data(), static_cast<std::size_t>(cls.weights.size())), double(cls.inputs()),
       double(cls.outputs()));
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct BlockTrace {
  Tensor3 input;
  Tensor3 pre_norm;    // conv output
  Tensor3 pre_act;     // layer norm output
  Tensor3 amplification;  // aSoftmax weights
};

struct ForwardTrace {
  std::array<BlockTrace, kNumBlocks> blocks;
  Tensor3 output;  // ConvB4 activation
  layers::PoolResult<double> tap_a;
  layers::PoolResult<double> tap_b;
  RowMatrix<double> features;  // 12 x 512 concat of the taps
  Vector<double> flat;         // lead-major flatten of `features`
  Vector<double> logits;

  /// Shape of every stage, in order, for reporting.
  [[nodiscard]] std::vector<std::pair<std::string, std::string>> stage_shapes() const {
    std::vector<std::pair<std::string, std::string>> s;
    s.emplace_back("input", blocks[0].input.dims().str());
    for (std::size_t b = 0; b + 1 < kNumBlocks; ++b) {
      s.emplace_back("ConvB" + std::to_string(b + 1), blocks[b + 1].input.dims().str());
    }
    s.emplace_back("ConvB4", output.dims().str());
    s.emplace_back("MinMaxPool A", std::to_string(tap_a.values.rows()) + " x " + std::to_string(tap_a.values.cols()));
    s.emplace_back("MinMaxPool B", std::to_string(tap_b.values.rows()) + " x " + std::to_string(tap_b.values.cols()));
    s.emplace_back("Concat", "1 x " + std::to_string(flat.size()));
    s.emplace_back("SoftMax", "1 x " + std::to_string(logits.size()));
    return s;
  }
};

struct ForwardResult {
  Vector<double> probs;
  std::optional<ForwardTrace> trace;
};

namespace detail {

inline std::string stage_name(std::size_t block) { return "ConvB" + std::to_string(block + 1); }

}  // namespace detail

[[nodiscard]] inline ForwardResult forward(const Tensor3& input, const ModelParams& params, bool keep_trace = false) {
  if (input.leads() != kNumLeads || input.channels() != 1 || input.time() == 0) {
    throw ShapeError("input: expected 12 x T x 1, got " + input.dims().str());
  }
  ForwardTrace tr;
  Tensor3 x = input;
  std::optional<layers::PoolResult<double>> tap_a;
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    const auto& blk = params.weights.blocks[b];
    BlockTrace& bt = tr.blocks[b];
    try {
      bt.pre_norm = layers::conv_lead_shared_forward(x, blk.conv);
      bt.pre_act = layers::layernorm_forward(bt.pre_norm, blk.norm);
    } catch (const ShapeError& e) {
      throw ShapeError(detail::stage_name(b) + ": " + e.what());
    }
    auto act = layers::asoftmax_forward(bt.pre_act, params.asoftmax_axis);
    bt.input = std::move(x);
    bt.amplification = std::move(act.weights);
    x = std::move(act.y);
    if (b == kTapAAfterBlock) tr.tap_a = layers::minmax_pool(x);
    if (!keep_trace) {
      bt = BlockTrace{};
    }
  }
  tr.tap_b = layers::minmax_pool(x);
  tr.output = std::move(x);

  const std::size_t leads = kNumLeads;
  const auto wa = static_cast<std::size_t>(tr.tap_a.values.cols());
  const auto wb = static_cast<std::size_t>(tr.tap_b.values.cols());
  tr.features = RowMatrix<double>(static_cast<Eigen::Index>(leads), static_cast<Eigen::Index>(wa + wb));
  tr.features << tr.tap_a.values, tr.tap_b.values;
  tr.flat = Eigen::Map<const Vector<double>>(tr.features.data(), tr.features.size());
  try {
    tr.logits = layers::dense_logits(tr.flat, params.weights.classifier);
  } catch (const ShapeError& e) {
    throw ShapeError(std::string("classifier: ") + e.what());
  }

  ForwardResult r{layers::softmax(tr.logits), std::nullopt};
  if (keep_trace) r.trace = std::move(tr);
  return r;
}

/// Parameter gradients given dL/dlogits for the trace's input.
[[nodiscard]] inline ParamGradients backward(const ForwardTrace& trace, const ModelParams& params,
                                             const Vector<double>& grad_logits) {
  if (trace.blocks[0].input.size() == 0) throw UsageError("backward: trace was not retained (keep_trace)");
  ParamGradients grads = NetworkWeights::zeros();

  auto dense = layers::dense_backward(trace.flat, params.weights.classifier, grad_logits);
  grads.classifier.weights = std::move(dense.grad_weights);
  grads.classifier.bias = std::move(dense.grad_bias);

  const auto wa = trace.tap_a.values.cols();
  const auto wb = trace.tap_b.values.cols();
  const Eigen::Map<const RowMatrix<double>> grad_features(dense.grad_v.data(), static_cast<Eigen::Index>(kNumLeads),
                                                          wa + wb);
  const RowMatrix<double> grad_tap_a = grad_features.leftCols(wa);
  const RowMatrix<double> grad_tap_b = grad_features.rightCols(wb);

  Tensor3 grad_y = layers::minmax_pool_backward(trace.tap_b, grad_tap_b);
  for (std::size_t bi = kNumBlocks; bi-- > 0;) {
    const auto& blk = params.weights.blocks[bi];
    const BlockTrace& bt = trace.blocks[bi];
    if (bi == kTapAAfterBlock) {
      const Tensor3 from_tap = layers::minmax_pool_backward(trace.tap_a, grad_tap_a);
      auto g = grad_y.values();
      auto h = from_tap.values();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += h[i];
    }
    const Tensor3 grad_act = layers::asoftmax_backward(bt.pre_act, bt.amplification, params.asoftmax_axis, grad_y);
    auto norm = layers::layernorm_backward(bt.pre_norm, blk.norm, grad_act);
    auto conv = layers::conv_lead_shared_backward(bt.input, blk.conv, norm.grad_x, bi > 0);
    auto& gb = grads.blocks[bi];
    gb.conv.kernel = std::move(conv.grad_kernel);
    gb.conv.bias = std::move(conv.grad_bias);
    gb.norm.gain = std::move(norm.grad_gain);
    gb.norm.bias = std::move(norm.grad_bias);
    if (bi > 0) grad_y = std::move(conv.grad_x);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// FLOP accounting

struct FlopItem {
  std::string name;
  std::uint64_t flops = 0;
};

struct FlopReport {
  std::vector<FlopItem> items;
  [[nodiscard]] std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& i : items) t += i.flops;
    return t;
  }
};

inline constexpr std::string_view kFlopConvention =
    "2 FLOPs per multiply-accumulate for conv and dense; +1 per conv bias add and dense bias add; "
    "layernorm 7/element; aSoftmax 6/element; minmax pool 2/element; softmax 4/output";

[[nodiscard]] inline FlopReport count_flops(const ModelParams& params, Dims3 input_dims) {
  FlopReport r;
  std::size_t time = input_dims.time;
  const std::size_t leads = input_dims.leads;
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    const auto& c = params.weights.blocks[b].conv;
    const auto g = layers::conv_geometry(time, c.width, c.stride);
    const std::uint64_t outputs = std::uint64_t(leads) * g.out_len * c.out_channels;
    const std::string n = detail::stage_name(b);
    r.items.push_back({n + ".conv", 2 * outputs * c.width * c.in_channels});
    r.items.push_back({n + ".conv_bias", outputs});
    r.items.push_back({n + ".layernorm", 7 * outputs});
    r.items.push_back({n + ".asoftmax", 6 * outputs});
    if (b == kTapAAfterBlock || b == kTapBAfterBlock) r.items.push_back({n + ".minmax_pool", 2 * outputs});
    time = g.out_len;
  }
  const auto& d = params.weights.classifier;
  r.items.push_back({"dense", 2 * std::uint64_t(d.inputs()) * d.outputs() + d.outputs()});
  r.items.push_back({"softmax", 4 * std::uint64_t(d.outputs())});
  return r;
}

// ---------------------------------------------------------------------------
// "ANE1" model container:
//   magic "ANE1" | u32 format_version | u32 asoftmax_axis | u32 array_count |
//   per array: u32 name_len | name | u32 rank | rank x u64 dims | f64 payload
// Little-endian throughout. Loading validates against the canonical shapes.

[[nodiscard]] inline std::string encode_model(const ModelParams& p) {
  std::string out = "ANE1";
  detail::put_le(out, p.format_version, 4);
  detail::put_le(out, static_cast<std::uint32_t>(p.asoftmax_axis), 4);
  std::uint32_t count = 0;
  p.weights.for_each_array([&](const std::string&, std::span<const double>, const std::vector<std::size_t>&) { ++count; });
  detail::put_le(out, count, 4);
  p.weights.for_each_array([&](const std::string& name, std::span<const double> v, const std::vector<std::size_t>& dims) {
    detail::put_le(out, name.size(), 4);
    out.append(name);
    detail::put_le(out, dims.size(), 4);
    for (auto d : dims) detail::put_le(out, d, 8);
    for (double x : v) detail::put_le(out, std::bit_cast<std::uint64_t>(x), 8);
  });
  return out;
}

[[nodiscard]] inline ModelParams decode_model(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t pos = 0;
  auto need = [&](std::size_t n, const char* what) {
    if (bytes.size() - pos < n) throw DataError(std::string("truncated model file (") + what + ")");
  };
  auto take = [&](int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    const auto v = detail::get_le(p + pos, n);
    pos += static_cast<std::size_t>(n);
    return v;
  };

  need(4, "magic");
  if (bytes.substr(0, 4) != "ANE1") throw DataError("bad magic");
  pos = 4;
  ModelParams m;
  m.format_version = static_cast<std::uint32_t>(take(4, "format_version"));
  if (m.format_version != kModelFormatVersion) {
    throw DataError("unsupported format_version " + std::to_string(m.format_version));
  }
  const auto axis = take(4, "asoftmax_axis");
  if (axis > 1) throw DataError("invalid asoftmax_axis " + std::to_string(axis));
  m.asoftmax_axis = static_cast<ASoftmaxAxis>(axis);
  const auto count = take(4, "array_count");

  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<double>>> arrays;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = static_cast<std::size_t>(take(4, "name length"));
    need(name_len, "name");
    std::string name(bytes.substr(pos, name_len));
    pos += name_len;
    const auto rank = take(4, "rank");
    if (rank > 8) throw DataError("array " + name + ": implausible rank " + std::to_string(rank));
    std::vector<std::size_t> dims;
    std::uint64_t n = 1;
    for (std::uint64_t r = 0; r < rank; ++r) {
      dims.push_back(static_cast<std::size_t>(take(8, "dims")));
      n *= dims.back();
    }
    if (n > (bytes.size() - pos) / 8) throw DataError("truncated model file (payload of " + name + ")");
    std::vector<double> values(static_cast<std::size_t>(n));
    for (auto& v : values) v = std::bit_cast<double>(take(8, "payload"));
    if (!arrays.emplace(name, std::make_pair(std::move(dims), std::move(values))).second) {
      throw DataError("duplicate array: " + name);
    }
  }
  if (pos != bytes.size()) throw DataError("trailing bytes after model arrays");

  std::size_t matched = 0;
  m.weights.for_each_array([&](const std::string& name, std::span<double> v, const std::vector<std::size_t>& dims) {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw DataError("missing array: " + name);
    if (it->second.first != dims) throw ShapeError("shape mismatch: " + name);
    std::copy(it->second.second.begin(), it->second.second.end(), v.begin());
    ++matched;
  });
  if (matched != arrays.size()) throw DataError("model file contains unknown arrays");
  return m;
}

inline void save_model(const ModelParams& p, const std::filesystem::path& path) {
  detail::write_file(path, encode_model(p));
}

[[nodiscard]] inline ModelParams load_model(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  try {
    return decode_model(bytes);
  } catch (const ShapeError& e) {
    throw ShapeError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace amplinet
