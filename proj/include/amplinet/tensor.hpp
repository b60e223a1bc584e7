#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "amplinet/errors.hpp"

namespace amplinet {

template <std::floating_point Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <std::floating_point Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct Dims3 {
  std::size_t leads = 0;
  std::size_t time = 0;
  std::size_t channels = 0;

  [[nodiscard]] std::size_t size() const { return leads * time * channels; }
  friend bool operator==(const Dims3&, const Dims3&) = default;

  [[nodiscard]] std::string str() const {
    std::ostringstream os;
    os << leads << " x " << time << " x " << channels;
    return os.str();
  }
};

/// Rank-3 array laid out contiguously in (lead, time, channel) order.
template <std::floating_point Scalar>
class BasicTensor3 {
 public:
  using value_type = Scalar;

  BasicTensor3() = default;
  BasicTensor3(std::size_t leads, std::size_t time, std::size_t channels, Scalar fill = Scalar(0))
      : dims_{leads, time, channels}, values_(leads * time * channels, fill) {}
  explicit BasicTensor3(Dims3 dims, Scalar fill = Scalar(0)) : BasicTensor3(dims.leads, dims.time, dims.channels, fill) {}

  [[nodiscard]] const Dims3& dims() const { return dims_; }
  [[nodiscard]] std::size_t leads() const { return dims_.leads; }
  [[nodiscard]] std::size_t time() const { return dims_.time; }
  [[nodiscard]] std::size_t channels() const { return dims_.channels; }
  [[nodiscard]] std::size_t size() const { return values_.size(); }

  [[nodiscard]] Scalar& operator()(std::size_t l, std::size_t t, std::size_t c) {
    return values_[(l * dims_.time + t) * dims_.channels + c];
  }
  [[nodiscard]] Scalar operator()(std::size_t l, std::size_t t, std::size_t c) const {
    return values_[(l * dims_.time + t) * dims_.channels + c];
  }

  [[nodiscard]] std::span<Scalar> values() { return values_; }
  [[nodiscard]] std::span<const Scalar> values() const { return values_; }
  [[nodiscard]] Scalar* data() { return values_.data(); }
  [[nodiscard]] const Scalar* data() const { return values_.data(); }

  /// The T x C slab of one lead.
  [[nodiscard]] Scalar* lead_data(std::size_t l) { return values_.data() + l * dims_.time * dims_.channels; }
  [[nodiscard]] const Scalar* lead_data(std::size_t l) const {
    return values_.data() + l * dims_.time * dims_.channels;
  }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  void fill(Scalar v) { std::fill(values_.begin(), values_.end(), v); }

  friend bool operator==(const BasicTensor3&, const BasicTensor3&) = default;

 private:
  Dims3 dims_{};
  std::vector<Scalar, Eigen::aligned_allocator<Scalar>> values_;
};

using Tensor3 = BasicTensor3<double>;

inline void require_dims(const Dims3& got, const Dims3& want, const std::string& what) {
  if (got != want) {
    throw ShapeError("shape mismatch: " + what + " (expected " + want.str() + ", got " + got.str() + ")");
  }
}

}  // namespace amplinet
