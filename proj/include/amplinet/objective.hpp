#pragma once

#include <algorithm>
#include <cmath>

#include "amplinet/errors.hpp"
#include "amplinet/tensor.hpp"

namespace amplinet {

struct FocalLossConfig {
  double gamma = 2.0;
  double label_smoothing = 0.3;
  std::size_t n_classes = 9;

  void validate() const {
    if (!(gamma >= 0.0)) throw UsageError("gamma must be >= 0");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw UsageError("label_smoothing must be in [0, 1)");
    if (n_classes < 1) throw UsageError("n_classes must be positive");
  }
};

[[nodiscard]] inline Vector<double> one_hot(std::size_t index, std::size_t n) {
  Vector<double> y = Vector<double>::Zero(static_cast<Eigen::Index>(n));
  y(static_cast<Eigen::Index>(index)) = 1.0;
  return y;
}

/// Uniform smoothing: y' = y (1 - eps) + eps / M.
[[nodiscard]] inline Vector<double> smooth_labels(const Vector<double>& y, double eps) {
  return (y.array() * (1.0 - eps) + eps / static_cast<double>(y.size())).matrix();
}

struct LossResult {
  double loss = 0.0;
  Vector<double> grad_logits;
};

inline constexpr double kProbFloor = 1e-12;

/// Categorical focal cross-entropy  L = -sum_c y_c (1 - p_c)^gamma ln p_c,
/// with the gradient taken with respect to the logits that produced `probs`
/// through a softmax. Probabilities are clamped to [1e-12, 1] inside the log.
[[nodiscard]] inline LossResult focal_loss(const Vector<double>& probs, const Vector<double>& target, double gamma) {
  if (probs.size() != target.size()) throw ShapeError("focal_loss: probs/target length mismatch");
  const Eigen::Index m = probs.size();
  LossResult r{0.0, Vector<double>::Zero(m)};

  // s_c = p_c * dL/dp_c, written so that p_c = 1 stays finite.
  Vector<double> s(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    const double p = std::clamp(probs(c), kProbFloor, 1.0);
    const double q = 1.0 - p;
    const double logp = std::log(p);
    const double focus = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
    r.loss -= target(c) * focus * logp;
    double dfocus_term = 0.0;  // p * d(focus)/dp * log p
    if (gamma != 0.0 && q > 0.0) dfocus_term = -gamma * std::pow(q, gamma - 1.0) * p * logp;
    s(c) = -target(c) * (dfocus_term + focus);
  }
  // dL/dz_j = sum_c (dL/dp_c) p_c (delta_cj - p_j) = s_j - p_j sum_c s_c
  r.grad_logits = s - probs * s.sum();
  return r;
}

}  // namespace amplinet
