#pragma once

// Adamax with the update written without bias correction by default:
//   m_t = b1 m_{t-1} + (1 - b1) g_t
//   u_t = max(b2 u_{t-1}, |g_t|)
//   theta <- theta - lr / (u_t + eps) * m_t
// Correction (lr / (1 - b1^t)) is opt-in.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "amplinet/errors.hpp"

namespace amplinet {

struct AdamaxConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  bool bias_correction = false;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw UsageError("beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("beta2 must be in [0, 1)");
    if (!(epsilon > 0.0)) throw UsageError("epsilon must be positive");
  }
};

/// Optimizer state for a parameter container `P`. `P` must expose
/// `for_each_array(f)` calling f(name, std::span<double>, dims) in a fixed order.
template <class P>
struct AdamaxState {
  P m;
  P u;
  std::uint64_t t = 0;
  AdamaxConfig config;
};

/// Zero moments shaped like `params`.
template <class P>
[[nodiscard]] AdamaxState<P> make_adamax_state(const P& params, AdamaxConfig cfg = {}) {
  cfg.validate();
  AdamaxState<P> s{params, params, 0, cfg};
  auto zero = [](const std::string&, std::span<double> v, const auto&) { std::fill(v.begin(), v.end(), 0.0); };
  s.m.for_each_array(zero);
  s.u.for_each_array(zero);
  return s;
}

/// Elementwise update of one array. `alpha` already includes any bias correction.
inline void adamax_update(std::span<double> theta, std::span<const double> g, std::span<double> m, std::span<double> u,
                          const AdamaxConfig& cfg, double alpha) {
  if (g.size() != theta.size() || m.size() != theta.size() || u.size() != theta.size()) {
    throw ShapeError("adamax: array length mismatch");
  }
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    u[i] = std::max(cfg.beta2 * u[i], std::abs(g[i]));
    theta[i] -= alpha / (u[i] + cfg.epsilon) * m[i];
  }
}

/// One optimizer step over every array; increments t exactly once.
template <class P>
void adamax_step(P& params, const P& grads, AdamaxState<P>& state, double lr) {
  if (!(lr > 0.0)) throw UsageError("learning rate must be positive");
  state.t += 1;
  double alpha = lr;
  if (state.config.bias_correction) alpha = lr / (1.0 - std::pow(state.config.beta1, static_cast<double>(state.t)));

  std::vector<std::span<double>> theta;
  std::vector<std::span<const double>> g;
  std::vector<std::span<double>> m;
  std::vector<std::span<double>> u;
  params.for_each_array([&](const std::string&, std::span<double> v, const auto&) { theta.push_back(v); });
  grads.for_each_array([&](const std::string&, std::span<const double> v, const auto&) { g.push_back(v); });
  state.m.for_each_array([&](const std::string&, std::span<double> v, const auto&) { m.push_back(v); });
  state.u.for_each_array([&](const std::string&, std::span<double> v, const auto&) { u.push_back(v); });
  if (g.size() != theta.size() || m.size() != theta.size() || u.size() != theta.size()) {
    throw ShapeError("adamax: parameter structure mismatch");
  }
  for (std::size_t a = 0; a < theta.size(); ++a) adamax_update(theta[a], g[a], m[a], u[a], state.config, alpha);
}

enum class DecayUnit { per_epoch, per_step };

struct LrSchedule {
  double initial = 0.007;
  double decay_rate = 0.95;
  DecayUnit decay_unit = DecayUnit::per_epoch;

  void validate() const {
    if (!(initial > 0.0)) throw UsageError("initial learning rate must be positive");
    if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw UsageError("decay_rate must be in (0, 1]");
  }
};

[[nodiscard]] inline double lr_at(const LrSchedule& s, std::uint64_t k) {
  return s.initial * std::pow(s.decay_rate, static_cast<double>(k));
}

}  // namespace amplinet
