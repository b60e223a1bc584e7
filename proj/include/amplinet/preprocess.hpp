#pragma once

// Record -> model input: decimate, fix the window length, normalize per lead,
// stack leads as rows of a leads x time x 1 tensor. The stage order is fixed.

#include <algorithm>
#include <cmath>
#include <string>

#include "amplinet/errors.hpp"
#include "amplinet/signal_io.hpp"
#include "amplinet/tensor.hpp"

namespace amplinet {

enum class DownsampleMode { stride, block_mean };
enum class Normalization { zscore_per_lead, minmax_per_lead, none };

struct PreprocessConfig {
  std::size_t decimation_factor = 10;
  std::size_t target_len = 1500;
  DownsampleMode downsample_mode = DownsampleMode::stride;
  Normalization normalization = Normalization::zscore_per_lead;
  double zscore_epsilon = 1e-8;

  void validate() const {
    if (decimation_factor < 1) throw UsageError("decimation_factor must be >= 1");
    if (target_len < 1) throw UsageError("target_len must be >= 1");
    if (!(zscore_epsilon > 0.0)) throw UsageError("zscore_epsilon must be positive");
  }
};

struct ModelInput {
  Tensor3 data;  // leads x target_len x 1
  std::string source_id;
};

[[nodiscard]] inline SignalMatrix downsample(const SignalMatrix& in, std::size_t factor, DownsampleMode mode) {
  if (factor < 1) throw UsageError("downsample factor must be >= 1");
  const std::size_t n = in.n_samples;
  const std::size_t out_n = (n + factor - 1) / factor;
  SignalMatrix out(in.n_leads, out_n);
  for (std::size_t l = 0; l < in.n_leads; ++l) {
    for (std::size_t j = 0; j < out_n; ++j) {
      if (mode == DownsampleMode::stride) {
        out(l, j) = in(l, j * factor);
      } else {
        const std::size_t lo = j * factor;
        const std::size_t hi = std::min(n, lo + factor);
        double sum = 0.0;
        for (std::size_t i = lo; i < hi; ++i) sum += in(l, i);
        out(l, j) = sum / static_cast<double>(hi - lo);
      }
    }
  }
  return out;
}

/// Keeps the first `target_len` samples of every lead, zero-padding short signals.
[[nodiscard]] inline SignalMatrix fix_length(const SignalMatrix& in, std::size_t target_len) {
  SignalMatrix out(in.n_leads, target_len, 0.0);
  const std::size_t keep = std::min(in.n_samples, target_len);
  for (std::size_t l = 0; l < in.n_leads; ++l) {
    std::copy_n(in.lead(l).begin(), keep, out.lead(l).begin());
  }
  return out;
}

[[nodiscard]] inline SignalMatrix normalize(const SignalMatrix& in, const PreprocessConfig& cfg) {
  SignalMatrix out = in;
  if (cfg.normalization == Normalization::none || in.n_samples == 0) return out;
  const double eps = cfg.zscore_epsilon;
  const auto n = static_cast<double>(in.n_samples);
  for (std::size_t l = 0; l < in.n_leads; ++l) {
    auto src = in.lead(l);
    auto dst = out.lead(l);
    if (cfg.normalization == Normalization::zscore_per_lead) {
      double mean = 0.0;
      for (double v : src) mean += v;
      mean /= n;
      double var = 0.0;
      for (double v : src) var += (v - mean) * (v - mean);
      const double sd = std::sqrt(var / n);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (src[i] - mean) / (sd + eps);
    } else {
      const auto [lo, hi] = std::minmax_element(src.begin(), src.end());
      const double low = *lo;
      const double range = *hi - *lo;
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (src[i] - low) / (range + eps);
    }
  }
  return out;
}

/// downsample -> fix_length -> normalize, then lead l becomes row l of the tensor.
[[nodiscard]] inline ModelInput make_input(const EcgRecord& record, const PreprocessConfig& cfg,
                                           std::size_t expected_leads = kNumLeads) {
  cfg.validate();
  if (record.n_leads() != expected_leads) {
    throw DataError("record " + record.id + ": expected " + std::to_string(expected_leads) + " leads, got " +
                    std::to_string(record.n_leads()));
  }
  const SignalMatrix m =
      normalize(fix_length(downsample(record.samples, cfg.decimation_factor, cfg.downsample_mode), cfg.target_len), cfg);

  ModelInput input{Tensor3(m.n_leads, m.n_samples, 1), record.id};
  std::copy(m.data.begin(), m.data.end(), input.data.values().begin());
  if (!input.data.all_finite()) throw NumericError("record " + record.id + ": non-finite value after preprocessing");
  return input;
}

}  // namespace amplinet
