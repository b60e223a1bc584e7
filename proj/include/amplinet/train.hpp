#pragma once

// Stratified split, the training loop (focal loss + Adamax, exponential lr
// decay) and evaluation over a manifest.

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "amplinet/errors.hpp"
#include "amplinet/metrics.hpp"
#include "amplinet/model.hpp"
#include "amplinet/objective.hpp"
#include "amplinet/optim.hpp"
#include "amplinet/preprocess.hpp"
#include "amplinet/signal_io.hpp"

namespace amplinet {

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double test_fraction = 0.2;
  bool shuffle_each_epoch = true;
  PreprocessConfig preprocess;
  FocalLossConfig loss;
  LrSchedule schedule;
  AdamaxConfig optimizer;
  ASoftmaxAxis asoftmax_axis = ASoftmaxAxis::time;
  std::string checkpoint_path;  // best-by-test-F1 model; empty disables
  std::size_t threads = 1;

  void validate() const {
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("test_fraction must be in (0, 1)");
    if (threads < 1) throw UsageError("threads must be >= 1");
    preprocess.validate();
    loss.validate();
    schedule.validate();
    optimizer.validate();
  }
};

// ---------------------------------------------------------------------------
// Deterministic parallel-for: work is split into fixed contiguous chunks and
// every result lands in its own slot, so callers reduce in index order.

inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) body(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------
// Split

struct SplitPlan {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::array<std::size_t, kNumClasses> train_counts{};
  std::array<std::size_t, kNumClasses> test_counts{};
};

/// Per class: shuffle ids with the seed, send round(n_c * fraction) to test,
/// keeping at least one on each side whenever the class has two or more members.
[[nodiscard]] inline SplitPlan stratified_split(const DatasetManifest& manifest, double test_fraction,
                                                std::uint64_t seed) {
  if (manifest.entries.empty()) throw UsageError("stratified_split: empty manifest");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("test_fraction must be in (0, 1)");
  std::array<std::vector<std::string>, kNumClasses> by_class;
  for (const auto& e : manifest.entries) by_class[class_index(e.label)].push_back(e.id);

  std::mt19937_64 rng(seed);
  SplitPlan plan;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto ids = by_class[c];
    if (ids.empty()) continue;
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t n = ids.size();
    auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
    if (n >= 2) n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
    plan.test_ids.insert(plan.test_ids.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
    plan.train_ids.insert(plan.train_ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
    plan.test_counts[c] = n_test;
    plan.train_counts[c] = n - n_test;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Data

struct LabeledInput {
  ModelInput input;
  std::size_t label = 0;
};

/// Reads and preprocesses the manifest entries whose ids are listed, in list order.
[[nodiscard]] inline std::vector<LabeledInput> load_inputs(const DatasetManifest& manifest,
                                                           const std::vector<std::string>& ids,
                                                           const PreprocessConfig& cfg) {
  std::map<std::string, const ManifestEntry*> index;
  for (const auto& e : manifest.entries) index[e.id] = &e;
  std::vector<LabeledInput> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = index.find(id);
    if (it == index.end()) throw DataError("id not in manifest: " + id);
    EcgRecord rec = read_record(manifest.resolve(*it->second));
    rec.id = id;
    rec.label = it->second->label;
    out.push_back({make_input(rec, cfg), class_index(rec.label)});
  }
  return out;
}

[[nodiscard]] inline std::vector<std::string> all_ids(const DatasetManifest& m) {
  std::vector<std::string> ids;
  for (const auto& e : m.entries) ids.push_back(e.id);
  return ids;
}

// ---------------------------------------------------------------------------
// Evaluation

[[nodiscard]] inline RowMatrix<double> predict_all(const ModelParams& params, const std::vector<LabeledInput>& data,
                                                   std::size_t threads = 1) {
  RowMatrix<double> probs(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(kNumClasses));
  parallel_for(data.size(), threads, [&](std::size_t i) {
    probs.row(static_cast<Eigen::Index>(i)) = forward(data[i].input.data, params).probs.transpose();
  });
  return probs;
}

[[nodiscard]] inline EvalReport evaluate(const ModelParams& params, const std::vector<LabeledInput>& data,
                                         std::size_t threads = 1) {
  if (data.empty()) throw UsageError("evaluate: empty subset");
  std::vector<std::size_t> labels;
  for (const auto& d : data) labels.push_back(d.label);
  return make_report(labels, predict_all(params, data, threads));
}

[[nodiscard]] inline EvalReport evaluate(const ModelParams& params, const DatasetManifest& manifest,
                                         const std::vector<std::string>& ids, const TrainConfig& cfg) {
  return evaluate(params, load_inputs(manifest, ids, cfg.preprocess), cfg.threads);
}

// ---------------------------------------------------------------------------
// Training

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_acc = 0.0;
  double test_macro_f1 = 0.0;
  double test_micro_auc = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> history;
  SplitPlan split;
  std::size_t best_epoch = 0;
};

/// `epoch<TAB>lr<TAB>train_loss<TAB>test_acc<TAB>test_macro_f1<TAB>test_micro_auc`, one line per epoch.
[[nodiscard]] inline std::string history_tsv(const std::vector<EpochStats>& history) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (const auto& h : history) {
    os << h.epoch << '\t' << h.lr << '\t' << h.train_loss << '\t' << h.test_acc << '\t' << h.test_macro_f1 << '\t'
       << h.test_micro_auc << '\n';
  }
  return os.str();
}

inline void accumulate(ParamGradients& into, const ParamGradients& add) {
  std::vector<std::span<double>> dst;
  into.for_each_array([&](const std::string&, std::span<double> v, const auto&) { dst.push_back(v); });
  std::size_t a = 0;
  add.for_each_array([&](const std::string&, std::span<const double> v, const auto&) {
    for (std::size_t i = 0; i < v.size(); ++i) dst[a][i] += v[i];
    ++a;
  });
}

struct BatchResult {
  double loss_sum = 0.0;
  ParamGradients grads;
};

/// Summed focal loss and gradient of the batch mean, reduced in item order.
[[nodiscard]] inline BatchResult batch_gradient(const ModelParams& params, const std::vector<LabeledInput>& data,
                                                std::span<const std::size_t> items, const FocalLossConfig& loss,
                                                std::size_t threads) {
  const double scale = 1.0 / static_cast<double>(items.size());
  std::vector<double> losses(items.size());
  std::vector<ParamGradients> grads(items.size());
  parallel_for(items.size(), threads, [&](std::size_t k) {
    const auto& sample = data[items[k]];
    auto fwd = forward(sample.input.data, params, true);
    const auto target = smooth_labels(one_hot(sample.label, kNumClasses), loss.label_smoothing);
    auto l = focal_loss(fwd.probs, target, loss.gamma);
    losses[k] = l.loss;
    if (!std::isfinite(l.loss)) return;
    grads[k] = backward(*fwd.trace, params, l.grad_logits * scale);
  });
  BatchResult r{0.0, NetworkWeights::zeros()};
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (!std::isfinite(losses[k])) {
      r.loss_sum = std::numeric_limits<double>::quiet_NaN();
      return r;
    }
    r.loss_sum += losses[k];
    accumulate(r.grads, grads[k]);
  }
  return r;
}

using EpochCallback = std::function<void(const EpochStats&)>;

[[nodiscard]] inline TrainResult train(const std::vector<LabeledInput>& train_set,
                                       const std::vector<LabeledInput>& test_set, const TrainConfig& cfg,
                                       const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw UsageError("train: empty training split");
  TrainResult result;
  result.params = init_params(cfg.seed, cfg.asoftmax_axis);
  auto state = make_adamax_state(result.params.weights, cfg.optimizer);
  std::mt19937_64 shuffle_rng(cfg.seed + 0x5eed);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best_f1 = -1.0;
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle_each_epoch) std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double epoch_lr = lr_at(cfg.schedule, epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> items(order.data() + start, end - start);
      auto br = batch_gradient(result.params, train_set, items, cfg.loss, cfg.threads);
      if (!std::isfinite(br.loss_sum)) {
        throw NumericError("non-finite loss in epoch " + std::to_string(epoch) + " batch " + std::to_string(batch));
      }
      loss_sum += br.loss_sum;
      const double lr = cfg.schedule.decay_unit == DecayUnit::per_epoch ? epoch_lr : lr_at(cfg.schedule, step);
      adamax_step(result.params.weights, br.grads, state, lr);
      ++step;
    }

    EpochStats st;
    st.epoch = epoch;
    st.lr = epoch_lr;
    st.train_loss = loss_sum / static_cast<double>(train_set.size());
    if (!test_set.empty()) {
      const auto rep = evaluate(result.params, test_set, cfg.threads);
      st.test_acc = rep.accuracy;
      st.test_macro_f1 = rep.macro_f1;
      st.test_micro_auc = rep.micro_auc;
    } else {
      st.test_acc = st.test_macro_f1 = st.test_micro_auc = std::numeric_limits<double>::quiet_NaN();
    }
    if (!test_set.empty() && st.test_macro_f1 > best_f1) {
      best_f1 = st.test_macro_f1;
      result.best_epoch = epoch;
      if (!cfg.checkpoint_path.empty()) save_model(result.params, cfg.checkpoint_path);
    }
    result.history.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return result;
}

/// Full pipeline from a manifest: split, preprocess, train.
[[nodiscard]] inline TrainResult train(const DatasetManifest& manifest, const TrainConfig& cfg,
                                       const EpochCallback& on_epoch = {}) {
  cfg.validate();
  auto plan = stratified_split(manifest, cfg.test_fraction, cfg.seed);
  const auto train_set = load_inputs(manifest, plan.train_ids, cfg.preprocess);
  const auto test_set = load_inputs(manifest, plan.test_ids, cfg.preprocess);
  auto result = train(train_set, test_set, cfg, on_epoch);
  result.split = std::move(plan);
  return result;
}

}  // namespace amplinet
