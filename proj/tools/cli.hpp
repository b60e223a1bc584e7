#pragma once

// Command-line front end. `run` is kept separate from main() so tests can
// drive every subcommand in-process.
//
// Exit codes: 0 success, 1 usage error, 2 data/parse error, 3 numeric failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "amplinet/amplinet.hpp"

namespace amplinet::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

namespace detail {

inline const std::map<std::string, DownsampleMode> kDownsampleModes = {{"stride", DownsampleMode::stride},
                                                                       {"block_mean", DownsampleMode::block_mean}};
inline const std::map<std::string, Normalization> kNormalizations = {{"zscore_per_lead", Normalization::zscore_per_lead},
                                                                     {"minmax_per_lead", Normalization::minmax_per_lead},
                                                                     {"none", Normalization::none}};
inline const std::map<std::string, ASoftmaxAxis> kAxes = {{"time", ASoftmaxAxis::time},
                                                          {"channel", ASoftmaxAxis::channel}};
inline const std::map<std::string, DecayUnit> kDecayUnits = {{"per_epoch", DecayUnit::per_epoch},
                                                             {"per_step", DecayUnit::per_step}};

template <class T>
std::vector<std::string> keys(const std::map<std::string, T>& m) {
  std::vector<std::string> k;
  for (const auto& [name, _] : m) k.push_back(name);
  return k;
}

struct PreprocessFlags {
  std::size_t decimation = 10;
  std::size_t target_len = 1500;
  std::string downsample_mode = "stride";
  std::string normalization = "zscore_per_lead";

  void add_to(CLI::App* app) {
    app->add_option("--decimation", decimation, "Downsampling factor")->check(CLI::PositiveNumber);
    app->add_option("--target-len", target_len, "Samples per lead after windowing")->check(CLI::PositiveNumber);
    app->add_option("--downsample-mode", downsample_mode, "stride | block_mean")
        ->check(CLI::IsMember(keys(kDownsampleModes)));
    app->add_option("--normalization", normalization, "zscore_per_lead | minmax_per_lead | none")
        ->check(CLI::IsMember(keys(kNormalizations)));
  }

  [[nodiscard]] PreprocessConfig config() const {
    PreprocessConfig c;
    c.decimation_factor = decimation;
    c.target_len = target_len;
    c.downsample_mode = kDownsampleModes.at(downsample_mode);
    c.normalization = kNormalizations.at(normalization);
    return c;
  }
};

inline std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

inline int gen_synthetic(const std::filesystem::path& out_dir, std::size_t per_class, std::uint64_t seed,
                         double duration, double rate, std::ostream& out) {
  std::filesystem::create_directories(out_dir / "records");
  DatasetManifest manifest;
  manifest.root = out_dir;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto code = static_cast<ClassCode>(c);
    for (std::size_t i = 0; i < per_class; ++i) {
      std::ostringstream id;
      id << class_name(code) << '_' << std::setw(4) << std::setfill('0') << i;
      EcgRecord rec = generate_synthetic(code, seed * 1'000'000 + i, duration, rate);
      rec.id = id.str();
      const std::string rel = "records/" + rec.id + ".ecg";
      write_record(rec, out_dir / rel);
      manifest.entries.push_back({rec.id, rel, code});
    }
  }
  write_manifest(manifest, out_dir / "manifest.tsv");
  out << "wrote " << manifest.entries.size() << " records and " << (out_dir / "manifest.tsv").string() << '\n';
  return kOk;
}

inline void print_summary(const ModelParams& params, std::size_t target_len, std::ostream& out) {
  const auto fwd = forward(Tensor3(kNumLeads, target_len, 1), params, true);
  out << "layer\toutput_shape\n";
  for (const auto& [name, shape] : fwd.trace->stage_shapes()) out << name << '\t' << shape << '\n';
  out << "\narray\tshape\tparams\n";
  params.weights.for_each_array([&](const std::string& name, std::span<const double> v, const std::vector<std::size_t>& dims) {
    out << name << '\t';
    for (std::size_t i = 0; i < dims.size(); ++i) out << (i ? "x" : "") << dims[i];
    out << '\t' << v.size() << '\n';
  });
  out << "\ntrainable_params\t" << count_params(params) << '\n';
  const auto flops = count_flops(params, Dims3{kNumLeads, target_len, 1});
  out << "\nflops_item\tflops\n";
  for (const auto& item : flops.items) out << item.name << '\t' << item.flops << '\n';
  out << "total_flops\t" << flops.total() << '\n';
  out << "flop_convention\t" << kFlopConvention << '\n';
  out << "asoftmax_axis\t" << (params.asoftmax_axis == ASoftmaxAxis::time ? "time" : "channel") << '\n';
}

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"12-lead ECG classifier with aSoftmax activations and lead-shared kernels", "amplinet"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for every subcommand");

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic 9-class dataset and manifest");
  std::string gen_out;
  std::size_t per_class = 10;
  std::uint64_t gen_seed = 1;
  double duration = 10.0;
  double sample_rate = 500.0;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--per-class", per_class, "Records per class")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--duration", duration, "Seconds per record")->check(CLI::PositiveNumber);
  gen->add_option("--sample-rate", sample_rate, "Sampling rate in Hz")->check(CLI::PositiveNumber);

  // train
  auto* tr = app.add_subcommand("train", "Train on a manifest (stratified split) and write the model");
  TrainConfig tc;
  std::string manifest_path;
  std::string model_out;
  std::string history_path;
  std::string axis = "time";
  std::string decay_unit = "per_epoch";
  bool no_shuffle = false;
  bool quiet = false;
  detail::PreprocessFlags train_pre;
  tr->add_option("--manifest", manifest_path, "Dataset manifest (TSV)")->required();
  tr->add_option("--out", model_out, "Output model file (.ane)")->required();
  tr->add_option("--history", history_path, "History TSV path (default: <out>.history.tsv)");
  tr->add_option("--checkpoint", tc.checkpoint_path, "Best-by-test-F1 model path (empty: disabled)");
  tr->add_option("--seed", tc.seed, "Seed for init, split and shuffling");
  tr->add_option("--epochs", tc.epochs, "Training epochs")->check(CLI::PositiveNumber);
  tr->add_option("--batch-size", tc.batch_size, "Mini-batch size")->check(CLI::PositiveNumber);
  tr->add_option("--test-fraction", tc.test_fraction, "Held-out fraction per class")->check(CLI::Range(0.0, 1.0));
  tr->add_flag("--no-shuffle", no_shuffle, "Keep the training order fixed across epochs");
  train_pre.add_to(tr);
  tr->add_option("--gamma", tc.loss.gamma, "Focal loss focusing parameter")->check(CLI::NonNegativeNumber);
  tr->add_option("--label-smoothing", tc.loss.label_smoothing, "Uniform label smoothing coefficient")
      ->check(CLI::Range(0.0, 1.0));
  tr->add_option("--lr", tc.schedule.initial, "Initial learning rate")->check(CLI::PositiveNumber);
  tr->add_option("--lr-decay", tc.schedule.decay_rate, "Exponential decay rate")->check(CLI::Range(0.0, 1.0));
  tr->add_option("--lr-decay-unit", decay_unit, "per_epoch | per_step")->check(CLI::IsMember(detail::keys(detail::kDecayUnits)));
  tr->add_option("--beta1", tc.optimizer.beta1, "Adamax first-moment decay")->check(CLI::Range(0.0, 1.0));
  tr->add_option("--beta2", tc.optimizer.beta2, "Adamax infinity-norm decay")->check(CLI::Range(0.0, 1.0));
  tr->add_option("--epsilon", tc.optimizer.epsilon, "Adamax epsilon")->check(CLI::PositiveNumber);
  tr->add_flag("--bias-correction", tc.optimizer.bias_correction, "Scale lr by 1/(1 - beta1^t)");
  tr->add_option("--asoftmax-axis", axis, "time | channel")->check(CLI::IsMember(detail::keys(detail::kAxes)));
  tr->add_option("--threads", tc.threads, "Worker threads (results are identical for any value)")
      ->check(CLI::PositiveNumber);
  tr->add_flag("--quiet", quiet, "Suppress per-epoch lines");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a model on a manifest");
  std::string eval_model;
  std::string eval_manifest;
  std::string subset = "all";
  std::uint64_t eval_seed = 1;
  double eval_fraction = 0.2;
  std::size_t eval_threads = 1;
  detail::PreprocessFlags eval_pre;
  ev->add_option("--model", eval_model, "Model file")->required();
  ev->add_option("--manifest", eval_manifest, "Dataset manifest")->required();
  ev->add_option("--subset", subset, "all | train | test (split recomputed from --seed/--test-fraction)")
      ->check(CLI::IsMember({"all", "train", "test"}));
  ev->add_option("--seed", eval_seed, "Split seed (for --subset train/test)");
  ev->add_option("--test-fraction", eval_fraction, "Split fraction (for --subset train/test)")->check(CLI::Range(0.0, 1.0));
  ev->add_option("--threads", eval_threads, "Worker threads")->check(CLI::PositiveNumber);
  eval_pre.add_to(ev);

  // predict
  auto* pr = app.add_subcommand("predict", "Print class probabilities for one record");
  std::string pred_model;
  std::string pred_record;
  detail::PreprocessFlags pred_pre;
  pr->add_option("--model", pred_model, "Model file")->required();
  pr->add_option("--record", pred_record, "ECG1 record file")->required();
  pred_pre.add_to(pr);

  // saliency
  auto* sa = app.add_subcommand(
      "saliency", "Export first-block aSoftmax amplification weights (mean over channels) as CSV");
  std::string sal_model;
  std::string sal_record;
  std::string sal_out;
  detail::PreprocessFlags sal_pre;
  sa->add_option("--model", sal_model, "Model file")->required();
  sa->add_option("--record", sal_record, "ECG1 record file")->required();
  sa->add_option("--out", sal_out, "Output CSV path")->required();
  sal_pre.add_to(sa);

  // summary
  auto* su = app.add_subcommand("summary", "Print layer shapes, parameter count and FLOP estimate");
  std::string sum_model;
  std::uint64_t sum_seed = 1;
  std::size_t sum_len = kCanonicalInputLen;
  su->add_option("--model", sum_model, "Model file (default: fresh initialization)");
  su->add_option("--seed", sum_seed, "Seed for the fresh initialization");
  su->add_option("--target-len", sum_len, "Input length used for shapes and FLOPs")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    // Subcommand --help surfaces as CallForHelp from the subcommand's parse.
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      for (auto* sub : app.get_subcommands()) out << sub->help();
      return kOk;
    }
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (gen->parsed()) return detail::gen_synthetic(gen_out, per_class, gen_seed, duration, sample_rate, out);

    if (tr->parsed()) {
      tc.shuffle_each_epoch = !no_shuffle;
      tc.preprocess = train_pre.config();
      tc.asoftmax_axis = detail::kAxes.at(axis);
      tc.schedule.decay_unit = detail::kDecayUnits.at(decay_unit);
      const auto manifest = load_manifest(manifest_path);
      if (!quiet) out << "epoch\tlr\ttrain_loss\ttest_acc\ttest_macro_f1\ttest_micro_auc\n";
      auto result = train(manifest, tc, [&](const EpochStats& s) {
        if (!quiet) out << history_tsv({s}) << std::flush;
      });
      save_model(result.params, model_out);
      const std::string hist = history_path.empty() ? model_out + ".history.tsv" : history_path;
      amplinet::detail::write_file(hist, history_tsv(result.history));
      out << "model\t" << model_out << "\nhistory\t" << hist << '\n';
      if (!result.split.test_ids.empty()) {
        out << "final test report\n" << evaluate(result.params, manifest, result.split.test_ids, tc).to_text();
      }
      return kOk;
    }

    if (ev->parsed()) {
      const auto params = load_model(eval_model);
      const auto manifest = load_manifest(eval_manifest);
      std::vector<std::string> ids = all_ids(manifest);
      if (subset != "all") {
        const auto plan = stratified_split(manifest, eval_fraction, eval_seed);
        ids = subset == "train" ? plan.train_ids : plan.test_ids;
      }
      TrainConfig cfg;
      cfg.preprocess = eval_pre.config();
      cfg.threads = eval_threads;
      out << evaluate(params, manifest, ids, cfg).to_text();
      return kOk;
    }

    if (pr->parsed()) {
      const auto params = load_model(pred_model);
      const auto input = make_input(read_record(pred_record), pred_pre.config());
      const auto probs = forward(input.data, params).probs;
      if (!probs.allFinite()) throw NumericError("non-finite probabilities");
      out << std::setprecision(9);
      for (std::size_t c = 0; c < kNumClasses; ++c) out << kClassNames[c] << '\t' << probs(Eigen::Index(c)) << '\n';
      out << "predicted\t" << kClassNames[argmax(probs)] << '\n';
      return kOk;
    }

    if (sa->parsed()) {
      const auto params = load_model(sal_model);
      const auto input = make_input(read_record(sal_record), sal_pre.config());
      const auto fwd = forward(input.data, params, true);
      const Tensor3& w = fwd.trace->blocks[0].amplification;
      std::ostringstream csv;
      csv << "lead,time,mean_weight\n" << std::setprecision(9);
      for (std::size_t l = 0; l < w.leads(); ++l) {
        for (std::size_t t = 0; t < w.time(); ++t) {
          double mean = 0.0;
          for (std::size_t c = 0; c < w.channels(); ++c) mean += w(l, t, c);
          csv << l << ',' << t << ',' << mean / static_cast<double>(w.channels()) << '\n';
        }
      }
      amplinet::detail::write_file(sal_out, csv.str());
      out << "wrote " << sal_out << '\n';
      return kOk;
    }

    if (su->parsed()) {
      const ModelParams params = sum_model.empty() ? init_params(sum_seed) : load_model(sum_model);
      detail::print_summary(params, sum_len, out);
      return kOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace amplinet::cli
