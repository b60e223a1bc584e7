// Acceptance suite: one PASS/FAIL line per primary criterion. Tolerances and
// time budgets are fixed here; the process exits non-zero if any line fails.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "cli.hpp"
#include "test_util.hpp"

namespace {

using namespace amplinet;
using amplinet::testing::dot;
using amplinet::testing::numeric_gradient;
using amplinet::testing::random_nonzero_tensor;
using amplinet::testing::random_tensor;
using amplinet::testing::relative_error;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool in_time = secs <= budget_s;
  const bool pass = o.pass && in_time;
  if (!pass) ++failures;
  std::printf("%s  %-22s %s [%.2fs / budget %.0fs%s]\n", pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs,
              budget_s, in_time ? "" : ", over budget");
  std::fflush(stdout);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

int run_cli(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "amplinet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = cli::run(int(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (code != 0) std::cerr << e.str();
  return code;
}

// ---------------------------------------------------------------------------

Outcome parameter_count() {
  std::string out;
  if (run_cli({"summary"}, &out) != 0) return {false, "summary failed"};
  const bool printed = out.find("trainable_params\t278025\n") != std::string::npos;
  const std::size_t n = count_params(init_params(1));
  return {printed && n == 278'025, "summary prints " + std::string(printed ? "278025" : "(missing)") +
                                       ", count_params = " + std::to_string(n)};
}

Outcome shape_contract() {
  const auto tr = *forward(Tensor3(12, 1500, 1), init_params(1), true).trace;
  const bool ok = tr.blocks[1].input.dims() == Dims3{12, 1500, 64} && tr.blocks[2].input.dims() == Dims3{12, 1500, 128} &&
                  tr.blocks[3].input.dims() == Dims3{12, 750, 128} && tr.output.dims() == Dims3{12, 750, 128} &&
                  tr.tap_a.values.rows() == 12 && tr.tap_a.values.cols() == 256 && tr.tap_b.values.rows() == 12 &&
                  tr.tap_b.values.cols() == 256 && tr.flat.size() == 6144 && tr.logits.size() == 9;
  std::string shapes;
  for (const auto& [name, shape] : tr.stage_shapes()) shapes += (shapes.empty() ? "" : "; ") + shape;
  return {ok, shapes};
}

Outcome gradient_suite() {
  std::mt19937_64 rng(2024);
  double worst_conv = 0, worst_ln = 0, worst_as = 0, worst_dense = 0, worst_focal = 0;
  const int n = 20;
  for (int i = 0; i < n; ++i) {
    {
      const std::size_t s = 1 + rng() % 2;
      std::size_t k = 1 + rng() % 7;
      if (s == 1 && k % 2 == 0) ++k;
      auto x = random_tensor({1 + rng() % 3, 2 + rng() % 10, 1 + rng() % 3}, rng);
      layers::ConvParams<double> p(k, x.channels(), 1 + rng() % 3, s);
      amplinet::testing::fill_uniform(p.kernel, rng);
      amplinet::testing::fill_uniform(p.bias, rng);
      const auto probe = random_tensor(layers::conv_lead_shared_forward(x, p).dims(), rng);
      auto f = [&] { return dot(layers::conv_lead_shared_forward(x, p).values(), probe.values()); };
      const auto g = layers::conv_lead_shared_backward(x, p, probe);
      worst_conv = std::max({worst_conv, relative_error(g.grad_x.values(), numeric_gradient(x.values(), f)),
                             relative_error(g.grad_kernel, numeric_gradient(p.kernel, f)),
                             relative_error(g.grad_bias, numeric_gradient(p.bias, f))});
    }
    {
      auto x = random_tensor({1 + rng() % 3, 1 + rng() % 5, 2 + rng() % 5}, rng, -2, 2);
      layers::LayerNormParams<double> p(x.channels());
      amplinet::testing::fill_uniform(p.gain, rng, 0.5, 1.5);
      amplinet::testing::fill_uniform(p.bias, rng);
      const auto probe = random_tensor(x.dims(), rng);
      auto f = [&] { return dot(layers::layernorm_forward(x, p).values(), probe.values()); };
      const auto g = layers::layernorm_backward(x, p, probe);
      worst_ln = std::max({worst_ln, relative_error(g.grad_x.values(), numeric_gradient(x.values(), f)),
                           relative_error(g.grad_gain, numeric_gradient(p.gain, f)),
                           relative_error(g.grad_bias, numeric_gradient(p.bias, f))});
    }
    {
      const auto axis = i % 2 ? layers::ASoftmaxAxis::channel : layers::ASoftmaxAxis::time;
      auto x = random_nonzero_tensor({1 + rng() % 3, 1 + rng() % 8, 1 + rng() % 4}, rng);
      const auto probe = random_tensor(x.dims(), rng);
      auto f = [&] { return dot(layers::asoftmax_forward(x, axis).y.values(), probe.values()); };
      worst_as = std::max(worst_as, relative_error(layers::asoftmax_backward(x, axis, probe).values(),
                                                   numeric_gradient(x.values(), f)));
    }
    {
      const std::size_t in = 1 + rng() % 16;
      layers::DenseParams<double> p(in, 9);
      auto wspan = std::span<double>(p.weights.data(), std::size_t(p.weights.size()));
      auto bspan = std::span<double>(p.bias.data(), 9);
      amplinet::testing::fill_uniform(wspan, rng);
      amplinet::testing::fill_uniform(bspan, rng);
      Vector<double> v(in);
      auto vspan = std::span<double>(v.data(), in);
      amplinet::testing::fill_uniform(vspan, rng);
      Vector<double> probe(9);
      amplinet::testing::fill_uniform(std::span<double>(probe.data(), 9), rng);
      auto f = [&] { return layers::dense_softmax_forward(v, p).dot(probe); };
      const auto g = layers::dense_backward(v, p, layers::softmax_backward(layers::dense_softmax_forward(v, p), probe));
      worst_dense = std::max(
          {worst_dense,
           relative_error(std::span<const double>(g.grad_v.data(), in), numeric_gradient(vspan, f)),
           relative_error(std::span<const double>(g.grad_weights.data(), wspan.size()), numeric_gradient(wspan, f)),
           relative_error(std::span<const double>(g.grad_bias.data(), 9), numeric_gradient(bspan, f))});
    }
    {
      Vector<double> z(9);
      amplinet::testing::fill_uniform(std::span<double>(z.data(), 9), rng, -3, 3);
      const auto target = smooth_labels(one_hot(rng() % 9, 9), 0.3);
      auto f = [&] { return focal_loss(layers::softmax(z), target, 2.0).loss; };
      const auto g = focal_loss(layers::softmax(z), target, 2.0).grad_logits;
      worst_focal = std::max(worst_focal, relative_error(std::span<const double>(g.data(), 9),
                                                         numeric_gradient(std::span<double>(z.data(), 9), f)));
    }
  }

  // Composed check on 12x60x1; samples whose perturbation moves a pooling argmax are redrawn.
  auto params = init_params(3);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto& blk : params.weights.blocks) {
    for (auto& v : blk.norm.bias) v = 0.1 * nd(rng);
    for (auto& v : blk.norm.gain) v = 1.0 + 0.1 * nd(rng);
    for (auto& v : blk.conv.bias) v = 0.1 * nd(rng);
  }
  Tensor3 x(12, 60, 1);
  for (auto& v : x.values()) v = nd(rng);
  const auto target = smooth_labels(one_hot(2, 9), 0.3);
  const auto fwd = forward(x, params, true);
  const auto grads = backward(*fwd.trace, params, focal_loss(fwd.probs, target, 2.0).grad_logits);
  std::vector<std::span<double>> P;
  std::vector<std::span<const double>> G;
  params.weights.for_each_array([&](const std::string&, std::span<double> v, const auto&) { P.push_back(v); });
  grads.for_each_array([&](const std::string&, std::span<const double> v, const auto&) { G.push_back(v); });
  auto eval = [&](bool* same_taps) {
    const auto r = forward(x, params, true);
    *same_taps = *same_taps && r.trace->tap_a.argtime == fwd.trace->tap_a.argtime &&
                 r.trace->tap_b.argtime == fwd.trace->tap_b.argtime;
    return focal_loss(r.probs, target, 2.0).loss;
  };
  std::vector<double> an, nu;
  std::size_t skipped = 0;
  for (std::size_t draw = 0; an.size() < 20 && draw < 400; ++draw) {
    const std::size_t a = draw < P.size() ? draw : rng() % P.size();
    const std::size_t i = rng() % P[a].size();
    const double keep = P[a][i];
    bool same = true;
    P[a][i] = keep + 1e-5;
    const double up = eval(&same);
    P[a][i] = keep - 1e-5;
    const double down = eval(&same);
    P[a][i] = keep;
    if (!same) {
      ++skipped;
      continue;
    }
    an.push_back(G[a][i]);
    nu.push_back((up - down) / 2e-5);
  }
  const double composed = an.size() == 20 ? relative_error(an, nu) : 1.0;

  const double layer_worst = std::max({worst_conv, worst_ln, worst_as, worst_dense, worst_focal});
  return {layer_worst <= 1e-5 && composed <= 1e-4,
          "20 instances each; max rel err conv " + fmt(worst_conv) + ", layernorm " + fmt(worst_ln) + ", asoftmax " +
              fmt(worst_as) + ", dense " + fmt(worst_dense) + ", focal " + fmt(worst_focal) +
              " (tol 1e-5); whole model 20 params " + fmt(composed) + " (tol 1e-4, " + std::to_string(skipped) +
              " kink draws redrawn)"};
}

Outcome asoftmax_properties() {
  std::mt19937_64 rng(7);
  double worst_sum = 0.0, worst_odd = 0.0;
  std::size_t monotone_violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 40;
    const double sc = std::uniform_real_distribution<double>(0.1, 20.0)(rng);
    auto x = random_tensor({1, n, 1}, rng, -sc, sc);
    Tensor3 neg = x;
    for (auto& v : neg.values()) v = -v;
    const auto r = layers::asoftmax_forward(x, layers::ASoftmaxAxis::time);
    const auto rn = layers::asoftmax_forward(neg, layers::ASoftmaxAxis::time);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += r.weights(0, i, 0);
      worst_odd = std::max(worst_odd, std::abs(rn.y(0, i, 0) + r.y(0, i, 0)));
      for (std::size_t j = 0; j < n; ++j)
        if (std::abs(x(0, i, 0)) > std::abs(x(0, j, 0)) && !(r.weights(0, i, 0) > r.weights(0, j, 0)))
          ++monotone_violations;
    }
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
  }
  return {worst_sum <= 1e-9 && worst_odd <= 1e-12 && monotone_violations == 0,
          "1000 vectors; max |sum w - 1| " + fmt(worst_sum) + " (tol 1e-9), max |A(-x)+A(x)| " + fmt(worst_odd) +
              " (tol 1e-12), monotonicity violations " + std::to_string(monotone_violations)};
}

struct Flat {
  std::vector<double> v;
  template <class F>
  void for_each_array(F&& f) {
    f(std::string("v"), std::span<double>(v), std::vector<std::size_t>{v.size()});
  }
  template <class F>
  void for_each_array(F&& f) const {
    f(std::string("v"), std::span<const double>(v), std::vector<std::size_t>{v.size()});
  }
};

Outcome optimizer_fidelity() {
  Flat theta{{0.0}};
  auto st = make_adamax_state(theta);
  adamax_step(theta, Flat{{4.0}}, st, 0.007);
  const double want = -0.007 * 0.4 / (4.0 + 1e-7);
  const double err = std::max({std::abs(st.m.v[0] - 0.4), std::abs(st.u.v[0] - 4.0), std::abs(theta.v[0] - want)});

  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 1.0);
  Flat big{std::vector<double>(64, 0.0)};
  auto s2 = make_adamax_state(big);
  std::size_t violations = 0;
  for (int step = 0; step < 1000; ++step) {
    Flat g{std::vector<double>(64)};
    for (auto& x : g.v) x = (step % 100 == 0 ? 50.0 : 1.0) * nd(rng);
    const auto prev = s2.u.v;
    adamax_step(big, g, s2, 0.007);
    for (std::size_t i = 0; i < 64; ++i) violations += s2.u.v[i] < 0.999 * prev[i];
  }
  return {err <= 1e-12 && violations == 0, "m=0.4 u=4 dtheta=" + fmt(theta.v[0]) + " max err " + fmt(err) +
                                               " (tol 1e-12); u_t >= b2*u_(t-1) violations " +
                                               std::to_string(violations) + " over 64000 updates"};
}

Outcome loss_fidelity() {
  std::mt19937_64 rng(9);
  double worst_ce = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Vector<double> z(9);
    amplinet::testing::fill_uniform(std::span<double>(z.data(), 9), rng, -6, 6);
    const auto p = layers::softmax(z);
    const std::size_t c = rng() % 9;
    worst_ce = std::max(worst_ce, std::abs(focal_loss(p, smooth_labels(one_hot(c, 9), 0.0), 0.0).loss -
                                           -std::log(p(Eigen::Index(c)))));
  }
  Vector<double> p = Vector<double>::Constant(9, 0.75 / 8.0);
  p(0) = 0.25;
  const double focal = focal_loss(p, one_hot(0, 9), 2.0).loss;
  return {worst_ce <= 1e-12 && std::abs(focal - 0.7798) <= 1e-4,
          "gamma=0 vs cross-entropy max diff " + fmt(worst_ce) + " (tol 1e-12); gamma=2 p=0.25 -> " + fmt(focal) +
              " (want 0.7798 +- 1e-4)"};
}

Outcome metrics_oracle() {
  std::mt19937_64 rng(13);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 50;
    RowMatrix<double> probs(Eigen::Index(n), 9);
    for (Eigen::Index i = 0; i < probs.size(); ++i) probs.data()[i] = double(rng() % (trial % 2 ? 5 : 1000));
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng() % 9;
    const auto r = make_report(labels, probs);

    std::size_t correct = 0;
    for (std::size_t c = 0; c < 9; ++c) {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t pred = 0;
        for (std::size_t k = 1; k < 9; ++k)
          if (probs(Eigen::Index(i), Eigen::Index(k)) > probs(Eigen::Index(i), Eigen::Index(pred))) pred = k;
        tp += pred == c && labels[i] == c;
        fp += pred == c && labels[i] != c;
        fn += pred != c && labels[i] == c;
      }
      const double pr = tp + fp ? double(tp) / double(tp + fp) : 0.0;
      const double rc = tp + fn ? double(tp) / double(tp + fn) : 0.0;
      const double f1 = pr + rc > 0 ? 2 * pr * rc / (pr + rc) : 0.0;
      mismatches += r.per_class[c].precision != pr || r.per_class[c].recall != rc || r.per_class[c].f1 != f1;
      correct += tp;
    }
    mismatches += r.accuracy != double(correct) / double(n);

    double num = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t a = 0; a < 9; ++a) {
        if (labels[i] != a) continue;
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t b = 0; b < 9; ++b) {
            if (labels[j] == b) continue;
            const double sp = probs(Eigen::Index(i), Eigen::Index(a));
            const double sn = probs(Eigen::Index(j), Eigen::Index(b));
            pairs += 1.0;
            num += sp > sn ? 1.0 : (sp == sn ? 0.5 : 0.0);
          }
      }
    mismatches += r.micro_auc != num / pairs;

    // micro-P and micro-R from the confusion matrix against accuracy.
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t c = 0; c < 9; ++c)
      for (std::size_t o = 0; o < 9; ++o) {
        if (c == o) tp += r.confusion[c][c];
        else {
          fp += r.confusion[o][c];
          fn += r.confusion[c][o];
        }
      }
    mismatches += double(tp) / double(tp + fp) != r.accuracy || double(tp) / double(tp + fn) != r.accuracy;
  }
  return {mismatches == 0, "100 random sets (n<=50); mismatches vs recount / pairwise AUC / micro identity: " +
                               std::to_string(mismatches)};
}

// The learning and determinism criteria share one pipeline run through the CLI.
struct PipelineRun {
  std::filesystem::path dir;
  std::vector<std::string> train_args(const std::string& tag) const {
    return {"train", "--manifest", (dir / "data/manifest.tsv").string(), "--out", (dir / (tag + ".ane")).string(),
            "--history", (dir / (tag + ".tsv")).string(), "--seed", "1", "--epochs", "12", "--batch-size", "8",
            "--lr", "0.001", "--target-len", "500", "--asoftmax-axis", "time", "--threads", "1", "--quiet"};
  }
};

Outcome learning_capability(const PipelineRun& run) {
  if (run_cli({"gen-synthetic", "--out", (run.dir / "data").string(), "--per-class", "10", "--seed", "1"}) != 0)
    return {false, "gen-synthetic failed"};
  if (run_cli(run.train_args("a")) != 0) return {false, "train failed"};

  const auto manifest = load_manifest(run.dir / "data/manifest.tsv");
  const auto params = load_model(run.dir / "a.ane");
  const auto plan = stratified_split(manifest, 0.2, 1);
  TrainConfig cfg;
  cfg.preprocess.target_len = 500;
  const double train_acc = evaluate(params, manifest, plan.train_ids, cfg).accuracy;
  const auto test = evaluate(params, manifest, plan.test_ids, cfg);

  std::ifstream h(run.dir / "a.tsv");
  std::vector<double> losses;
  std::string line;
  while (std::getline(h, line)) {
    std::istringstream ls(line);
    double epoch, lr, loss;
    ls >> epoch >> lr >> loss;
    losses.push_back(loss);
  }
  std::vector<double> diffs;
  for (std::size_t i = 1; i < losses.size(); ++i) diffs.push_back(losses[i] - losses[i - 1]);
  std::nth_element(diffs.begin(), diffs.begin() + diffs.size() / 2, diffs.end());
  const double median_diff = diffs.empty() ? 1.0 : diffs[diffs.size() / 2];

  return {train_acc >= 0.95 && test.accuracy >= 0.60 && median_diff <= 0.0,
          "90 synthetic records (72 train / 18 held out), 12 epochs, lr 0.001, batch 8, 1 thread: train acc " +
              fmt(train_acc) + " (>= 0.95), held-out acc " + fmt(test.accuracy) + " (>= 0.60), held-out macro F1 " +
              fmt(test.macro_f1) + ", micro AUC " + fmt(test.micro_auc) + ", loss " + fmt(losses.front()) + " -> " +
              fmt(losses.back()) + ", median epoch-to-epoch change " + fmt(median_diff) + " (<= 0)"};
}

Outcome determinism(const PipelineRun& run) {
  if (!std::filesystem::exists(run.dir / "a.ane")) return {false, "first run missing"};
  if (run_cli(run.train_args("b")) != 0) return {false, "second train failed"};
  const bool model_same = amplinet::detail::read_file(run.dir / "a.ane") == amplinet::detail::read_file(run.dir / "b.ane");
  const bool hist_same = amplinet::detail::read_file(run.dir / "a.tsv") == amplinet::detail::read_file(run.dir / "b.tsv");
  return {model_same && hist_same, std::string("second identical run: model file ") +
                                       (model_same ? "bitwise identical" : "DIFFERS") + ", history " +
                                       (hist_same ? "bitwise identical" : "DIFFERS")};
}

Outcome format_round_trips(const std::filesystem::path& dir) {
  std::mt19937_64 rng(17);
  std::size_t bad_records = 0;
  for (int trial = 0; trial < 20; ++trial) {
    EcgRecord r = generate_synthetic(static_cast<ClassCode>(trial % 9), 100 + trial, 1.0 + trial % 7, 500.0);
    r.id = "rt" + std::to_string(trial);
    r.sex = static_cast<Sex>(trial % 3);
    if (trial % 4 == 0) r.age.reset();
    write_record(r, dir / (r.id + ".ecg"));
    EcgRecord expect = r;
    for (auto& v : expect.samples.data) v = static_cast<float>(v);
    bad_records += !(read_record(dir / (r.id + ".ecg")) == expect);
  }
  std::size_t bad_models = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto p = init_params(seed, seed % 2 ? ASoftmaxAxis::channel : ASoftmaxAxis::time);
    p.weights.for_each_array([&](const std::string&, std::span<double> v, const auto&) {
      amplinet::testing::fill_uniform(v, rng, -3.0, 3.0);
    });
    save_model(p, dir / "m.ane");
    bad_models += !(load_model(dir / "m.ane") == p);
  }
  return {bad_records == 0 && bad_models == 0, "ECG1: 20 records all fields equal after f32 quantization (" +
                                                   std::to_string(bad_records) + " mismatches); ANE1: 3 models bitwise (" +
                                                   std::to_string(bad_models) + " mismatches)"};
}

}  // namespace

int main() {
  const auto dir = amplinet::testing::scratch_dir("acceptance");
  PipelineRun pipeline{dir};

  criterion("parameter-count", 1, parameter_count);
  criterion("shape-contract", 1, shape_contract);
  criterion("gradient-suite", 60, gradient_suite);
  criterion("asoftmax-properties", 5, asoftmax_properties);
  criterion("optimizer-fidelity", 1, optimizer_fidelity);
  criterion("loss-fidelity", 1, loss_fidelity);
  criterion("metrics-oracle", 10, metrics_oracle);
  criterion("learning-capability", 900, [&] { return learning_capability(pipeline); });
  criterion("determinism", 900, [&] { return determinism(pipeline); });
  criterion("format-round-trips", 10, [&] { return format_round_trips(dir); });

  std::printf("%s: %d failing criteria\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
