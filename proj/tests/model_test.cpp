#include <gtest/gtest.h>

#include <numeric>

#include "test_util.hpp"

namespace amplinet {
namespace {

Tensor3 random_input(std::size_t time, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor3 x(kNumLeads, time, 1);
  for (auto& v : x.values()) v = n(rng);
  return x;
}

std::size_t conv_block_params(std::size_t k, std::size_t cin, std::size_t cout) { return k * cin * cout + cout + 2 * cout; }

TEST(ParamCount, CanonicalArchitecture) {
  const std::size_t expect = conv_block_params(3, 1, 64) + conv_block_params(3, 64, 128) +
                             conv_block_params(3, 128, 128) + conv_block_params(9, 128, 128) + 6144 * 9 + 9;
  EXPECT_EQ(expect, 278'025u);
  EXPECT_EQ(count_params(init_params(1)), 278'025u);
  EXPECT_EQ(count_params(ModelParams{}), kCanonicalParamCount);
  EXPECT_EQ(ModelParams{}.weights.classifier.param_count(), 55'305u);
  const auto& b1 = ModelParams{}.weights.blocks[0];
  EXPECT_EQ(b1.conv.param_count() + b1.norm.param_count(), 384u);
}

TEST(Init, DeterministicGlorotBounds) {
  const auto a = init_params(7);
  EXPECT_EQ(a, init_params(7));
  EXPECT_NE(a.weights, init_params(8).weights);
  const double bound = std::sqrt(6.0 / (3.0 + 192.0));
  double extreme = 0.0;
  for (double w : a.weights.blocks[0].conv.kernel) extreme = std::max(extreme, std::abs(w));
  EXPECT_LE(extreme, bound);
  EXPECT_GT(extreme, 0.5 * bound);
  for (const auto& blk : a.weights.blocks) {
    for (double g : blk.norm.gain) EXPECT_EQ(g, 1.0);
    for (double b : blk.norm.bias) EXPECT_EQ(b, 0.0);
    for (double b : blk.conv.bias) EXPECT_EQ(b, 0.0);
  }
  EXPECT_TRUE((a.weights.classifier.bias.array() == 0.0).all());
}

TEST(Forward, StageShapesFollowArchitecture) {
  const auto r = forward(random_input(1500, 1), init_params(1), true);
  ASSERT_TRUE(r.trace);
  const auto& tr = *r.trace;
  EXPECT_EQ(tr.blocks[1].input.dims(), (Dims3{12, 1500, 64}));
  EXPECT_EQ(tr.blocks[2].input.dims(), (Dims3{12, 1500, 128}));
  EXPECT_EQ(tr.blocks[3].input.dims(), (Dims3{12, 750, 128}));
  EXPECT_EQ(tr.output.dims(), (Dims3{12, 750, 128}));
  EXPECT_EQ(tr.tap_a.values.rows(), 12);
  EXPECT_EQ(tr.tap_a.values.cols(), 256);
  EXPECT_EQ(tr.tap_b.values.cols(), 256);
  EXPECT_EQ(tr.features.cols(), 512);
  EXPECT_EQ(tr.flat.size(), 6144);
  EXPECT_EQ(r.probs.size(), 9);
}

TEST(Forward, FlattenIsLeadMajor) {
  const auto r = forward(random_input(40, 2), init_params(2), true);
  const auto& tr = *r.trace;
  for (Eigen::Index l = 0; l < 12; ++l) {
    for (Eigen::Index j = 0; j < 256; ++j) {
      ASSERT_EQ(tr.flat(l * 512 + j), tr.tap_a.values(l, j));
      ASSERT_EQ(tr.flat(l * 512 + 256 + j), tr.tap_b.values(l, j));
    }
  }
}

TEST(Forward, ProbabilityContractAndDeterminism) {
  for (auto axis : {ASoftmaxAxis::time, ASoftmaxAxis::channel}) {
    const auto params = init_params(3, axis);
    for (std::uint64_t s = 0; s < 3; ++s) {
      const auto x = random_input(100, s);
      const auto p = forward(x, params).probs;
      EXPECT_NEAR(p.sum(), 1.0, 1e-6);
      EXPECT_TRUE((p.array() > 0.0).all() && (p.array() < 1.0).all());
      EXPECT_EQ(p, forward(x, params).probs);
    }
  }
}

TEST(Forward, ZeroInputZeroClassifierIsUniform) {
  auto params = init_params(4);
  params.weights.classifier.weights.setZero();
  const auto p = forward(Tensor3(12, 1500, 1), params).probs;
  for (Eigen::Index i = 0; i < 9; ++i) EXPECT_NEAR(p(i), 1.0 / 9.0, 1e-15);
}

TEST(Forward, RejectsBadInputShape) {
  EXPECT_THROW((void)forward(Tensor3(11, 100, 1), init_params(1)), ShapeError);
  EXPECT_THROW((void)forward(Tensor3(12, 100, 2), init_params(1)), ShapeError);
}

TEST(Forward, LeadPermutationPermutesFeatureRows) {
  const auto params = init_params(5);
  const auto x = random_input(64, 5);
  std::vector<std::size_t> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(5);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor3 xp(x.dims());
  for (std::size_t l = 0; l < 12; ++l)
    for (std::size_t t = 0; t < 64; ++t) xp(l, t, 0) = x(perm[l], t, 0);
  const auto a = forward(x, params, true).trace->features;
  const auto b = forward(xp, params, true).trace->features;
  for (std::size_t l = 0; l < 12; ++l) EXPECT_EQ(b.row(Eigen::Index(l)), a.row(Eigen::Index(perm[l])));
}

TEST(Backward, ZeroUpstreamAndDeterminism) {
  const auto params = init_params(6);
  const auto fwd = forward(random_input(60, 6), params, true);
  const auto zero = backward(*fwd.trace, params, Vector<double>::Zero(9));
  zero.for_each_array([](const std::string& name, std::span<const double> v, const auto&) {
    for (double x : v) ASSERT_EQ(x, 0.0) << name;
  });
  Vector<double> g(9);
  g << 0.1, -0.2, 0.3, 0.0, 0.05, -0.1, 0.2, -0.3, -0.05;
  const auto a = backward(*fwd.trace, params, g);
  EXPECT_EQ(a, backward(*fwd.trace, params, g));
  EXPECT_EQ(a.param_count(), 278'025u);
  EXPECT_THROW((void)backward(ForwardTrace{}, params, g), UsageError);
}

struct TapArgs {
  std::vector<std::uint32_t> a, b;
  bool operator==(const TapArgs&) const = default;
};

TEST(Backward, ComposedFiniteDifferences) {
  auto params = init_params(3);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& blk : params.weights.blocks) {
    for (auto& v : blk.norm.bias) v = 0.1 * n(rng);
    for (auto& v : blk.norm.gain) v = 1.0 + 0.1 * n(rng);
    for (auto& v : blk.conv.bias) v = 0.1 * n(rng);
  }
  const auto x = random_input(60, 9);
  const auto target = smooth_labels(one_hot(2, 9), 0.3);

  auto loss_and_taps = [&](TapArgs* taps) {
    const auto f = forward(x, params, taps != nullptr);
    if (taps) *taps = {f.trace->tap_a.argtime, f.trace->tap_b.argtime};
    return focal_loss(f.probs, target, 2.0).loss;
  };
  const auto fwd = forward(x, params, true);
  const auto grads = backward(*fwd.trace, params, focal_loss(fwd.probs, target, 2.0).grad_logits);
  const TapArgs base{fwd.trace->tap_a.argtime, fwd.trace->tap_b.argtime};

  std::vector<std::span<double>> P;
  std::vector<std::span<const double>> G;
  std::vector<std::string> names;
  params.weights.for_each_array([&](const std::string& nm, std::span<double> v, const auto&) {
    P.push_back(v);
    names.push_back(nm);
  });
  grads.for_each_array([&](const std::string&, std::span<const double> v, const auto&) { G.push_back(v); });

  const double h = 1e-5;
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::size_t skipped = 0;
  for (std::size_t draw = 0; analytic.size() < 20 && draw < 400; ++draw) {
    const std::size_t a = draw < P.size() ? draw : rng() % P.size();  // every array at least once
    const std::size_t i = rng() % P[a].size();
    const double keep = P[a][i];
    TapArgs up_taps, down_taps;
    P[a][i] = keep + h;
    const double up = loss_and_taps(&up_taps);
    P[a][i] = keep - h;
    const double down = loss_and_taps(&down_taps);
    P[a][i] = keep;
    if (!(up_taps == base) || !(down_taps == base)) {
      ++skipped;
      continue;
    }
    analytic.push_back(G[a][i]);
    numeric.push_back((up - down) / (2.0 * h));
  }
  ASSERT_EQ(analytic.size(), 20u) << "too many kinks (" << skipped << " skipped)";
  EXPECT_LE(testing::relative_error(analytic, numeric), 1e-4);
}

TEST(Flops, HandArithmetic) {
  const auto r = count_flops(init_params(1), Dims3{12, 1500, 1});
  auto item = [&](const std::string& name) {
    for (const auto& i : r.items)
      if (i.name == name) return i.flops;
    ADD_FAILURE() << "missing " << name;
    return std::uint64_t{0};
  };
  EXPECT_EQ(item("dense"), 2u * 6144u * 9u + 9u);
  EXPECT_EQ(item("dense"), 110'601u);
  EXPECT_EQ(item("ConvB1.conv"), 2u * 12u * 1500u * 64u * 3u * 1u);
  EXPECT_EQ(item("ConvB3.conv"), 2u * 12u * 750u * 128u * 3u * 128u);
  EXPECT_EQ(item("ConvB4.conv"), 2u * 12u * 750u * 128u * 9u * 128u);
  std::uint64_t sum = 0;
  for (const auto& i : r.items) sum += i.flops;
  EXPECT_EQ(r.total(), sum);
  EXPECT_FALSE(kFlopConvention.empty());
}

TEST(ModelFile, RoundTripIsBitwise) {
  const auto dir = testing::scratch_dir("model");
  auto p = init_params(11, ASoftmaxAxis::channel);
  p.weights.blocks[2].norm.bias[5] = -0.0;
  p.weights.classifier.bias(3) = 1e-300;
  save_model(p, dir / "m.ane");
  const auto q = load_model(dir / "m.ane");
  EXPECT_EQ(q, p);
  EXPECT_EQ(encode_model(q), encode_model(p));
  EXPECT_EQ(q.asoftmax_axis, ASoftmaxAxis::channel);
}

TEST(ModelFile, TruncationAndCorruptionAreErrors) {
  const std::string bytes = encode_model(init_params(1));
  for (std::size_t cut : {0ul, 3ul, 10ul, 100ul, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW((void)decode_model(std::string_view(bytes).substr(0, cut)), DataError) << cut;
  }
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW((void)decode_model(magic), DataError);
  EXPECT_THROW((void)decode_model(bytes + "x"), DataError);
}

TEST(ModelFile, WrongClassifierShapeNamesTheArray) {
  ModelParams p = init_params(1);
  p.weights.classifier = layers::DenseParams<double>(6144, 8);
  try {
    (void)decode_model(encode_model(p));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("shape mismatch: classifier"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace amplinet
