#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "alff/alff_branch.hpp"
#include "alff/conv.hpp"
#include "alff/gradcheck.hpp"
#include "alff/lstm.hpp"

namespace alff {
namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

RowMatrix<double> constant(int rows, int cols, double v) { return RowMatrix<double>::Constant(rows, cols, v); }

LstmWeights<double> filled(int in, int hd, double weight, double bias) {
  LstmWeights<double> w(in, hd);
  for (auto* t : {&w.input_weights, &w.hidden_weights}) std::fill(t->data.begin(), t->data.end(), weight);
  for (auto* t : {&w.input_bias, &w.hidden_bias}) std::fill(t->data.begin(), t->data.end(), bias);
  return w;
}

TEST(LstmCell, ZeroWeightsGiveHalfGatesAndZeroState) {
  const LstmWeights<double> w = filled(3, 2, 0.0, 0.0);
  LstmCache<double> cache;
  const auto s = lstm_cell_forward(constant(3, 4, 0.7), LstmState<double>::zeros(2, 4), w, &cache);
  EXPECT_TRUE((cache.i.array() == 0.5).all());
  EXPECT_TRUE((cache.f.array() == 0.5).all());
  EXPECT_TRUE((cache.o.array() == 0.5).all());
  EXPECT_TRUE((cache.g.array() == 0.0).all());
  EXPECT_TRUE((s.c.array() == 0.0).all());
  EXPECT_TRUE((s.h.array() == 0.0).all());
}

TEST(LstmCell, SaturatedForgetGateKeepsCell) {
  LstmWeights<double> w = filled(1, 1, 0.0, 0.0);
  w.input_bias_of(Gate::kForget).setConstant(20.0);
  const LstmState<double> s0{constant(1, 1, 0.3), constant(1, 1, -0.8)};
  const auto s1 = lstm_cell_forward(constant(1, 1, 2.0), s0, w);
  EXPECT_NEAR(s1.c(0, 0), -0.8, 1e-8);
}

TEST(LstmCell, ScalarHandEvaluation) {
  const LstmWeights<double> w = filled(1, 1, 1.0, 0.0);
  const auto s = lstm_cell_forward(constant(1, 1, 1.0), LstmState<double>::zeros(1, 1), w);
  // i = f = o = sigmoid(1), g = tanh(1), c = i * g, h = o * tanh(c)
  const double gate = sigmoid(1.0);
  const double c = gate * std::tanh(1.0);
  EXPECT_NEAR(s.c(0, 0), c, 1e-15);
  EXPECT_NEAR(s.h(0, 0), gate * std::tanh(c), 1e-15);
  EXPECT_NEAR(s.c(0, 0), 0.5568, 1e-4);
  EXPECT_NEAR(s.h(0, 0), 0.3696, 1e-4);
}

TEST(LstmCell, GateAccessorsAddressStackedBlocks) {
  LstmWeights<double> w(2, 3);
  w.input_weight(Gate::kOutput).setConstant(4.0);
  for (int r = 0; r < 12; ++r) {
    for (int c = 0; c < 2; ++c) EXPECT_EQ(as_matrix(w.input_weights)(r, c), r >= 9 ? 4.0 : 0.0);
  }
}

TEST(LstmCell, InitSetsForgetBiasToOne) {
  LstmWeights<double> w(8, 4);
  SplitMix rng(1);
  w.init(rng);
  EXPECT_TRUE((w.input_bias_of(Gate::kForget).array() == 1.0).all());
  const double k = 1.0 / std::sqrt(8.0);
  for (double v : w.input_weights.data) EXPECT_LE(std::abs(v), k);
}

TEST(LstmCell, HiddenStaysInsideUnitInterval) {
  SplitMix rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    LstmWeights<double> w(4, 3);
    w.init(rng);
    for (double& v : w.input_weights.data) v *= 20.0;
    RowMatrix<double> x(4, 6);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-50, 50);
    LstmState<double> s = LstmState<double>::zeros(3, 6);
    for (int t = 0; t < 3; ++t) s = lstm_cell_forward(x, s, w);
    EXPECT_LE(s.h.cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(LstmCell, SequenceEqualsChainedCells) {
  SplitMix rng(4);
  LstmWeights<double> w(5, 3);
  w.init(rng);
  std::vector<RowMatrix<double>> xs;
  for (int t = 0; t < 3; ++t) xs.push_back(RowMatrix<double>::Random(5, 7));
  const LstmState<double> s0{RowMatrix<double>::Random(3, 7), RowMatrix<double>::Random(3, 7)};
  const auto seq = lstm_forward_sequence(xs, s0, w);
  ASSERT_EQ(seq.size(), 3u);
  const auto a = lstm_cell_forward(xs[0], s0, w);
  const auto b = lstm_cell_forward(xs[1], a, w);
  const auto c = lstm_cell_forward(xs[2], b, w);
  EXPECT_TRUE(seq[0].h == a.h && seq[0].c == a.c);
  EXPECT_TRUE(seq[1].h == b.h && seq[1].c == b.c);
  EXPECT_TRUE(seq[2].h == c.h && seq[2].c == c.c);
}

TEST(LstmCell, ColumnPermutationCommutes) {
  SplitMix rng(6);
  LstmWeights<double> w(4, 3);
  w.init(rng);
  const RowMatrix<double> x = RowMatrix<double>::Random(4, 9);
  const LstmState<double> s0{RowMatrix<double>::Random(3, 9), RowMatrix<double>::Random(3, 9)};
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[1], perm[5]);
  auto permute = [&](const RowMatrix<double>& m) {
    RowMatrix<double> out(m.rows(), m.cols());
    for (int j = 0; j < 9; ++j) out.col(j) = m.col(perm[static_cast<std::size_t>(j)]);
    return out;
  };
  const auto s = lstm_cell_forward(x, s0, w);
  const auto sp = lstm_cell_forward(permute(x), LstmState<double>{permute(s0.h), permute(s0.c)}, w);
  EXPECT_LT((sp.h - permute(s.h)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((sp.c - permute(s.c)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(LstmCell, DimensionMismatchThrows) {
  const LstmWeights<double> w(3, 2);
  EXPECT_THROW(lstm_cell_forward(constant(4, 1, 0.0), LstmState<double>::zeros(2, 1), w), std::invalid_argument);
  EXPECT_THROW(lstm_cell_forward(constant(3, 2, 0.0), LstmState<double>::zeros(2, 1), w), std::invalid_argument);
}

TEST(LstmCell, ZeroUpstreamGradientGivesZeroGradients) {
  SplitMix rng(2);
  LstmWeights<double> w(3, 2);
  w.init(rng);
  LstmCache<double> cache;
  lstm_cell_forward(RowMatrix<double>(RowMatrix<double>::Random(3, 4)), LstmState<double>::zeros(2, 4), w, &cache);
  LstmWeights<double> g = w;
  zero_params<double>(g);
  const auto d = lstm_cell_backward(constant(2, 4, 0.0), constant(2, 4, 0.0), cache, w, g);
  EXPECT_EQ(d.x.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(d.state.h.cwiseAbs().maxCoeff(), 0.0);
  g.visit("", [](const std::string&, ParamTensor<double>& t) {
    for (double v : t.data) EXPECT_EQ(v, 0.0);
  });
}

TEST(LstmCell, ForeignCacheRejected) {
  SplitMix rng(2);
  LstmWeights<double> w(3, 2);
  w.init(rng);
  LstmCache<double> cache;
  lstm_cell_forward(RowMatrix<double>(RowMatrix<double>::Random(3, 4)), LstmState<double>::zeros(2, 4), w, &cache);
  LstmWeights<double> other = w;
  other.hidden_weights.data[0] += 0.5;
  LstmWeights<double> g = w;
  EXPECT_THROW(lstm_cell_backward(constant(2, 4, 1.0), constant(2, 4, 0.0), cache, other, g), std::invalid_argument);
}

TEST(LstmCell, ScalarGradientMatchesFiniteDifference) {
  // x = 1, all weights 1, biases 0, zero state; loss = h.
  LstmWeights<double> w = filled(1, 1, 1.0, 0.0);
  const RowMatrix<double> x = constant(1, 1, 1.0);
  const auto s0 = LstmState<double>::zeros(1, 1);
  LstmCache<double> cache;
  lstm_cell_forward(x, s0, w, &cache);
  LstmWeights<double> g = w;
  zero_params<double>(g);
  lstm_cell_backward(constant(1, 1, 1.0), constant(1, 1, 0.0), cache, w, g);
  const double h = 1e-5;
  auto params = collect_params<double>(w);
  auto grads = collect_params<double>(g);
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k].second->data.size(); ++i) {
      double& v = params[k].second->data[i];
      const double saved = v;
      v = saved + h;
      const double plus = lstm_cell_forward(x, s0, w).h(0, 0);
      v = saved - h;
      const double minus = lstm_cell_forward(x, s0, w).h(0, 0);
      v = saved;
      const double numeric = (plus - minus) / (2 * h);
      const double analytic = grads[k].second->data[i];
      EXPECT_LE(std::abs(numeric - analytic), 1e-4 * std::max({std::abs(numeric), std::abs(analytic), 1e-6}))
          << params[k].first << "[" << i << "]";
    }
  }
}

TEST(LstmCell, GradientSweepOverSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    GradcheckOptions opts;
    opts.seed = seed;
    const GradUnitResult r = run_gradcheck_unit("lstm_cell", opts);
    ASSERT_TRUE(r.passed()) << "seed " << seed << " worst " << r.worst_rel_error << " at " << r.worst_at;
  }
}

TEST(ConvBlock, IdentityKernelWithoutNormIsSilu) {
  ConvBlockParams<double> p(ConvShape{1, 1, 3, 1, 1, false, true});
  p.weight.data[4] = 1.0;
  Tensor3<double> x(1, 4, 5);
  SplitMix rng(1);
  for (double& v : x.values()) v = rng.uniform(-4, 4);
  const Tensor3<double> y = conv_block_forward(p, x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i] * sigmoid(x[i]), 1e-15);
}

TEST(ConvBlock, ZeroParamsGiveZeroOutput) {
  ConvBlockParams<double> p(ConvShape{2, 3, 3, 1, 1, true, true});
  std::fill(p.gamma.data.begin(), p.gamma.data.end(), 0.0);
  Tensor3<double> x(2, 5, 5);
  for (double& v : x.values()) v = 1.5;
  const Tensor3<double> normed = conv_block_forward(p, x);
  for (double v : normed.values()) EXPECT_EQ(v, 0.0);
  ConvBlockParams<double> plain(ConvShape{2, 3, 3, 1, 1, false, true});
  const Tensor3<double> raw = conv_block_forward(plain, x);
  for (double v : raw.values()) EXPECT_EQ(v, 0.0);
}

TEST(ConvBlock, OnesKernelCountsPaddedNeighbours) {
  ConvBlockParams<double> p(ConvShape{1, 1, 3, 1, 1, false, false});
  std::fill(p.weight.data.begin(), p.weight.data.end(), 1.0);
  Tensor3<double> x(1, 3, 3);
  for (double& v : x.values()) v = 1.0;
  const Tensor3<double> y = conv_block_forward(p, x);
  EXPECT_EQ(y.at(0, 1, 1), 9.0);
  EXPECT_EQ(y.at(0, 0, 0), 4.0);
  EXPECT_EQ(y.at(0, 2, 2), 4.0);
  EXPECT_EQ(y.at(0, 0, 1), 6.0);
}

TEST(ConvBlock, MatchesDirectConvolution) {
  SplitMix rng(12);
  for (int stride : {1, 2}) {
    ConvBlockParams<double> p(ConvShape{3, 4, 3, stride, 1, false, false});
    p.init(rng);
    Tensor3<double> x(3, 7, 6);
    for (double& v : x.values()) v = rng.uniform(-1, 1);
    const Tensor3<double> y = conv_block_forward(p, x);
    ASSERT_EQ(y.height(), (7 + 2 - 3) / stride + 1);
    for (int o = 0; o < 4; ++o) {
      for (int oy = 0; oy < y.height(); ++oy) {
        for (int ox = 0; ox < y.width(); ++ox) {
          double acc = p.bias.data[static_cast<std::size_t>(o)];
          for (int c = 0; c < 3; ++c) {
            for (int ky = 0; ky < 3; ++ky) {
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * stride - 1 + ky, ix = ox * stride - 1 + kx;
                if (iy < 0 || ix < 0 || iy >= 7 || ix >= 6) continue;
                acc += p.weight.data[static_cast<std::size_t>(((o * 3 + c) * 3 + ky) * 3 + kx)] * x.at(c, iy, ix);
              }
            }
          }
          EXPECT_NEAR(y.at(o, oy, ox), acc, 1e-12);
        }
      }
    }
  }
}

TEST(ConvBlock, NormalizedChannelsHaveUnitStatistics) {
  SplitMix rng(3);
  ConvBlockParams<double> p(ConvShape{2, 3, 3, 1, 1, true, false});
  p.init(rng);
  Tensor3<double> x(2, 8, 8);
  for (double& v : x.values()) v = rng.uniform(-2, 2);
  const Tensor3<double> y = conv_block_forward(p, x);
  for (int c = 0; c < 3; ++c) {
    const auto ch = y.channel(c);
    double mean = 0, var = 0;
    for (double v : ch) mean += v;
    mean /= static_cast<double>(ch.size());
    for (double v : ch) var += (v - mean) * (v - mean);
    var /= static_cast<double>(ch.size());
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-3);  // epsilon keeps it slightly below 1
  }
}

TEST(ConvBlock, PreservesSpatialSizeAndRejectsChannelMismatch) {
  ConvBlockParams<double> p(ConvShape{2, 4, 3, 1, 1, true, true});
  EXPECT_EQ(conv_block_forward(p, Tensor3<double>(2, 3, 5)).width(), 5);
  EXPECT_THROW(conv_block_forward(p, Tensor3<double>(3, 5, 5)), std::invalid_argument);
}

TEST(ConvBlock, GradientMatchesFiniteDifference) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GradcheckOptions opts;
    opts.seed = seed;
    const GradUnitResult r = run_gradcheck_unit("conv_block", opts);
    EXPECT_TRUE(r.passed()) << "seed " << seed << " worst " << r.worst_rel_error << " at " << r.worst_at;
  }
}

TEST(Alff, ShapeContract) {
  AlffParams<float> p(AlffShape{});
  SplitMix rng(1);
  p.init(rng);
  Tensor3<float> x(64, 80, 80);
  for (float& v : x.values()) v = static_cast<float>(rng.uniform(-1, 1));
  const Tensor3<float> y = alff_forward(p, x);
  EXPECT_EQ(y.channels(), 1);
  EXPECT_EQ(y.height(), 640);
  EXPECT_EQ(y.width(), 640);
  for (float v : y.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Alff, ZeroParametersGiveOneHalf) {
  AlffParams<double> p(AlffShape{4, 3, 8});
  p.visit("", [](const std::string&, ParamTensor<double>& t) { t.zero(); });
  Tensor3<double> x(4, 3, 2);
  for (double& v : x.values()) v = 0.37;
  const Tensor3<double> y = alff_forward(p, x);
  EXPECT_EQ(y.height(), 24);
  EXPECT_EQ(y.width(), 16);
  for (double v : y.values()) EXPECT_EQ(v, 0.5);
}

TEST(Alff, UpsampleIsNearestAndAdjointIsBlockSum) {
  Tensor3<double> g(1, 2, 3);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(i);
  const Tensor3<double> up = upsample_nearest(g, 4);
  EXPECT_EQ(up.at(0, 7, 11), g.at(0, 1, 2));
  EXPECT_EQ(up.at(0, 3, 4), g.at(0, 0, 1));
  // <up(a), b> == <a, adj(b)>
  Tensor3<double> b(1, 8, 12);
  SplitMix rng(1);
  for (double& v : b.values()) v = rng.uniform(-1, 1);
  const Tensor3<double> adj = upsample_nearest_adjoint(b, 4);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < up.size(); ++i) lhs += up[i] * b[i];
  for (std::size_t i = 0; i < g.size(); ++i) rhs += g[i] * adj[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Alff, RejectsWrongChannelCount) {
  AlffParams<double> p(AlffShape{4, 3, 8});
  EXPECT_THROW(alff_forward(p, Tensor3<double>(5, 2, 2)), std::invalid_argument);
}

TEST(Alff, EndToEndGradientMatchesFiniteDifference) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    GradcheckOptions opts;
    opts.seed = seed;
    const GradUnitResult r = run_gradcheck_unit("alff", opts);
    EXPECT_TRUE(r.passed()) << "seed " << seed << " worst " << r.worst_rel_error << " at " << r.worst_at;
  }
}

}  // namespace
}  // namespace alff
