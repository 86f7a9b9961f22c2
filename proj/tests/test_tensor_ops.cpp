#include <gtest/gtest.h>

#include <cmath>
#include <bit>
#include <cstring>
#include <map>
#include <numeric>

#include "mugen/core/adam.hpp"
#include "mugen/core/checkpoint.hpp"
#include "mugen/core/ops.hpp"
#include "oracles/oracles.hpp"
#include "test_support.hpp"

using mugen::Shape;
using mugen::Tensor;
using testing_support::gradcheck;
using testing_support::probe;

namespace {

Tensor<double> T2(Shape dims, std::vector<double> v, bool grad = false) {
  return Tensor<double>(std::move(dims), std::move(v), grad);
}

}  // namespace

TEST(TensorTest, RejectsInconsistentStorage) {
  EXPECT_THROW(T2({2, 2}, {1, 2, 3}), mugen::ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{2, 0}), mugen::ShapeError);
}

TEST(TensorTest, FiniteCheckModeNamesOp) {
  mugen::set_finite_checks(true);
  auto x = T2({2}, {1.0, 0.0});
  auto inf = T2({2}, {1e308, 1e308});
  try {
    (void)mugen::mul(mugen::add(x, inf), inf);
    FAIL() << "expected NumericalError";
  } catch (const mugen::NumericalError& e) {
    EXPECT_EQ(e.op(), "mul");
  }
  mugen::set_finite_checks(false);
}

// ---- matmul ---------------------------------------------------------------

TEST(MatmulTest, IdentityLeavesOperand) {
  auto eye = T2({2, 2}, {1, 0, 0, 1});
  auto b = T2({2, 2}, {5, 6, 7, 8});
  auto c = mugen::matmul(eye, b);
  EXPECT_EQ(testing_support::to_vector(c), (std::vector<double>{5, 6, 7, 8}));
}

TEST(MatmulTest, HandComputedProduct) {
  auto c = mugen::matmul(T2({2, 2}, {1, 2, 3, 4}), T2({2, 1}, {1, 1}));
  EXPECT_EQ(c.dims(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(c[0], 3.0);
  EXPECT_DOUBLE_EQ(c[1], 7.0);
}

TEST(MatmulTest, MismatchNamesBothDims) {
  try {
    (void)mugen::matmul(T2({2, 3}, std::vector<double>(6, 1.0)), T2({2, 2}, {1, 2, 3, 4}));
    FAIL();
  } catch (const mugen::ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('3'), std::string::npos);
    EXPECT_NE(msg.find('2'), std::string::npos);
  }
}

TEST(MatmulTest, GradientMatchesFiniteDifferences) {
  auto a = oracle::random_tensor({3, 4}, 1);
  auto b = oracle::random_tensor({4, 2}, 2);
  EXPECT_LT(gradcheck([&] { return mugen::sum(mugen::matmul(a, b)); }, {a, b}), 1e-4);
}

TEST(MatmulTest, BatchedTransposeVariantsMatchGradients) {
  auto a = oracle::random_tensor({2, 3, 4}, 3);
  auto b = oracle::random_tensor({2, 5, 4}, 4);
  EXPECT_LT(gradcheck([&] { return probe(mugen::batched_matmul(a, b, false, true)); }, {a, b}), 1e-4);
  auto c = oracle::random_tensor({2, 4, 3}, 5);
  auto d = oracle::random_tensor({2, 4, 5}, 6);
  EXPECT_LT(gradcheck([&] { return probe(mugen::batched_matmul(c, d, true, false)); }, {c, d}), 1e-4);
}

TEST(LinearTest, GradientMatchesFiniteDifferences) {
  auto x = oracle::random_tensor({2, 3, 4}, 7);
  auto w = oracle::random_tensor({5, 4}, 8);
  auto b = oracle::random_tensor({5}, 9);
  EXPECT_LT(gradcheck([&] { return probe(mugen::linear(x, w, b)); }, {x, w, b}), 1e-4);
}

// ---- conv2d ---------------------------------------------------------------

TEST(Conv2dTest, SinglePixelIdentity) {
  auto y = mugen::conv2d(T2({1, 1, 1, 1}, {2.5}), T2({1, 1, 1, 1}, {1.0}), T2({1}, {0.0}));
  EXPECT_DOUBLE_EQ(y.item(), 2.5);
}

TEST(Conv2dTest, AllOnesWindowSumsToFour) {
  auto y = mugen::conv2d(T2({1, 1, 2, 2}, {1, 1, 1, 1}), T2({1, 1, 2, 2}, {1, 1, 1, 1}));
  EXPECT_EQ(y.dims(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.item(), 4.0);
}

TEST(Conv2dTest, NoKernelFlip) {
  // Cross-correlation: kernel [1, 0] over row [a, b] picks a.
  auto y = mugen::conv2d(T2({1, 1, 1, 2}, {3, 7}), T2({1, 1, 1, 2}, {1, 0}));
  EXPECT_DOUBLE_EQ(y.item(), 3.0);
}

TEST(Conv2dTest, NonIntegralExtentIsShapeError) {
  auto x = oracle::random_tensor({1, 1, 4, 4}, 1, false);
  auto w = oracle::random_tensor({1, 1, 3, 3}, 2, false);
  EXPECT_THROW(mugen::conv2d(x, w, {}, {2, 1, false}), mugen::ShapeError);
  auto y = mugen::conv2d(x, w, {}, {2, 1, true});
  EXPECT_EQ(y.dims(), (Shape{1, 1, 2, 2}));
}

TEST(Conv2dTest, OneByOneIdentityKernelIsIdentity) {
  auto x = oracle::random_tensor({2, 3, 4, 5}, 11, false);
  std::vector<double> w(9, 0.0);
  for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  auto y = mugen::conv2d(x, T2({3, 3, 1, 1}, w));
  EXPECT_EQ(testing_support::to_vector(y), testing_support::to_vector(x));
}

TEST(Conv2dTest, MatchesNaiveOracle) {
  auto x = oracle::random_tensor({1, 2, 5, 5}, 21, false);
  auto w = oracle::random_tensor({3, 2, 3, 3}, 22, false);
  auto b = oracle::random_tensor({3}, 23, false);
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 1}, {2, 1}, {1, 0}, {2, 0}}) {
    auto y = mugen::conv2d(x, w, b, {stride, pad, false});
    Shape od;
    auto ref = oracle::naive_conv2d(testing_support::to_vector(x), x.dims(),
                                    testing_support::to_vector(w), w.dims(),
                                    testing_support::to_vector(b), stride, pad, &od);
    ASSERT_EQ(y.dims(), od);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-5);
  }
}

TEST(Conv2dTest, FloatKernelMatchesOracle) {
  auto xd = oracle::random_values(2 * 2 * 6 * 6, 31);
  auto wd = oracle::random_values(4 * 2 * 3 * 3, 32);
  Tensor<float> x({2, 2, 6, 6}, std::vector<float>(xd.begin(), xd.end()));
  Tensor<float> w({4, 2, 3, 3}, std::vector<float>(wd.begin(), wd.end()));
  auto y = mugen::conv2d(x, w, {}, {1, 1, false});
  auto ref = oracle::naive_conv2d(xd, {2, 2, 6, 6}, wd, {4, 2, 3, 3}, {}, 1, 1);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-5);
}

TEST(Conv2dTest, WeightGradientMatchesFiniteDifferences) {
  auto x = oracle::random_tensor({1, 2, 4, 4}, 41);
  auto w = oracle::random_tensor({3, 2, 3, 3}, 42);
  auto b = oracle::random_tensor({3}, 43);
  EXPECT_LT(gradcheck([&] { return probe(mugen::conv2d(x, w, b, {1, 1, false})); }, {x, w, b}), 1e-4);
  EXPECT_LT(gradcheck([&] { return probe(mugen::conv2d(x, w, b, {2, 1, true})); }, {x, w, b}), 1e-4);
  auto w1 = oracle::random_tensor({3, 2, 1, 1}, 44);
  EXPECT_LT(gradcheck([&] { return probe(mugen::conv2d(x, w1)); }, {x, w1}), 1e-4);
}

// ---- softmax / norms --------------------------------------------------------

TEST(SoftmaxTest, WorkedValues) {
  auto a = mugen::softmax_rows(T2({2}, {0, 0}));
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  auto b = mugen::softmax_rows(T2({2}, {std::log(2.0), 0}));
  EXPECT_NEAR(b[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(b[1], 1.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(mugen::softmax_rows(T2({1}, {42.0})).item(), 1.0);
}

TEST(SoftmaxTest, RowsSumToOneAndShiftInvariant) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto x = oracle::random_tensor({4, 7}, seed, false, -30, 30);
    auto y = mugen::softmax_rows(x);
    auto shifted = mugen::softmax_rows(mugen::add_scalar(x, 13.5));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_GE(y[r * 7 + j], 0.0);
        EXPECT_NEAR(y[r * 7 + j], shifted[r * 7 + j], 1e-12);
        s += y[r * 7 + j];
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(SoftmaxTest, GradientMatchesFiniteDifferences) {
  auto x = oracle::random_tensor({3, 5}, 51, true, -2, 2);
  EXPECT_LT(gradcheck([&] { return probe(mugen::softmax_rows(x)); }, {x}), 1e-4);
}

TEST(LayerNormTest, ConstantRowMapsToZero) {
  auto y = mugen::layer_norm(T2({1, 3}, {4, 4, 4}), T2({3}, {1, 1, 1}), T2({3}, {0, 0, 0}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNormTest, TwoValueRowNormalizesToPlusMinusOne) {
  auto y = mugen::layer_norm(T2({1, 2}, {1, 3}), T2({2}, {1, 1}), T2({2}, {0, 0}), 1e-12);
  EXPECT_NEAR(y[0], -1.0, 1e-9);
  EXPECT_NEAR(y[1], 1.0, 1e-9);
}

TEST(LayerNormTest, GradientMatchesFiniteDifferences) {
  auto x = oracle::random_tensor({3, 6}, 61);
  auto g = oracle::random_tensor({6}, 62);
  auto b = oracle::random_tensor({6}, 63);
  EXPECT_LT(gradcheck([&] { return probe(mugen::layer_norm(x, g, b)); }, {x, g, b}), 1e-4);
}

TEST(BatchNormTest, EvalWithUnitStatsIsIdentity) {
  mugen::RunningStats<double> stats{T2({2}, {0, 0}), T2({2}, {1, 1})};
  auto x = oracle::random_tensor({2, 2, 3, 3}, 71, false);
  auto y = mugen::batch_norm(x, T2({2}, {1, 1}), T2({2}, {0, 0}), stats, false, 0.0);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(BatchNormTest, TrainingNormalizesPlusMinusOne) {
  mugen::RunningStats<double> stats{T2({1}, {0}), T2({1}, {1})};
  auto x = T2({2, 1, 1, 1}, {-1, 1});
  auto y = mugen::batch_norm(x, T2({1}, {1}), T2({1}, {0}), stats, true);
  EXPECT_NEAR(y[0], -1.0, 1e-5);
  EXPECT_NEAR(y[1], 1.0, 1e-5);
  // running stats: momentum 0.1 toward mean 0 and unbiased variance 2
  EXPECT_NEAR(stats.mean[0], 0.0, 1e-12);
  EXPECT_NEAR(stats.var[0], 0.9 * 1 + 0.1 * 2, 1e-12);
}

TEST(BatchNormTest, SingleValuePerChannelInTrainingIsError) {
  mugen::RunningStats<double> stats{T2({2}, {0, 0}), T2({2}, {1, 1})};
  auto x = oracle::random_tensor({1, 2, 1, 1}, 72, false);
  EXPECT_THROW(mugen::batch_norm(x, T2({2}, {1, 1}), T2({2}, {0, 0}), stats, true),
               mugen::ContractError);
  EXPECT_NO_THROW(mugen::batch_norm(x, T2({2}, {1, 1}), T2({2}, {0, 0}), stats, false));
}

TEST(BatchNormTest, GradientMatchesFiniteDifferences) {
  auto x = oracle::random_tensor({3, 2, 2, 2}, 73);
  auto g = oracle::random_tensor({2}, 74, true, 0.5, 1.5);
  auto b = oracle::random_tensor({2}, 75);
  mugen::RunningStats<double> stats{T2({2}, {0.1, -0.2}), T2({2}, {1.5, 0.7})};
  EXPECT_LT(gradcheck([&] { return probe(mugen::batch_norm(x, g, b, stats, true)); }, {x, g, b}), 1e-4);
  EXPECT_LT(gradcheck([&] { return probe(mugen::batch_norm(x, g, b, stats, false)); }, {x, g, b}), 1e-4);
}

// ---- activations ------------------------------------------------------------

TEST(ActivationTest, WorkedValues) {
  EXPECT_DOUBLE_EQ(mugen::sigmoid(T2({1}, {0.0})).item(), 0.5);
  auto r = mugen::relu(T2({2}, {-3, 3}));
  EXPECT_DOUBLE_EQ(r[0], 0.0);
  EXPECT_DOUBLE_EQ(r[1], 3.0);
  EXPECT_NEAR(mugen::gelu(T2({1}, {1.0})).item(), 0.8413447460685429, 1e-12);
}

TEST(ActivationTest, SigmoidStrictlyInsideUnitInterval) {
  auto x = oracle::random_tensor({200}, 81, false, -15, 15);
  for (double v : mugen::sigmoid(x).values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(ActivationTest, GradientsMatchFiniteDifferences) {
  auto x = oracle::random_tensor({10}, 82, true, -3, 3);
  EXPECT_LT(gradcheck([&] { return probe(mugen::sigmoid(x)); }, {x}), 1e-4);
  EXPECT_LT(gradcheck([&] { return probe(mugen::gelu(x)); }, {x}), 1e-4);
  EXPECT_LT(gradcheck([&] { return probe(mugen::relu(x)); }, {x}), 1e-4);
}

// ---- pooling / resampling -----------------------------------------------------

TEST(GlobalMaxPoolTest, WorkedValuesAndTieBreak) {
  EXPECT_DOUBLE_EQ(mugen::global_max_pool(T2({1, 1, 1, 1}, {-2})).item(), -2.0);
  EXPECT_DOUBLE_EQ(mugen::global_max_pool(T2({1, 1, 2, 2}, {1, 2, 3, 0})).item(), 3.0);
  auto x = T2({1, 1, 2, 2}, {5, 5, 5, 5}, true);
  auto y = mugen::global_max_pool(x);
  EXPECT_DOUBLE_EQ(y.item(), 5.0);
  mugen::backward(mugen::sum(y));
  EXPECT_EQ(testing_support::to_vector(x.detach()), (std::vector<double>{5, 5, 5, 5}));
  std::vector<double> g(x.grad().begin(), x.grad().end());
  EXPECT_EQ(g, (std::vector<double>{1, 0, 0, 0}));
}

TEST(GlobalPoolTest, GradientsMatchFiniteDifferences) {
  auto x = oracle::random_tensor({2, 3, 3, 2}, 91);
  EXPECT_LT(gradcheck([&] { return probe(mugen::global_max_pool(x)); }, {x}), 1e-4);
  EXPECT_LT(gradcheck([&] { return probe(mugen::global_avg_pool(x)); }, {x}), 1e-4);
  EXPECT_LT(gradcheck([&] { return probe(mugen::max_pool2d(x, 3, {2, 1, true})); }, {x}), 1e-4);
}

TEST(UpsampleTest, NearestBlockReplicates) {
  auto y = mugen::upsample2x(T2({1, 1, 2, 2}, {1, 2, 3, 4}), mugen::UpsampleMode::nearest);
  EXPECT_EQ(y.dims(), (Shape{1, 1, 4, 4}));
  EXPECT_EQ(testing_support::to_vector(y),
            (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(UpsampleTest, BilinearPreservesConstants) {
  auto y = mugen::upsample2x(Tensor<double>(Shape{1, 2, 3, 5}, 0.7), mugen::UpsampleMode::bilinear);
  for (double v : y.values()) EXPECT_NEAR(v, 0.7, 1e-15);
}

TEST(UpsampleTest, BilinearUsesHalfPixelCentres) {
  // Row [0, 4] -> [0, 1, 3, 4] with half-pixel centres and edge clamping.
  auto y = mugen::upsample2x(T2({1, 1, 1, 2}, {0, 4}), mugen::UpsampleMode::bilinear);
  EXPECT_EQ(testing_support::to_vector(y), (std::vector<double>{0, 1, 3, 4, 0, 1, 3, 4}));
}

TEST(UpsampleTest, NearestThenAveragePoolIsIdentity) {
  auto x = oracle::random_tensor({2, 3, 3, 4}, 101, false);
  auto y = mugen::avg_pool2d(mugen::upsample2x(x, mugen::UpsampleMode::nearest), 2);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y[i], x[i], 1e-15);
}

TEST(UpsampleTest, GradientsMatchFiniteDifferences) {
  auto x = oracle::random_tensor({1, 2, 3, 4}, 102);
  EXPECT_LT(gradcheck([&] { return probe(mugen::upsample2x(x, mugen::UpsampleMode::bilinear)); }, {x}), 1e-4);
  EXPECT_LT(gradcheck([&] { return probe(mugen::upsample2x(x, mugen::UpsampleMode::nearest)); }, {x}), 1e-4);
  auto z = oracle::random_tensor({1, 2, 4, 6}, 103);
  EXPECT_LT(gradcheck([&] { return probe(mugen::avg_pool2d(z, 2)); }, {z}), 1e-4);
}

// ---- shape ops ----------------------------------------------------------------

TEST(ConcatTest, SingleTensorIsItself) {
  auto x = oracle::random_tensor({1, 2, 2, 2}, 111, false);
  auto y = mugen::concat_channels<double>({x});
  EXPECT_EQ(testing_support::to_vector(y), testing_support::to_vector(x));
}

TEST(ConcatTest, PreservesArgumentOrder) {
  auto a = T2({1, 1, 1, 2}, {1, 2});
  auto b = T2({1, 2, 1, 2}, {3, 4, 5, 6});
  auto y = mugen::concat_channels<double>({a, b});
  EXPECT_EQ(y.dims(), (Shape{1, 3, 1, 2}));
  EXPECT_EQ(testing_support::to_vector(y), (std::vector<double>{1, 2, 3, 4, 5, 6}));
}

TEST(ConcatTest, BackwardOfSumIsOnes) {
  auto a = oracle::random_tensor({2, 1, 2, 2}, 112);
  auto b = oracle::random_tensor({2, 3, 2, 2}, 113);
  mugen::backward(mugen::sum(mugen::concat_channels<double>({a, b})));
  for (double g : a.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
  for (double g : b.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(ConcatTest, SpatialMismatchIsShapeError) {
  EXPECT_THROW(mugen::concat_channels<double>({Tensor<double>(Shape{1, 1, 2, 2}),
                                              Tensor<double>(Shape{1, 1, 2, 3})}),
               mugen::ShapeError);
}

TEST(ShapeOpsTest, PermuteAndRepeatGradients) {
  auto x = oracle::random_tensor({2, 3, 4}, 121);
  EXPECT_LT(gradcheck([&] { return probe(mugen::permute(x, {2, 0, 1})); }, {x}), 1e-4);
  auto y = oracle::random_tensor({1, 2, 3}, 122);
  EXPECT_LT(gradcheck([&] { return probe(mugen::repeat_batch(y, 3)); }, {y}), 1e-4);
  auto p = mugen::permute(T2({2, 3}, {1, 2, 3, 4, 5, 6}), {1, 0});
  EXPECT_EQ(testing_support::to_vector(p), (std::vector<double>{1, 4, 2, 5, 3, 6}));
}

TEST(BroadcastTest, ChannelAndSpatialGatesMatchGradients) {
  auto x = oracle::random_tensor({2, 3, 2, 2}, 131);
  auto cg = oracle::random_tensor({2, 3, 1, 1}, 132);
  auto sg = oracle::random_tensor({2, 1, 2, 2}, 133);
  EXPECT_LT(gradcheck([&] { return probe(mugen::mul(x, cg)); }, {x, cg}), 1e-4);
  EXPECT_LT(gradcheck([&] { return probe(mugen::mul(x, sg)); }, {x, sg}), 1e-4);
  EXPECT_LT(gradcheck([&] { return probe(mugen::sub(x, sg)); }, {x, sg}), 1e-4);
  EXPECT_THROW(mugen::add(x, Tensor<double>(Shape{2, 2, 1, 1})), mugen::ShapeError);
}

// ---- backward / tape ------------------------------------------------------------

TEST(BackwardTest, SumGivesOnes) {
  auto x = oracle::random_tensor({3, 2}, 141);
  mugen::backward(mugen::sum(x));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(BackwardTest, SquareSumGivesTwoX) {
  auto x = oracle::random_tensor({5}, 142);
  mugen::backward(mugen::sum(mugen::mul(x, x)));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i]);
}

TEST(BackwardTest, FanOutAccumulates) {
  auto x = oracle::random_tensor({4}, 143);
  mugen::backward(mugen::sum(mugen::add(x, x)));
  std::vector<double> fan(x.grad().begin(), x.grad().end());
  x.zero_grad();
  mugen::backward(mugen::sum(mugen::scale(x, 2.0)));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(fan[i], x.grad()[i]);
}

TEST(BackwardTest, NonScalarLossIsContractError) {
  auto x = oracle::random_tensor({3}, 144);
  EXPECT_THROW(mugen::backward(mugen::scale(x, 2.0)), mugen::ContractError);
}

TEST(TapeTest, TopologicalOrderVisitsEachOpOnce) {
  auto x = oracle::random_tensor({2, 2}, 145);
  auto w = oracle::random_tensor({2, 2}, 146);
  auto h = mugen::matmul(x, w);
  auto loss = mugen::sum(mugen::add(mugen::relu(h), mugen::sigmoid(h)));
  auto tape = mugen::Tape<double>::record(loss);
  std::map<const mugen::Node<double>*, std::size_t> position;
  for (std::size_t i = 0; i < tape.nodes().size(); ++i) {
    EXPECT_TRUE(position.emplace(tape.nodes()[i], i).second) << "node visited twice";
  }
  for (std::size_t i = 0; i < tape.nodes().size(); ++i) {
    for (const auto& in : tape.nodes()[i]->inputs) {
      if (in) EXPECT_LT(position.at(in.get()), i);
    }
  }
  EXPECT_EQ(tape.nodes().back(), loss.node());
  EXPECT_EQ(tape.size(), 7u);  // x, w, matmul, relu, sigmoid, add, sum
}

TEST(TapeTest, FirstNonFiniteOpIsReported) {
  auto x = T2({2}, {1.0, -1.0}, true);
  auto big = T2({2}, {1e308, 1e308});
  auto loss = mugen::sum(mugen::scale(mugen::mul(x, big), 10.0));
  EXPECT_EQ(mugen::Tape<double>::record(loss).first_nonfinite_op(), "scale");
}

// ---- adam ----------------------------------------------------------------------

TEST(AdamTest, ZeroGradientLeavesParametersAndDecaysMoments) {
  auto p = T2({3}, {1, 2, 3}, true);
  std::vector<Tensor<double>> params{p};
  mugen::AdamState<double> state;
  p.grad();  // all-zero gradient
  mugen::adam_step<double>(params, state, {});
  EXPECT_EQ(testing_support::to_vector(p), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(state.m[0], (std::vector<double>{0, 0, 0}));

  p.grad()[0] = 0.4;
  mugen::adam_step<double>(params, state, {});
  const double m0 = state.m[0][0], v0 = state.v[0][0];
  p.zero_grad();
  mugen::adam_step<double>(params, state, {});
  EXPECT_DOUBLE_EQ(state.m[0][0], 0.9 * m0);
  EXPECT_DOUBLE_EQ(state.v[0][0], 0.999 * v0);
  EXPECT_EQ(p[1], 2.0);
}

TEST(AdamTest, FirstStepMovesByLearningRateTimesSign) {
  auto p = T2({2}, {0.0, 0.0}, true);
  p.grad()[0] = 3.7;
  p.grad()[1] = -0.02;
  std::vector<Tensor<double>> params{p};
  mugen::AdamState<double> state;
  mugen::adam_step<double>(params, state, {1e-3, 0.9, 0.999, 1e-8});
  EXPECT_NEAR(p[0], -1e-3, 1e-9);
  EXPECT_NEAR(p[1], 1e-3, 1e-9);
}

TEST(AdamTest, TwoStepsMatchHandRolledOracle) {
  auto p = T2({2}, {0.3, -1.2}, true);
  std::vector<Tensor<double>> params{p};
  mugen::AdamState<double> state;
  const mugen::AdamOptions opt{1e-2, 0.9, 0.999, 1e-8};
  const double g[2][2] = {{0.5, -0.25}, {0.1, 0.4}};
  double ref[2] = {0.3, -1.2}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 2; ++t) {
    p.grad()[0] = g[t - 1][0];
    p.grad()[1] = g[t - 1][1];
    mugen::adam_step<double>(params, state, opt);
    for (int j = 0; j < 2; ++j) {
      m[j] = 0.9 * m[j] + (1.0 - 0.9) * g[t - 1][j];
      v[j] = 0.999 * v[j] + (1.0 - 0.999) * g[t - 1][j] * g[t - 1][j];
      const double mh = m[j] / (1.0 - std::pow(0.9, t));
      const double vh = v[j] / (1.0 - std::pow(0.999, t));
      ref[j] = ref[j] - 1e-2 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  EXPECT_EQ(p[0], ref[0]);
  EXPECT_EQ(p[1], ref[1]);
}

// ---- checkpoint -----------------------------------------------------------------

TEST(CheckpointTest, RoundTripIsBitExact) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<mugen::checkpoint::Record> recs;
    const int count = 1 + static_cast<int>(rng() % 5);
    for (int i = 0; i < count; ++i) {
      mugen::checkpoint::Record r;
      r.name = "layer" + std::to_string(i) + ".w\xC3\xA9";
      const std::size_t rank = 1 + rng() % 4;
      for (std::size_t k = 0; k < rank; ++k) r.dims.push_back(1 + rng() % 4);
      for (std::size_t j = 0; j < mugen::element_count(r.dims); ++j) {
        r.data.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(rng() & 0x7F7FFFFFu)));
      }
      recs.push_back(r);
    }
    auto bytes = mugen::checkpoint::encode(recs);
    auto back = mugen::checkpoint::decode(bytes);
    ASSERT_EQ(back.size(), recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      EXPECT_EQ(back[i].name, recs[i].name);
      EXPECT_EQ(back[i].dims, recs[i].dims);
      EXPECT_EQ(0, std::memcmp(back[i].data.data(), recs[i].data.data(), recs[i].data.size() * 4));
    }
    EXPECT_EQ(mugen::checkpoint::encode(back), bytes);
  }
}

TEST(CheckpointTest, LayoutIsLittleEndian) {
  auto bytes = mugen::checkpoint::encode({{"ab", {2}, {1.0f, -2.0f}}});
  const std::vector<std::uint8_t> expected = {'M', 'U', 'G', 'N', '1', 1, 0, 0, 0, 2, 0, 'a', 'b', 1,
                                              2, 0, 0, 0, 0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0xC0};
  EXPECT_EQ(bytes, expected);
}

TEST(CheckpointTest, RejectsBadMagicAndTruncation) {
  std::vector<std::uint8_t> junk = {'N', 'O', 'P', 'E', '1', 0, 0, 0, 0};
  EXPECT_THROW(mugen::checkpoint::decode(junk), mugen::CheckpointError);
  auto bytes = mugen::checkpoint::encode({{"w", {3}, {1, 2, 3}}});
  bytes.pop_back();
  EXPECT_THROW(mugen::checkpoint::decode(bytes), mugen::CheckpointError);
}
