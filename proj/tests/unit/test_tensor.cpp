#include <gtest/gtest.h>

#include "kdmvs/tensor/ops.hpp"
#include "kdmvs/tensor/params.hpp"
#include "support/gradcheck.hpp"

namespace kdmvs {
namespace {

using testing::check_gradient;
using testing::random_grid;

Grid row(std::initializer_list<double> v) {
  Grid g(1, static_cast<int>(v.size()), 1);
  std::copy(v.begin(), v.end(), g.data().begin());
  return g;
}

TEST(MapBinary, AbsDiffHandComputed) {
  Tape tape;
  Var out = ops::abs_diff(tape.constant(row({1, 4})), tape.constant(row({3, 1})));
  EXPECT_EQ(out.value(), row({2, 3}));
}

TEST(MapBinary, IdentityCases) {
  Rng rng(1);
  Tape tape;
  const Grid x = random_grid(3, 4, 2, rng);
  EXPECT_EQ(ops::abs_diff(tape.constant(x), tape.constant(x)).value(), Grid(3, 4, 2));
  EXPECT_EQ(ops::add(tape.constant(Grid(3, 4, 2)), tape.constant(x)).value(), x);
}

TEST(MapBinary, ShapeMismatchNamesBothShapes) {
  Tape tape;
  try {
    ops::add(tape.constant(Grid(2, 3, 1)), tape.constant(Grid(3, 2, 1)));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3x1"), std::string::npos);
    EXPECT_NE(msg.find("3x2x1"), std::string::npos);
  }
}

TEST(Backward, QuadraticGradient) {
  Tape tape;
  Var p = tape.leaf(row({1, 2}));
  Var loss = ops::sum(ops::square(p));
  tape.backward(loss);
  EXPECT_EQ(tape.grad(p), row({2, 4}));
  EXPECT_EQ(tape.grad(loss).item(), 1.0);
}

TEST(Backward, ConstantLossGivesZeroGradients) {
  Tape tape;
  Var p = tape.leaf(row({1, 2}));
  Var loss = tape.constant(Grid::scalar(3.0));
  tape.backward(loss);
  EXPECT_EQ(tape.grad(p), Grid(1, 2, 1));
}

TEST(Backward, RejectsNonScalarRoot) {
  Tape tape;
  Var p = tape.leaf(row({1, 2}));
  EXPECT_THROW(tape.backward(ops::square(p)), ShapeError);
}

TEST(Backward, SecondPassWithoutResetIsAnError) {
  Tape tape;
  Var p = tape.leaf(row({1, 2}));
  Var loss = ops::sum(p);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), Error);
  tape.reset();
  Var q = tape.leaf(row({1, 2}));
  EXPECT_NO_THROW(tape.backward(ops::sum(q)));
}

TEST(Backward, IsLinearInTheLoss) {
  Rng rng(3);
  const Grid x0 = random_grid(3, 3, 2, rng);
  const double a = 0.7, b = -1.3;
  auto l1 = [](const Var& x) { return ops::sum(ops::tanh(x)); };
  auto l2 = [](const Var& x) { return ops::sum(ops::square(ops::exp(ops::scale(x, 0.5)))); };
  auto grad_of = [&](int which) {
    Tape tape;
    Var x = tape.leaf(x0);
    Var loss = which == 0 ? l1(x) : which == 1 ? l2(x) : ops::weighted_sum({l1(x), l2(x)}, {a, b});
    tape.backward(loss);
    return tape.grad(x);
  };
  const Grid g1 = grad_of(0), g2 = grad_of(1), g12 = grad_of(2);
  for (std::size_t i = 0; i < g12.size(); ++i) EXPECT_NEAR(g12[i], a * g1[i] + b * g2[i], 1e-12);
}

TEST(BilinearSample, IntegerCoordsReproduceSource) {
  Rng rng(5);
  Tape tape;
  const Grid src = random_grid(4, 5, 3, rng);
  Grid coords(4, 5, 2);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) {
      coords(y, x, 0) = x;
      coords(y, x, 1) = y;
    }
  ops::Sampled s = ops::bilinear_sample(tape.constant(src), tape.constant(coords));
  EXPECT_EQ(s.value.value(), src);
  EXPECT_EQ(count_nonzero(s.mask), 20);
}

TEST(BilinearSample, HandInterpolation) {
  Tape tape;
  Grid coords(1, 1, 2);
  coords(0, 0, 0) = 0.5;
  ops::Sampled s = ops::bilinear_sample(tape.constant(row({2, 4})), tape.constant(coords));
  EXPECT_DOUBLE_EQ(s.value.value()[0], 3.0);
  EXPECT_EQ(s.mask[0], 1.0);
}

TEST(BilinearSample, OutOfBoundsIsMaskedZero) {
  Tape tape;
  Grid coords(1, 1, 2, -5.0);
  ops::Sampled s = ops::bilinear_sample(tape.constant(Grid(3, 3, 1, 7.0)), tape.constant(coords));
  EXPECT_EQ(s.value.value()[0], 0.0);
  EXPECT_EQ(s.mask[0], 0.0);
}

// Central-difference checks of every differentiable op at 100 random
// coordinates.
class OpGradient : public ::testing::Test {
 protected:
  Rng rng{11};
  void expect_ok(const testing::LossFn& fn, std::vector<Grid> inputs) {
    const auto r = check_gradient(fn, std::move(inputs));
    EXPECT_LT(r.relative_error, 1e-4);
    EXPECT_GT(r.analytic_norm, 0.0);
  }
  // Random weights make every output element matter.
  Var weigh(Tape& tape, const Var& v) {
    Rng w(99);
    return ops::sum(ops::mul(v, tape.constant(random_grid(v.shape().height, v.shape().width, v.shape().channels, w))));
  }
};

TEST_F(OpGradient, ElementwiseOps) {
  const Grid a = random_grid(4, 5, 2, rng), b = random_grid(4, 5, 2, rng);
  for (auto op : {ops::BinaryOp::kAdd, ops::BinaryOp::kSub, ops::BinaryOp::kMul, ops::BinaryOp::kAbsDiff})
    expect_ok([&, op](Tape& t, const std::vector<Var>& v) { return weigh(t, ops::map_binary(v[0], v[1], op)); }, {a, b});
  expect_ok([&](Tape& t, const std::vector<Var>& v) { return weigh(t, ops::tanh(v[0])); }, {a});
  expect_ok([&](Tape& t, const std::vector<Var>& v) { return weigh(t, ops::exp(v[0])); }, {a});
  expect_ok([&](Tape& t, const std::vector<Var>& v) { return weigh(t, ops::scale(v[0], -2.5)); }, {a});
}

TEST_F(OpGradient, Reductions) {
  const Grid a = random_grid(4, 5, 3, rng);
  Grid mask(4, 5, 1);
  for (std::size_t i = 0; i < mask.size(); i += 2) mask[i] = 1.0;
  expect_ok([&](Tape& t, const std::vector<Var>& v) { return weigh(t, ops::channel_mean(v[0])); }, {a});
  expect_ok([&](Tape&, const std::vector<Var>& v) { return ops::mean(ops::square(v[0])); }, {a});
  expect_ok([&](Tape&, const std::vector<Var>& v) { return ops::masked_mean(ops::channel_mean(ops::square(v[0])), mask); },
            {a});
  expect_ok([&](Tape& t, const std::vector<Var>& v) { return weigh(t, ops::mul_scalar(v[0], v[1])); },
            {a, Grid::scalar(0.7)});
}

TEST_F(OpGradient, Normalizations) {
  const Grid a = random_grid(4, 5, 3, rng);
  const Grid positive = random_grid(4, 5, 6, rng, 0.1, 2.0);
  expect_ok([&](Tape& t, const std::vector<Var>& v) { return weigh(t, ops::standardize_channels(v[0], 1e-6)); }, {a});
  expect_ok([&](Tape& t, const std::vector<Var>& v) { return weigh(t, ops::normalize_by_channel_mean(v[0], 1e-12)); },
            {positive});
}

TEST(Normalizations, Values) {
  Tape tape;
  Grid g(1, 4, 1);
  g[0] = 1, g[1] = 2, g[2] = 3, g[3] = 6;
  const Grid s = ops::standardize_channels(tape.constant(g), 0.0).value();
  EXPECT_NEAR(s[0], (1 - 3) / std::sqrt(3.5), 1e-15);
  EXPECT_NEAR(s[3], (6 - 3) / std::sqrt(3.5), 1e-15);
  // Gain and bias do not change the result.
  Grid h = g;
  for (double& v : h.data()) v = 0.8 * v + 0.05;
  const Grid sh = ops::standardize_channels(tape.constant(h), 0.0).value();
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(sh[i], s[i], 1e-12);
  Grid c(1, 1, 4);
  c[0] = 1, c[1] = 2, c[2] = 3, c[3] = 6;
  const Grid n = ops::normalize_by_channel_mean(tape.constant(c), 0.0).value();
  EXPECT_DOUBLE_EQ(n[3], 2.0);
  EXPECT_DOUBLE_EQ(n[0], 1.0 / 3.0);
}

TEST_F(OpGradient, SoftmaxAndExpectation) {
  const Grid logits = random_grid(3, 4, 5, rng, -2, 2);
  const Grid values = random_grid(3, 4, 5, rng, 2, 10);
  expect_ok([&](Tape& t, const std::vector<Var>& v) { return weigh(t, ops::softmax_channels(v[0])); }, {logits});
  expect_ok([&](Tape& t, const std::vector<Var>& v) { return weigh(t, ops::expectation(ops::softmax_channels(v[0]), values)); },
            {logits});
}

TEST_F(OpGradient, Convolutions) {
  const Grid x2 = random_grid(5, 6, 3, rng);
  const Grid w2 = random_grid(4, 9, 3, rng), b2 = random_grid(1, 1, 4, rng);
  expect_ok([&](Tape& t, const std::vector<Var>& v) { return weigh(t, ops::conv2d(v[0], v[1], v[2])); }, {x2, w2, b2});
  const Grid x3 = random_grid(4, 5, 6 * 2, rng);  // depth 6, 2 channels
  const Grid w3 = random_grid(3, 27, 2, rng), b3 = random_grid(1, 1, 3, rng);
  expect_ok([&](Tape& t, const std::vector<Var>& v) { return weigh(t, ops::conv_volume(v[0], v[1], v[2], 6, 3)); },
            {x3, w3, b3});
}

TEST_F(OpGradient, BilinearSampleSourceAndCoords) {
  const Grid src = random_grid(6, 7, 2, rng);
  Grid coords(4, 4, 2);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      coords(y, x, 0) = rng.uniform(0.2, 5.8);
      coords(y, x, 1) = rng.uniform(0.2, 4.8);
    }
  coords(0, 0, 0) = -3.0;  // one masked sample
  expect_ok(
      [&](Tape& t, const std::vector<Var>& v) { return weigh(t, ops::bilinear_sample(v[0], v[1]).value); },
      {src, coords});
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore params{{"w", Grid(1, 2, 1, 1.0)}};
  GradStore grads{{"w", row({0.5, -2.0})}};
  Adam adam(Adam::Options{});
  adam.step(params, grads);
  EXPECT_NEAR(params["w"][0], 1.0 - 1e-3, 1e-9);
  EXPECT_NEAR(params["w"][1], 1.0 + 1e-3, 1e-9);
}

TEST(Grid, AreaDownsampleAveragesBlocks) {
  Grid g(2, 4, 1);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(i);
  const Grid d = area_downsample(g, 2);
  EXPECT_EQ(d.shape(), (Shape{1, 2, 1}));
  EXPECT_DOUBLE_EQ(d[0], (0 + 1 + 4 + 5) / 4.0);
  EXPECT_THROW(area_downsample(Grid(3, 4, 1), 2), ShapeError);
}

}  // namespace
}  // namespace kdmvs
