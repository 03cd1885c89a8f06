#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "test_util.h"
#include "xaib/error.h"
#include "xaib/ops.h"
#include "xaib/tensor.h"

namespace xaib {
namespace {

using testing::RandomTensor;
using OpFn = std::function<Tensor(Tape&, std::vector<Tensor>&)>;

// Projects the op output onto fixed random weights so every output element
// contributes to a scalar; the projection is accumulated in double.
double Project(const Tensor& out, const std::vector<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) s += r[i] * out.data()[i];
  return s;
}

// Float32 forward passes limit the usable step; h = 1e-2 keeps rounding
// noise well below the tolerance while truncation error stays O(h^2).
double MaxRelativeError(const OpFn& op, const std::vector<Tensor>& originals, double h = 1e-2) {
  std::vector<Tensor> inputs;
  for (const auto& t : originals) inputs.push_back(t.clone().set_requires_grad(true));
  Tape tape;
  Tensor out = op(tape, inputs);
  RngStream rng(99);
  std::vector<double> r(out.numel());
  for (auto& v : r) v = rng.next_uniform() * 2.0 - 1.0;
  Tensor weights(out.shape());
  for (std::size_t i = 0; i < r.size(); ++i) weights.data()[i] = static_cast<float>(r[i]);
  Tensor loss = ops::sum(tape, ops::mul(tape, out, weights));
  tape.backward(loss);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<float> analytic(inputs[k].grad().begin(), inputs[k].grad().end());
    std::vector<double> fd(analytic.size());
    double fd_inf = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      std::vector<Tensor> plus, minus;
      for (auto& t : inputs) {
        plus.push_back(t.clone());
        minus.push_back(t.clone());
      }
      plus[k].data()[i] += static_cast<float>(h);
      minus[k].data()[i] -= static_cast<float>(h);
      const double dh = static_cast<double>(plus[k].data()[i]) - static_cast<double>(minus[k].data()[i]);
      Tape t1, t2;
      fd[i] = (Project(op(t1, plus), r) - Project(op(t2, minus), r)) / dh;
      fd_inf = std::max(fd_inf, std::abs(fd[i]));
    }
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double denom = std::max({std::abs(fd[i]), std::abs(static_cast<double>(analytic[i])), 1e-3 * fd_inf, 1e-12});
      worst = std::max(worst, std::abs(analytic[i] - fd[i]) / denom);
    }
  }
  return worst;
}

TEST(TensorTest, ShapeAndDataAgree) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.data().size(), 24u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>{1, 2, 3}), Error);
}

TEST(TensorTest, CloneIsDeepAndReshapeIsView) {
  Tensor t = Tensor::FromValues({1, 2, 3, 4});
  Tensor c = t.clone();
  Tensor v = t.reshaped({2, 2});
  t.data()[0] = 9;
  EXPECT_EQ(c.data()[0], 1);
  EXPECT_EQ(v.data()[0], 9);
  EXPECT_TRUE(v.same_storage(t));
  EXPECT_THROW(t.reshaped({3}), Error);
}

TEST(OpsTest, ReluExample) {
  Tape tape;
  Tensor y = ops::relu(tape, Tensor::FromValues({-1, 0, 2}));
  EXPECT_EQ(std::vector<float>(y.data().begin(), y.data().end()), (std::vector<float>{0, 0, 2}));
}

TEST(OpsTest, SoftmaxOfConstantRowIsUniform) {
  for (float c : {-1000.0f, 0.0f, 3.5f, 1000.0f}) {
    Tape tape;
    Tensor y = ops::softmax(tape, Tensor({1, 3}, {c, c, c}));
    for (float v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-7);
  }
}

TEST(OpsTest, SoftmaxRowsSumToOne) {
  Tape tape;
  Tensor y = ops::softmax(tape, RandomTensor({8, 7}, RngStream(3), -20.0f, 20.0f));
  for (int r = 0; r < 8; ++r) {
    double s = 0.0;
    for (int c = 0; c < 7; ++c) s += y.data()[r * 7 + c];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(OpsTest, ConvOfOnesByHand) {
  Tape tape;
  Tensor y = ops::conv2d(tape, Tensor({1, 1, 3, 3}, 1.0f), Tensor({1, 1, 2, 2}, 1.0f), Tensor(), {1, 0});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (float v : y.data()) EXPECT_EQ(v, 4.0f);
}

TEST(OpsTest, ConvStrideAndPaddingShapes) {
  Tape tape;
  Tensor y = ops::conv2d(tape, Tensor({2, 3, 7, 5}, 1.0f), Tensor({4, 3, 3, 3}, 1.0f), Tensor({4}, 0.5f), {2, 1});
  EXPECT_EQ(y.shape(), (Shape{2, 4, 4, 3}));
  // Corner output sees a 2x2 patch of the padded image in each of 3 channels.
  EXPECT_EQ(y.data()[0], 12.5f);
}

TEST(OpsTest, ShapeMismatchNamesOpAndShapes) {
  Tape tape;
  try {
    ops::add(tape, Tensor({2, 3}), Tensor({3, 2}));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3, 2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ops::matmul(tape, Tensor({2, 3}), Tensor({2, 3})), Error);
  EXPECT_THROW(ops::conv2d(tape, Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor()), Error);
  EXPECT_THROW(ops::dense(tape, Tensor({2, 5}), Tensor({3, 4}), Tensor({3})), Error);
}

TEST(BackwardTest, LinearFunction) {
  Tensor x = Tensor({1, 3}, {0.5f, -2.0f, 4.0f});
  x.set_requires_grad(true);
  Tape tape;
  Tensor y = ops::dense(tape, x, Tensor({1, 3}, {1, 2, 3}), Tensor());
  tape.backward(ops::sum(tape, y));
  EXPECT_EQ(std::vector<float>(x.grad().begin(), x.grad().end()), (std::vector<float>{1, 2, 3}));
}

TEST(BackwardTest, SumOfRelu) {
  Tensor x = Tensor::FromValues({-1, 2});
  x.set_requires_grad(true);
  Tape tape;
  tape.backward(ops::sum(tape, ops::relu(tape, x)));
  EXPECT_EQ(std::vector<float>(x.grad().begin(), x.grad().end()), (std::vector<float>{0, 1}));
}

TEST(BackwardTest, RejectsNonScalarAndDetachedLoss) {
  Tensor x = Tensor::FromValues({1, 2});
  x.set_requires_grad(true);
  Tape tape;
  Tensor y = ops::mul(tape, x, 2.0f);
  EXPECT_THROW(tape.backward(y), Error);
  Tape other;
  EXPECT_THROW(other.backward(ops::sum(other, x.detached())), Error);
}

TEST(BackwardTest, SharedInputAccumulates) {
  Tensor x = Tensor::FromValues({3});
  x.set_requires_grad(true);
  Tape tape;
  tape.backward(ops::sum(tape, ops::mul(tape, x, x)));
  EXPECT_EQ(x.grad()[0], 6.0f);
}

TEST(GradientCheckTest, Elementwise) {
  RngStream rng(1);
  std::vector<Tensor> in{RandomTensor({3, 4}, rng.derive(0)), RandomTensor({3, 4}, rng.derive(1))};
  EXPECT_LE(MaxRelativeError([](Tape& t, auto& v) { return ops::add(t, v[0], v[1]); }, in), 1e-3);
  EXPECT_LE(MaxRelativeError([](Tape& t, auto& v) { return ops::sub(t, v[0], v[1]); }, in), 1e-3);
  EXPECT_LE(MaxRelativeError([](Tape& t, auto& v) { return ops::mul(t, v[0], v[1]); }, in), 1e-3);
  EXPECT_LE(MaxRelativeError([](Tape& t, auto& v) { return ops::mul(t, ops::add(t, v[0], 0.5f), -1.5f); },
                             {in[0]}),
            1e-3);
}

TEST(GradientCheckTest, Matmul) {
  RngStream rng(2);
  std::vector<Tensor> in{RandomTensor({3, 5}, rng.derive(0)), RandomTensor({5, 4}, rng.derive(1))};
  EXPECT_LE(MaxRelativeError([](Tape& t, auto& v) { return ops::matmul(t, v[0], v[1]); }, in), 1e-3);
}

TEST(GradientCheckTest, Conv2d) {
  // conv2d is linear in each argument, so a large step carries no truncation error.
  constexpr double kStep = 0.1;
  RngStream rng(3);
  std::vector<Tensor> in{RandomTensor({2, 2, 6, 5}, rng.derive(0)), RandomTensor({3, 2, 3, 3}, rng.derive(1)),
                         RandomTensor({3}, rng.derive(2))};
  EXPECT_LE(MaxRelativeError([](Tape& t, auto& v) { return ops::conv2d(t, v[0], v[1], v[2], {1, 1}); }, in, kStep), 1e-3);
  EXPECT_LE(MaxRelativeError([](Tape& t, auto& v) { return ops::conv2d(t, v[0], v[1], v[2], {2, 0}); }, in, kStep), 1e-3);
}

TEST(GradientCheckTest, MaxpoolAwayFromTies) {
  // Distinct, well-separated values keep every window's argmax stable under h.
  Tensor x({1, 2, 4, 6});
  auto perm = RandomPermutation(48, RngStream(4));
  for (int i = 0; i < 48; ++i) x.data()[i] = 0.1f * static_cast<float>(perm[i]);
  EXPECT_LE(MaxRelativeError([](Tape& t, auto& v) { return ops::maxpool2d(t, v[0], 2, 2); }, {x}), 1e-3);
}

TEST(GradientCheckTest, ReluAwayFromKink) {
  Tensor x = RandomTensor({4, 5}, RngStream(5));
  for (auto& v : x.data()) v += v >= 0 ? 0.1f : -0.1f;
  EXPECT_LE(MaxRelativeError([](Tape& t, auto& v) { return ops::relu(t, v[0]); }, {x}), 1e-3);
}

TEST(GradientCheckTest, DenseFlattenSoftmax) {
  RngStream rng(6);
  std::vector<Tensor> in{RandomTensor({2, 2, 2, 2}, rng.derive(0)), RandomTensor({3, 8}, rng.derive(1)),
                         RandomTensor({3}, rng.derive(2))};
  EXPECT_LE(MaxRelativeError(
                [](Tape& t, auto& v) { return ops::softmax(t, ops::dense(t, ops::flatten(t, v[0]), v[1], v[2])); },
                in),
            1e-3);
}

TEST(GradientCheckTest, CrossEntropyAndPick) {
  Tensor logits = RandomTensor({4, 3}, RngStream(7), -2.0f, 2.0f);
  const std::vector<int> labels{0, 2, 1, 2};
  EXPECT_LE(MaxRelativeError([&](Tape& t, auto& v) { return ops::cross_entropy(t, v[0], labels); }, {logits}),
            1e-3);
  EXPECT_LE(MaxRelativeError([&](Tape& t, auto& v) { return ops::pick(t, v[0], labels); }, {logits}), 1e-3);
}

TEST(DropoutTest, RateZeroAndInactiveAreIdentity) {
  Tensor x = RandomTensor({3, 10}, RngStream(8));
  const RngStream s[] = {RngStream(1)};
  Tape tape;
  EXPECT_TRUE(testing::BitEqual(ops::dropout(tape, x, 0.0f, s, true).data(), x.data()));
  EXPECT_TRUE(testing::BitEqual(ops::dropout(tape, x, 0.5f, s, false).data(), x.data()));
}

TEST(DropoutTest, RateAtLeastOneIsAnError) {
  const RngStream s[] = {RngStream(1)};
  Tape tape;
  EXPECT_THROW(ops::dropout(tape, Tensor({4}), 1.0f, s, true), Error);
  EXPECT_THROW(ops::dropout(tape, Tensor({4}), -0.1f, s, true), Error);
}

TEST(DropoutTest, LawOfLargeNumbers) {
  constexpr int kN = 100000;
  Tensor x = RandomTensor({1, kN}, RngStream(9), 0.5f, 1.5f);
  const RngStream s[] = {RngStream(10)};
  Tape tape;
  Tensor y = ops::dropout(tape, x, 0.5f, s, true);
  double kept = 0, in_sum = 0, out_sum = 0;
  for (int i = 0; i < kN; ++i) {
    kept += y.data()[i] != 0.0f;
    in_sum += x.data()[i];
    out_sum += y.data()[i];
    if (y.data()[i] != 0.0f) EXPECT_FLOAT_EQ(y.data()[i], 2.0f * x.data()[i]);
  }
  EXPECT_NEAR(kept / kN, 0.5, 0.01);
  EXPECT_NEAR(out_sum / in_sum, 1.0, 0.01);
}

TEST(DropoutTest, RowMaskIndependentOfBatch) {
  Tensor x({3, 16}, 1.0f);
  const RngStream rows[] = {RngStream(1), RngStream(2), RngStream(3)};
  Tape tape;
  Tensor batched = ops::dropout(tape, x, 0.5f, rows, true);
  Tensor single = ops::dropout(tape, Tensor({1, 16}, 1.0f), 0.5f, std::span(rows + 1, 1), true);
  EXPECT_TRUE(testing::BitEqual(batched.data().subspan(16, 16), single.data()));
}

TEST(DropoutTest, BackwardUsesForwardMask) {
  Tensor x({1, 64}, 1.0f);
  x.set_requires_grad(true);
  const RngStream s[] = {RngStream(11)};
  Tape tape;
  Tensor y = ops::dropout(tape, x, 0.25f, s, true);
  std::vector<float> out(y.data().begin(), y.data().end());
  tape.backward(ops::sum(tape, y));
  for (int i = 0; i < 64; ++i) EXPECT_EQ(x.grad()[i], out[i]);
}

TEST(DeterminismTest, ForwardBackwardBitIdentical) {
  auto run = [] {
    Tensor x = RandomTensor({2, 3, 8, 8}, RngStream(12));
    Tensor w = RandomTensor({4, 3, 3, 3}, RngStream(13));
    x.set_requires_grad(true);
    Tape tape;
    Tensor y = ops::maxpool2d(tape, ops::relu(tape, ops::conv2d(tape, x, w, Tensor(), {1, 1})), 2, 2);
    tape.backward(ops::sum(tape, y));
    std::vector<float> all(y.data().begin(), y.data().end());
    all.insert(all.end(), x.grad().begin(), x.grad().end());
    return all;
  };
  EXPECT_TRUE(testing::BitEqual(run(), run()));
}

}  // namespace
}  // namespace xaib
