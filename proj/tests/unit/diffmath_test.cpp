#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "msmmt/diffmath/adamw.hpp"
#include "msmmt/diffmath/msmt_io.hpp"
#include "msmmt/diffmath/ops.hpp"
#include "support/gradcheck.hpp"

using namespace msmmt::diffmath;
using msmmt::testing::gradcheck;
using msmmt::testing::random_tensor;

namespace {

using TD = Tensor<double>;

// Random linear functional so that ops whose plain sum is constant
// (softmax) still get a non-trivial gradient.
TD project(const TD& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng)));
}

}  // namespace

TEST(Elementwise, AddTrivial) {
  auto a = Tensor<float>::from_data({2}, {1, 2});
  auto b = Tensor<float>::from_data({2}, {3, 4});
  auto c = add(a, b);
  EXPECT_EQ(c.at({0}), 4.0f);
  EXPECT_EQ(c.at({1}), 6.0f);
}

TEST(Elementwise, MulByZeroHasZeroGradient) {
  auto x = Tensor<double>::from_data({3}, {1.5, -2.0, 4.0}, true);
  auto y = mul(x, 0.0);
  for (auto v : y.data()) EXPECT_EQ(v, 0.0);
  sum(y).backward();
  for (auto g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Elementwise, TrailingBroadcast) {
  auto a = Tensor<float>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor<float>::from_data({3}, {10, 20, 30});
  auto c = add(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  EXPECT_EQ(c.at({1, 2}), 36.0f);
  auto col = Tensor<float>::from_data({2, 1}, {2, 3});
  auto d = mul(a, col);
  EXPECT_EQ(d.at({1, 0}), 12.0f);
}

TEST(Elementwise, Errors) {
  auto a = Tensor<float>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor<float>::from_data({2}, {1, 2});
  EXPECT_THROW(add(a, b), TensorError);
  EXPECT_THROW(div(a, Tensor<float>::from_data({3}, {1, 0, 1})), TensorError);
  EXPECT_THROW(log(Tensor<float>::from_data({1}, {-1})), TensorError);
  EXPECT_THROW(sqrt(Tensor<float>::from_data({1}, {-1})), TensorError);
  // log(0) is -inf: surfaced as a NumericError carrying the op name.
  try {
    log(Tensor<float>::from_data({1}, {0}));
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.op(), "log");
  }
  EXPECT_THROW(exp(Tensor<float>::from_data({1}, {1000})), NumericError);
}

TEST(Elementwise, GeluGradientAt30Points) {
  std::mt19937_64 rng(7);
  auto x = random_tensor({30}, rng, -3.0, 3.0);
  const double err = gradcheck([](const std::vector<TD>& in) { return project(gelu(in[0]), 1); }, {x});
  EXPECT_LE(err, 1e-5);
}

TEST(Elementwise, BinaryOpGradients) {
  std::mt19937_64 rng(11);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4}, rng, 0.5, 2.0);
  auto col = random_tensor({3, 1}, rng, 0.5, 2.0);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(add(in[0], in[1]), 2); }, {a, b}), 1e-5);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(sub(in[0], in[1]), 3); }, {a, b}), 1e-5);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(mul(in[0], in[1]), 4); }, {a, col}), 1e-5);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(div(in[0], in[1]), 5); }, {a, b}), 1e-5);
}

TEST(Elementwise, UnaryOpGradients) {
  std::mt19937_64 rng(13);
  auto pos = random_tensor({2, 5}, rng, 0.2, 2.0);
  auto any = random_tensor({2, 5}, rng, -2.0, 2.0);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(pow(in[0], 2.5), 6); }, {pos}), 1e-5);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(exp(in[0]), 7); }, {any}), 1e-5);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(log(in[0]), 8); }, {pos}), 1e-5);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(sqrt(in[0]), 9); }, {pos}), 1e-5);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(relu(in[0]), 10); }, {any}), 1e-5);
}

TEST(Matmul, IdentityAndHandArithmetic) {
  auto eye = Tensor<float>::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto x = Tensor<float>::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  auto y = matmul(eye, x);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
  auto a = Tensor<float>::from_data({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<float>::from_data({2, 1}, {5, 6});
  auto c = matmul(a, b);
  EXPECT_EQ(c.at({0, 0}), 17.0f);
  EXPECT_EQ(c.at({1, 0}), 39.0f);
  EXPECT_THROW(matmul(a, Tensor<float>::zeros({3, 1})), TensorError);
}

TEST(Matmul, Gradients) {
  std::mt19937_64 rng(17);
  auto a = random_tensor({4, 5}, rng);
  auto b = random_tensor({5, 3}, rng);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(matmul(in[0], in[1]), 11); }, {a, b}), 1e-5);
  auto ba = random_tensor({2, 3, 4}, rng);
  auto bb = random_tensor({2, 4, 2}, rng);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(matmul(in[0], in[1]), 12); }, {ba, bb}), 1e-5);
  auto shared = random_tensor({4, 2}, rng);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(matmul(in[0], in[1]), 13); }, {ba, shared}),
            1e-5);
}

TEST(Softmax, Basics) {
  auto s = softmax(Tensor<double>::from_data({3}, {0, 0, 0}), 0);
  for (auto v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  auto big = softmax(Tensor<float>::from_data({3}, {1000, 0, 0}), 0);
  EXPECT_NEAR(big.data()[0], 1.0f, 1e-6);
  EXPECT_NEAR(big.data()[1], 0.0f, 1e-6);
}

TEST(Softmax, RowsSumToOneForRandomInputs) {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_real_distribution<float> u(-50.0f, 50.0f);
    std::vector<float> v(4 * 7);
    for (auto& x : v) x = u(rng);
    auto y = softmax(Tensor<float>::from_data({4, 7}, v), -1);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        const float p = y.at({r, c});
        EXPECT_GE(p, 0.0f);
        EXPECT_LE(p, 1.0f);
        s += p;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, Gradients) {
  std::mt19937_64 rng(23);
  auto x = random_tensor({3, 4, 5}, rng, -2, 2);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(softmax(in[0], -1), 14); }, {x}), 1e-5);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(softmax(in[0], 1), 15); }, {x}), 1e-5);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(log_softmax(in[0], -1), 16); }, {x}), 1e-5);
}

TEST(LayerNorm, ConstantRowAndTwoPoints) {
  auto gamma = Tensor<double>::full({4}, 1.0);
  auto beta = Tensor<double>::zeros({4});
  auto y = layernorm(Tensor<double>::full({2, 4}, 3.5), gamma, beta, 1e-5);
  for (auto v : y.data()) EXPECT_EQ(v, 0.0);
  auto y2 = layernorm(Tensor<double>::from_data({2}, {1, 3}), Tensor<double>::full({2}, 1.0),
                      Tensor<double>::zeros({2}), 1e-12);
  EXPECT_NEAR(y2.data()[0], -1.0, 1e-5);
  EXPECT_NEAR(y2.data()[1], 1.0, 1e-5);
}

TEST(LayerNorm, RowsStandardized) {
  std::mt19937_64 rng(29);
  auto x = random_tensor({5, 8}, rng, -4, 4);
  auto y = layernorm(x, Tensor<double>::full({8}, 1.0), Tensor<double>::zeros({8}), 1e-12);
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 8; ++c) m += y.at({r, c});
    m /= 8;
    for (std::size_t c = 0; c < 8; ++c) v += (y.at({r, c}) - m) * (y.at({r, c}) - m);
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(v / 8, 1.0, 1e-5);
  }
}

TEST(LayerNorm, Gradients) {
  std::mt19937_64 rng(31);
  auto x = random_tensor({3, 6}, rng, -2, 2);
  auto g = random_tensor({6}, rng, 0.5, 1.5);
  auto b = random_tensor({6}, rng);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(layernorm(in[0], in[1], in[2], 1e-5), 17); },
                      {x, g, b}),
            1e-5);
}

TEST(Shapes, PermuteSliceConcatReductionsGradients) {
  std::mt19937_64 rng(37);
  auto x = random_tensor({2, 3, 4}, rng);
  auto y = random_tensor({2, 2, 4}, rng);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(permute(in[0], {2, 0, 1}), 18); }, {x}), 1e-5);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(transpose(in[0]), 19); }, {x}), 1e-5);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(slice(in[0], 1, 1, 2), 20); }, {x}), 1e-5);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(concat<double>({in[0], in[1]}, 1), 21); },
                      {x, y}),
            1e-5);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(mean(in[0], 1, true), 22); }, {x}), 1e-5);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(max(in[0], -1, true), 23); }, {x}), 1e-5);
  EXPECT_LE(gradcheck([](const std::vector<TD>& in) { return project(reshape(in[0], {6, 4}), 24); }, {x}), 1e-5);
}

TEST(Permute, MatchesIndexing) {
  std::vector<float> v(24);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i);
  auto x = Tensor<float>::from_data({2, 3, 4}, v);
  auto p = permute(x, {2, 0, 1});
  EXPECT_EQ(p.shape(), (Shape{4, 2, 3}));
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(p.at({c, a, b}), x.at({a, b, c}));
}

TEST(Backward, SumAndSquares) {
  auto x = Tensor<double>::from_data({2}, {1, 2}, true);
  sum(x).backward();
  EXPECT_EQ(x.grad(), (std::vector<double>{1, 1}));
  x.zero_grad();
  sum(mul(x, x)).backward();
  EXPECT_EQ(x.grad(), (std::vector<double>{2, 4}));
}

TEST(Backward, LeafGradientsAccumulateUntilZeroed) {
  auto x = Tensor<double>::from_data({2}, {1, 2}, true);
  auto loss = sum(mul(x, x));
  loss.backward();
  loss.backward();
  EXPECT_EQ(x.grad(), (std::vector<double>{4, 8}));
}

TEST(Backward, Errors) {
  auto x = Tensor<double>::from_data({2}, {1, 2}, true);
  EXPECT_THROW(mul(x, 2.0).backward(), TensorError);  // non-scalar
  auto c = Tensor<double>::from_data({2}, {1, 2});
  EXPECT_THROW(sum(c).backward(), TensorError);  // detached
}

TEST(AdamW, ZeroGradientNoDecayLeavesParams) {
  auto w = Tensor<double>::from_data({3}, {1, -2, 3}, true);
  w.mutable_grad();
  AdamW<double> opt({w}, AdamWOptions{1e-3, 0.0});
  opt.step();
  EXPECT_EQ(w.data()[0], 1.0);
  EXPECT_EQ(w.data()[1], -2.0);
  EXPECT_EQ(w.data()[2], 3.0);
}

TEST(AdamW, Defaults) {
  AdamWOptions o;
  EXPECT_EQ(o.learning_rate, 5e-5);
  EXPECT_EQ(o.weight_decay, 0.05);
}

TEST(AdamW, ZeroLearningRateIsBitIdentical) {
  std::mt19937_64 rng(41);
  auto w = random_tensor({16}, rng);
  w.set_requires_grad(true);
  const std::vector<double> before(w.data().begin(), w.data().end());
  AdamW<double> opt({w}, AdamWOptions{0.0, 0.05});
  for (int i = 0; i < 3; ++i) {
    opt.zero_grad();
    sum(mul(w, w)).backward();
    opt.step();
  }
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(w.data()[i], before[i]);
  EXPECT_EQ(opt.state().step, 3);
}

TEST(AdamW, SingleStepHandTrace) {
  // f(w) = w^2 at w = 1: g = 2.
  const double lr = 0.1, wd = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  auto w = Tensor<double>::from_data({1}, {1.0}, true);
  AdamW<double> opt({w}, AdamWOptions{lr, wd, b1, b2, eps});
  sum(mul(w, w)).backward();
  opt.step();
  double p = 1.0;
  p = p - lr * wd * p;                   // 0.995
  const double m = (1 - b1) * 2.0;       // 0.2
  const double v = (1 - b2) * 4.0;       // 0.004
  const double mhat = m / (1 - b1);      // 2
  const double vhat = v / (1 - b2);      // 4
  p = p - lr * mhat / (std::sqrt(vhat) + eps);
  EXPECT_NEAR(w.data()[0], p, 1e-10);
  EXPECT_NEAR(w.data()[0], 0.995 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-10);
}

TEST(AdamW, ErrorsOnUninitializedOrMismatchedState) {
  std::vector<Tensor<double>> params{Tensor<double>::zeros({2}, true)};
  AdamWState<double> state;
  EXPECT_THROW(adamw_step(params, state), TensorError);
  state.initialize({Tensor<double>::zeros({3}, true)});
  EXPECT_THROW(adamw_step(params, state), TensorError);
}

TEST(Msmt, BitExactRoundTripAndErrors) {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<float> u(-1e6f, 1e6f);
  std::vector<float> v(2 * 3 * 5);
  for (auto& x : v) x = u(rng);
  v[3] = -0.0f;
  v[4] = 1e-40f;  // subnormal
  const auto path = std::filesystem::temp_directory_path() / "msmmt_diffmath_roundtrip.msmt";
  write_msmt(path, {2, 3, 5}, v);
  auto back = read_msmt(path);
  EXPECT_EQ(back.shape, (Shape{2, 3, 5}));
  ASSERT_EQ(back.values.size(), v.size());
  EXPECT_EQ(std::memcmp(back.values.data(), v.data(), v.size() * sizeof(float)), 0);

  auto bytes = encode_msmt({2}, std::vector<float>{1.0f, 2.0f});
  EXPECT_EQ(bytes.size(), 7u + 4u + 8u);
  EXPECT_EQ(bytes[0], 'M');
  EXPECT_EQ(bytes[4], 0x01);
  EXPECT_EQ(bytes[5], 0x01);
  EXPECT_EQ(bytes[6], 1);
  EXPECT_EQ(bytes[7], 2);
  // 1.0f = 0x3F800000 little-endian
  EXPECT_EQ(bytes[11], 0x00);
  EXPECT_EQ(bytes[14], 0x3F);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_msmt(bad), MsmtFormatError);
  bad = bytes;
  bad.pop_back();
  EXPECT_THROW(decode_msmt(bad), MsmtFormatError);
  std::filesystem::remove(path);
}
