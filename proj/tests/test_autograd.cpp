#include "test_util.hpp"

#include "vilaco/autograd.hpp"

using namespace vilaco;
using vilaco::testing::gradient_error;
using vilaco::testing::random_matrix;

namespace {

constexpr double kTol = 1e-6;

// Contracts an arbitrary-shaped output to a scalar with fixed random weights
// so every output entry influences the checked gradient.
Var contract(const Var& out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return ag::sum(ag::mul(out, ag::constant(random_matrix(rng, out.rows(), out.cols()))));
}

class AutogradTest : public ::testing::Test {
 protected:
  std::mt19937_64 rng{7};
  Var p(Eigen::Index r, Eigen::Index c, double scale = 1.0) { return ag::parameter(random_matrix(rng, r, c, scale)); }
};

TEST_F(AutogradTest, ElementwiseOps) {
  auto a = p(3, 4), b = p(3, 4);
  b.mutable_value() = b.value().cwiseAbs().array() + 0.5;
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::add(a, b)); }), kTol);
  EXPECT_LT(gradient_error(b, [&] { return contract(ag::sub(a, b)); }), kTol);
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::mul(a, b)); }), kTol);
  EXPECT_LT(gradient_error(b, [&] { return contract(ag::mul(a, b)); }), kTol);
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::div(a, b)); }), kTol);
  EXPECT_LT(gradient_error(b, [&] { return contract(ag::div(a, b)); }), kTol);
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::scale(ag::add_scalar(ag::neg(a), 2.0), 3.0)); }), kTol);
}

TEST_F(AutogradTest, Activations) {
  auto a = p(4, 5);
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::gelu(a)); }), kTol);
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::sigmoid(a)); }), kTol);
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::exp(a)); }), kTol);
  auto pos = ag::parameter(a.value().cwiseAbs().array() + 0.3);
  EXPECT_LT(gradient_error(pos, [&] { return contract(ag::log(pos)); }), kTol);
}

TEST_F(AutogradTest, GeluValues) {
  auto x = ag::constant(Matrix{{0.0, 1.0, -1.0}});
  const Matrix y = ag::gelu(x).value();
  EXPECT_DOUBLE_EQ(y(0, 0), 0.0);
  EXPECT_NEAR(y(0, 1), 0.8413447460685429, 1e-12);
  EXPECT_NEAR(y(0, 2), -0.15865525393145707, 1e-12);
}

TEST_F(AutogradTest, BroadcastAndReductions) {
  auto row = p(1, 4), col = p(3, 1), s = p(1, 1), a = p(3, 4);
  EXPECT_LT(gradient_error(row, [&] { return contract(ag::broadcast(row, 3, 4)); }), kTol);
  EXPECT_LT(gradient_error(col, [&] { return contract(ag::broadcast(col, 3, 4)); }), kTol);
  EXPECT_LT(gradient_error(s, [&] { return contract(ag::broadcast(s, 3, 4)); }), kTol);
  EXPECT_LT(gradient_error(a, [&] { return ag::mean(ag::mul(a, a)); }), kTol);
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::sum_rows(a)); }), kTol);
}

TEST_F(AutogradTest, MatmulTranspose) {
  auto a = p(3, 5), b = p(5, 2);
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::matmul(a, b)); }), kTol);
  EXPECT_LT(gradient_error(b, [&] { return contract(ag::matmul(a, b)); }), kTol);
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::transpose(a)); }), kTol);
}

TEST_F(AutogradTest, RowNormalisations) {
  auto a = p(4, 6);
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::softmax_rows(a)); }), kTol);
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::log_softmax_rows(a)); }), kTol);
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::layer_norm_rows(a)); }), 1e-5);
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::l2_normalize_rows(a)); }), kTol);
  const Matrix sm = ag::softmax_rows(a).value();
  for (Eigen::Index r = 0; r < sm.rows(); ++r) EXPECT_NEAR(sm.row(r).sum(), 1.0, 1e-12);
}

TEST_F(AutogradTest, ZeroRowNormalisesToZero) {
  Matrix m = Matrix::Zero(2, 3);
  m(1, 0) = 3.0;
  m(1, 1) = 4.0;
  const Matrix out = ag::l2_normalize_rows(ag::constant(m)).value();
  EXPECT_EQ(out.row(0).norm(), 0.0);
  EXPECT_NEAR(out(1, 0), 0.6, 1e-15);
}

TEST_F(AutogradTest, ShapeOps) {
  auto a = p(4, 6), b = p(4, 2), c = p(3, 6);
  const Var cols[] = {a, b};
  const Var rows[] = {a, c};
  EXPECT_LT(gradient_error(b, [&] { return contract(ag::concat_cols(cols)); }), kTol);
  EXPECT_LT(gradient_error(c, [&] { return contract(ag::concat_rows(rows)); }), kTol);
  const int idx[] = {3, 1, 3};
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::gather_rows(a, idx)); }), kTol);
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::slice_cols(a, 2, 3)); }), kTol);
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::slice_rows(a, 1, 2)); }), kTol);
  EXPECT_LT(gradient_error(a, [&] { return contract(ag::reshape(a, 6, 4)); }), kTol);
}

TEST_F(AutogradTest, Attention) {
  auto q = p(6, 4), k = p(6, 4), v = p(6, 4);
  const std::vector<ag::AttentionGroup> groups{{{0, 1, 2}, {0, 1, 2, 3}}, {{3, 4, 5}, {2, 3, 4, 5}}};
  auto f = [&] { return contract(ag::attention(q, k, v, 2, groups)); };
  EXPECT_LT(gradient_error(q, f), kTol);
  EXPECT_LT(gradient_error(k, f), kTol);
  EXPECT_LT(gradient_error(v, f), kTol);
}

TEST_F(AutogradTest, AttentionSingleKeyCopiesValue) {
  auto q = p(2, 4), k = p(2, 4), v = p(2, 4);
  const std::vector<ag::AttentionGroup> groups{{{0}, {1}}, {{1}, {1}}};
  const Matrix out = ag::attention(q, k, v, 2, groups).value();
  EXPECT_TRUE(out.row(0).isApprox(v.value().row(1), 1e-14));
  EXPECT_TRUE(out.row(1).isApprox(v.value().row(1), 1e-14));
}

TEST_F(AutogradTest, Conv2dMatchesDirectSum) {
  const int h = 4, w = 5;
  auto x = p(2, h * w), wt = p(3, 2 * 9), b = p(3, 1);
  const Matrix out = ag::conv2d(x, wt, b, h, w, 3).value();
  for (int o = 0; o < 3; ++o) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        double s = b.value()(o, 0);
        for (int c = 0; c < 2; ++c) {
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = y + dy, xc = xx + dx;
              if (yy < 0 || yy >= h || xc < 0 || xc >= w) continue;
              s += wt.value()(o, c * 9 + (dy + 1) * 3 + (dx + 1)) * x.value()(c, yy * w + xc);
            }
          }
        }
        EXPECT_NEAR(out(o, y * w + xx), s, 1e-12);
      }
    }
  }
  auto f = [&] { return contract(ag::conv2d(x, wt, b, h, w, 3)); };
  EXPECT_LT(gradient_error(x, f), kTol);
  EXPECT_LT(gradient_error(wt, f), kTol);
  EXPECT_LT(gradient_error(b, f), kTol);
}

TEST_F(AutogradTest, UpsamplePreservesConstantsAndDifferentiates) {
  auto c = ag::constant(Matrix::Constant(2, 9, 0.7));
  const Matrix up = ag::upsample2x(c, 3, 3).value();
  EXPECT_EQ(up.cols(), 36);
  EXPECT_TRUE((up.array() - 0.7).abs().maxCoeff() < 1e-15);
  auto x = p(2, 12);
  EXPECT_LT(gradient_error(x, [&] { return contract(ag::upsample2x(x, 3, 4)); }), kTol);
}

TEST_F(AutogradTest, TopKMean) {
  auto a = ag::parameter(Matrix{{0.1}, {0.9}, {0.4}, {0.7}});
  EXPECT_NEAR(ag::topk_mean(a, 2).scalar(), 0.8, 1e-15);
  EXPECT_LT(gradient_error(a, [&] { return ag::topk_mean(a, 2); }), kTol);
}

TEST_F(AutogradTest, BceClampsAndDifferentiates) {
  EXPECT_NEAR(ag::bce(ag::constant_scalar(0.5), 1).scalar(), std::log(2.0), 1e-15);
  EXPECT_TRUE(std::isfinite(ag::bce(ag::constant_scalar(0.0), 1).scalar()));
  auto prob = ag::parameter(Matrix::Constant(1, 1, 0.3));
  EXPECT_LT(gradient_error(prob, [&] { return ag::bce(prob, 0); }), kTol);
  EXPECT_LT(gradient_error(prob, [&] { return ag::bce(prob, 1); }), kTol);
}

TEST_F(AutogradTest, GradientsAccumulateAcrossGraphs) {
  auto a = ag::parameter(Matrix::Constant(1, 1, 2.0));
  ag::backward(ag::mul(a, a));
  ag::backward(ag::mul(a, a));
  EXPECT_DOUBLE_EQ(a.grad()(0, 0), 8.0);
  a.zero_grad();
  EXPECT_EQ(a.grad().size(), 0);
}

TEST_F(AutogradTest, ConstantsNeverReceiveGradient) {
  auto c = ag::constant(Matrix::Constant(2, 2, 1.0));
  auto a = p(2, 2);
  ag::backward(ag::sum(ag::mul(a, c)));
  EXPECT_FALSE(c.requires_grad());
  EXPECT_EQ(c.grad().size(), 0);
}

}  // namespace
