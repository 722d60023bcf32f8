#include "test_util.hpp"

#include "vilaco/errors.hpp"
#include "vilaco/prompting.hpp"

using namespace vilaco;
using vilaco::testing::gradient_error;

namespace {

struct PromptFixture : ::testing::Test {
  EncoderConfig enc_cfg = [] {
    EncoderConfig c;
    c.dim = 8;
    c.heads = 2;
    return c;
  }();
  TextEncoder encoder{enc_cfg};
  std::mt19937_64 rng{31};
  ParamStore store;
};

TEST_F(PromptFixture, ClassTokenSitsAtCentre) {
  for (int l : {0, 2, 8, 16}) {
    ParamStore fresh;
    auto state = PromptState::init(l, 8, rng, fresh);
    const auto seq = build_prompt(state, encoder, kFakeToken);
    EXPECT_EQ(seq.tokens.rows(), l + 1);
    EXPECT_EQ(seq.class_index, l / 2);
    const Matrix expect = encoder.class_embedding(kFakeToken).value() +
                          encoder.positional(l + 1).value().row(l / 2);
    EXPECT_EQ(seq.tokens.value().row(l / 2), expect.row(0));
  }
}

TEST_F(PromptFixture, OddLengthRejected) {
  EXPECT_THROW(PromptState::init(7, 8, rng, store), ConfigError);
  auto state = PromptState::init(8, 8, rng, store);
  state.context = ag::parameter(Matrix::Zero(3, 8));
  EXPECT_THROW(build_prompt(state, encoder, kRealToken), ConfigError);
}

TEST_F(PromptFixture, ClassPromptsDifferOnlyAtCentre) {
  auto state = PromptState::init(8, 8, rng, store);
  const Matrix r = build_prompt(state, encoder, kRealToken).tokens.value();
  const Matrix f = build_prompt(state, encoder, kFakeToken).tokens.value();
  for (int i = 0; i < 9; ++i) {
    if (i == 4) {
      EXPECT_NE(r.row(i), f.row(i));
    } else {
      EXPECT_EQ(r.row(i), f.row(i));
    }
  }
}

TEST_F(PromptFixture, ContextOnlyPromptIsValid) {
  auto state = PromptState::init(0, 8, rng, store);
  const auto t = text_features(state, encoder);
  EXPECT_EQ(t.per_class.rows(), 2);
  EXPECT_TRUE(t.per_class.value().allFinite());
}

TEST_F(PromptFixture, SharedContextMovesBothRows) {
  auto state = PromptState::init(8, 8, rng, store);
  const Matrix before = text_features(state, encoder).per_class.value();
  state.context.mutable_value()(1, 3) += 0.5;
  const Matrix after = text_features(state, encoder).per_class.value();
  EXPECT_GT((after.row(0) - before.row(0)).norm(), 1e-9);
  EXPECT_GT((after.row(1) - before.row(1)).norm(), 1e-9);
}

TEST_F(PromptFixture, ContextGradientMatchesFiniteDifferences) {
  auto state = PromptState::init(8, 8, rng, store);
  auto weights = ag::constant(vilaco::testing::random_matrix(rng, 2, 8));
  auto f = [&] { return ag::sum(ag::mul(text_features(state, encoder).per_class, weights)); };
  EXPECT_LT(gradient_error(state.context, f), 1e-3);
}

TEST_F(PromptFixture, OnlyContextIsTrainable) {
  auto state = PromptState::init(8, 8, rng, store);
  encoder.register_params(store);
  ASSERT_EQ(store.trainable().size(), 1u);
  EXPECT_EQ(store.trainable()[0]->name, "prompt.context");
  auto t = text_features(state, encoder);
  ag::backward(ag::sum(t.per_class));
  EXPECT_EQ(encoder.class_embedding(kRealToken).grad().size(), 0);
}

}  // namespace
