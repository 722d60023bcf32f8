#include "test_util.hpp"

#include "vilaco/backbone.hpp"
#include "vilaco/errors.hpp"

#include <filesystem>

using namespace vilaco;
using vilaco::testing::gradient_error;
using vilaco::testing::random_image;

namespace {

EncoderConfig small(int patch = 32, int dim = 8) {
  EncoderConfig cfg;
  cfg.patch_size = patch;
  cfg.dim = dim;
  cfg.heads = 2;
  return cfg;
}

TEST(Backbone, TokenizeFixedTable) {
  EXPECT_EQ(tokenize_label("real"), 0);
  EXPECT_EQ(tokenize_label("fake"), 1);
  EXPECT_THROW(tokenize_label("Fake"), InputError);
  EXPECT_THROW(tokenize_label(""), InputError);
}

TEST(Backbone, PatchCountMatchesGrid) {
  std::mt19937_64 rng(3);
  const auto img = random_image(rng);
  for (int p : {8, 16, 32}) {
    ImageEncoder enc(small(p));
    const auto f = enc.encode(img);
    EXPECT_EQ(f.rows, 256 / p);
    EXPECT_EQ(f.cols, 256 / p);
    EXPECT_EQ(f.data.rows(), (256 / p) * (256 / p));
    EXPECT_EQ(f.dim(), 8);
    EXPECT_TRUE(f.data.value().allFinite());
  }
}

TEST(Backbone, RejectsBadPatchSize) {
  EXPECT_THROW(ImageEncoder(small(24)), ConfigError);
  EXPECT_THROW(ImageEncoder(small(0)), ConfigError);
  EXPECT_THROW(ImageEncoder(small(32, 7)), ConfigError);
}

TEST(Backbone, StubIsPureFunctionOfInputAndSeed) {
  std::mt19937_64 rng(4);
  const auto img = random_image(rng);
  auto cfg = small();
  const Matrix a = ImageEncoder(cfg).encode(img).data.value();
  const Matrix b = ImageEncoder(cfg).encode(img).data.value();
  EXPECT_EQ(a, b);
  cfg.seed = 1;
  EXPECT_NE(a, ImageEncoder(cfg).encode(img).data.value());
}

TEST(Backbone, EncoderOutputsAreConstants) {
  std::mt19937_64 rng(5);
  ImageEncoder enc(small());
  EXPECT_FALSE(enc.encode(random_image(rng)).data.requires_grad());
  ParamStore store;
  enc.register_params(store);
  TextEncoder(small()).register_params(store);
  EXPECT_TRUE(store.trainable().empty());
  EXPECT_FALSE(store.entries().empty());
}

TEST(Backbone, TextEncoderSeparatesClasses) {
  TextEncoder enc(small());
  TokenSequence real{ag::add(enc.class_embedding(kRealToken), enc.positional(1)), 0};
  TokenSequence fake{ag::add(enc.class_embedding(kFakeToken), enc.positional(1)), 0};
  const Matrix r = enc.encode(real).value();
  const Matrix f = enc.encode(fake).value();
  EXPECT_EQ(r.rows(), 1);
  EXPECT_EQ(r.cols(), 8);
  EXPECT_GT((r - f).norm(), 1e-6);
}

TEST(Backbone, TextGradientMatchesFiniteDifferences) {
  TextEncoder enc(small());
  std::mt19937_64 rng(6);
  auto ctx = ag::parameter(vilaco::testing::random_matrix(rng, 5, 8, 0.1));
  auto weights = ag::constant(vilaco::testing::random_matrix(rng, 1, 8));
  auto f = [&] {
    TokenSequence seq{ag::add(ctx, enc.positional(5)), 2};
    return ag::sum(ag::mul(enc.encode(seq), weights));
  };
  EXPECT_LT(gradient_error(ctx, f, 0, 1, 1e-5), 1e-4);
}

TEST(Backbone, TextEncoderRejectsBadSequences) {
  TextEncoder enc(small());
  EXPECT_THROW(enc.positional(TextEncoder::kMaxTokens + 1), InputError);
  EXPECT_THROW(enc.encode({ag::constant(Matrix::Zero(3, 8)), 5}), InputError);
}

TEST(Backbone, ResampleGridIdentityAndConstant) {
  std::mt19937_64 rng(7);
  const Matrix f = vilaco::testing::random_matrix(rng, 16, 3);
  EXPECT_TRUE(resample_grid(f, 4, 4, 4, 4).isApprox(f, 1e-14));
  const Matrix c = Matrix::Constant(16, 3, 0.25);
  const Matrix up = resample_grid(c, 4, 4, 8, 8);
  EXPECT_EQ(up.rows(), 64);
  EXPECT_LT((up.array() - 0.25).abs().maxCoeff(), 1e-14);
}

TEST(Backbone, PretrainedBackendRoundTripsAndResamples) {
  const auto dir = std::filesystem::temp_directory_path() / "vilaco_backbone_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "encoder.bin";
  auto cfg = small(32);
  ImageEncoder image(cfg);
  TextEncoder text(cfg);
  export_encoder_weights(path, image, text);

  EncoderConfig pre = cfg;
  pre.backend = Backend::Pretrained;
  pre.weights_path = path.string();
  pre.dim = 999;  // ignored: width comes from the file
  std::mt19937_64 rng(8);
  const auto img = random_image(rng);
  ImageEncoder loaded(pre);
  EXPECT_EQ(loaded.dim(), 8);
  EXPECT_EQ(loaded.encode(img).data.value(), image.encode(img).data.value());

  pre.patch_size = 16;
  const auto fine = ImageEncoder(pre).encode(img);
  EXPECT_EQ(fine.rows, 16);
  EXPECT_EQ(fine.data.rows(), 256);

  TextEncoder loaded_text(pre);
  EXPECT_EQ(loaded_text.class_embedding(kFakeToken).value(), text.class_embedding(kFakeToken).value());
  std::filesystem::remove_all(dir);
}

TEST(Backbone, PretrainedBackendNeedsWeights) {
  auto cfg = small();
  cfg.backend = Backend::Pretrained;
  EXPECT_THROW(ImageEncoder{cfg}, ConfigError);
  cfg.weights_path = "/nonexistent/weights.bin";
  EXPECT_THROW(ImageEncoder{cfg}, IoError);
}

TEST(Backbone, RejectsInvalidImages) {
  ImageEncoder enc(small());
  ImageTensor bad(128, 128);
  EXPECT_THROW(enc.encode(bad), InputError);
  std::mt19937_64 rng(9);
  auto img = random_image(rng);
  img.at(0, 0, 0) = 1.5f;
  EXPECT_THROW(enc.encode(img), InputError);
}

}  // namespace
