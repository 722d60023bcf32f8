#include "vilaco/heads.hpp"

#include "vilaco/errors.hpp"

#include <opencv2/imgcodecs.hpp>

#include <cmath>

namespace vilaco {

int effective_k(int n, double k_ratio) {
  if (!(k_ratio > 0.0 && k_ratio <= 1.0)) throw ConfigError("k_ratio must lie in (0, 1]");
  if (n < 1) throw ShapeError("coarse head needs at least one patch");
  const int k = static_cast<int>(std::ceil(k_ratio * n - 1e-9));
  return std::clamp(k, 1, n);
}

CoarseHeadParams CoarseHeadParams::init(int dim, std::mt19937_64& rng, ParamStore& store) {
  CoarseHeadParams p;
  p.weight = store.add_trainable("coarse.weight", "coarse", random_normal(rng, dim, 1, 1.0 / std::sqrt(1.0 * dim)));
  p.bias = store.add_trainable("coarse.bias", "coarse", Matrix::Zero(1, 1));
  return p;
}

CoarseOutput coarse_score(const PatchFeatures& enh, const CoarseHeadParams& p, const CoarseHeadConfig& cfg) {
  const int n = enh.n();
  const int k = effective_k(n, cfg.k_ratio);
  auto logits = ag::add(ag::matmul(enh.data, p.weight), ag::broadcast(p.bias, n, 1));
  auto probs = ag::sigmoid(logits);
  return {ag::topk_mean(probs, k), probs};
}

PatchMap similarity_map(const PatchFeatures& enh, const TextEmbedding& text) {
  if (text.per_class.rows() != 2 || text.per_class.cols() != enh.data.cols()) {
    throw ShapeError("similarity_map: text embedding must be (2, d)");
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(enh.dim()));
  const int real = 0;
  const int fake = 1;
  auto contrast = ag::sub(ag::gather_rows(text.per_class, std::span(&fake, 1)),
                          ag::gather_rows(text.per_class, std::span(&real, 1)));
  auto s = ag::scale(ag::matmul(contrast, ag::transpose(enh.data)), inv);
  return {s, enh.rows, enh.cols};
}

DecoderParams DecoderParams::init(int patch_size, const DecoderConfig& cfg, std::mt19937_64& rng,
                                  ParamStore& store) {
  if (patch_size < 2 || (patch_size & (patch_size - 1)) != 0) {
    throw ConfigError("mask decoder needs a power-of-two patch size, got " + std::to_string(patch_size));
  }
  if (cfg.channels <= 0) throw ConfigError("decoder channels must be positive");
  if (!(cfg.init_prior > 0.0 && cfg.init_prior < 1.0)) throw ConfigError("decoder init_prior must lie in (0, 1)");
  const int stages = static_cast<int>(std::lround(std::log2(patch_size)));
  DecoderParams p;
  for (int s = 0; s < stages; ++s) {
    const int cin = s == 0 ? 1 : cfg.channels;
    const std::string name = "decoder.stage" + std::to_string(s);
    p.conv_weight.push_back(store.add_trainable(name + ".weight", "decoder",
                                                random_normal(rng, cfg.channels, cin * 9, std::sqrt(2.0 / (cin * 9)))));
    p.conv_bias.push_back(store.add_trainable(name + ".bias", "decoder", Matrix::Zero(cfg.channels, 1)));
  }
  Matrix out = random_normal(rng, 1, cfg.channels, 1.0 / std::sqrt(1.0 * cfg.channels)).cwiseAbs();
  p.out_weight = store.add_trainable("decoder.out.weight", "decoder", out);
  const double logit = std::log(cfg.init_prior / (1.0 - cfg.init_prior));
  p.out_bias = store.add_trainable("decoder.out.bias", "decoder", Matrix::Constant(1, 1, logit));
  return p;
}

MaskPrediction decode_mask(const PatchMap& map, const DecoderParams& p) {
  if (map.values.rows() != 1 || map.values.cols() != static_cast<Eigen::Index>(map.rows) * map.cols) {
    throw ShapeError("decode_mask: patch map is not a single-channel grid");
  }
  if (map.rows << p.stages() != kImageSize || map.cols << p.stages() != kImageSize) {
    throw ConfigError("decode_mask: " + std::to_string(p.stages()) + " upsampling stages do not take a " +
                      std::to_string(map.rows) + "x" + std::to_string(map.cols) + " grid to " +
                      std::to_string(kImageSize));
  }
  Var x = map.values;
  int h = map.rows;
  int w = map.cols;
  for (int s = 0; s < p.stages(); ++s) {
    x = ag::gelu(ag::conv2d(x, p.conv_weight[static_cast<std::size_t>(s)], p.conv_bias[static_cast<std::size_t>(s)],
                            h, w, 3));
    x = ag::upsample2x(x, h, w);
    h *= 2;
    w *= 2;
  }
  x = ag::conv2d(x, p.out_weight, p.out_bias, h, w, 1);
  return {ag::sigmoid(x), map, h, w};
}

SGPoolParams SGPoolParams::init(ParamStore& store) {
  SGPoolParams p;
  p.theta = store.add_trainable("sg_pool.theta", "sg_pool", Matrix::Constant(1, 1, 0.5));
  p.temp = store.add_trainable("sg_pool.temp", "sg_pool", Matrix::Constant(1, 1, 0.1));
  return p;
}

void SGPoolParams::project() const {
  auto& node = *temp.node();
  if (node.value(0, 0) < kMinTemp) node.value(0, 0) = kMinTemp;
}

Var sg_pool(const Var& mask, const SGPoolParams& p) {
  const auto r = mask.rows();
  const auto c = mask.cols();
  const Var temp = p.temp.scalar() < SGPoolParams::kMinTemp ? ag::constant_scalar(SGPoolParams::kMinTemp) : p.temp;
  auto z = ag::div(ag::sub(mask, ag::broadcast(p.theta, r, c)), ag::broadcast(temp, r, c));
  auto gate = ag::sigmoid(z);
  auto num = ag::sum(ag::mul(gate, mask));
  auto den = ag::add_scalar(ag::sum(gate), SGPoolParams::kEps);
  return ag::div(num, den);
}

Var sg_pool(const MaskPrediction& mask, const SGPoolParams& p) { return sg_pool(mask.mask, p); }

void write_mask_png(const std::filesystem::path& path, const MaskPrediction& mask) {
  cv::Mat img(mask.height, mask.width, CV_8UC1);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const double v = std::clamp(mask.at(y, x), 0.0, 1.0);
      img.at<unsigned char>(y, x) = static_cast<unsigned char>(std::lround(255.0 * v));
    }
  }
  if (!cv::imwrite(path.string(), img)) throw IoError("cannot write mask: " + path.string());
}

}  // namespace vilaco
