#include "vilaco/model.hpp"

#include "vilaco/errors.hpp"

namespace vilaco {

namespace {

EncoderConfig checked(const EncoderConfig& cfg) {
  validate(cfg);
  return cfg;
}

}  // namespace

Model::Model(const ModelConfig& cfg)
    : cfg_(cfg), image_encoder_(checked(cfg.encoder)), text_encoder_(cfg.encoder) {
  if (image_encoder_.dim() != text_encoder_.dim()) throw ConfigError("image and text encoder widths differ");
  const int d = image_encoder_.dim();
  const int grid = image_encoder_.grid();
  validate(cfg_.adapter, grid, grid, d);
  validate(cfg_.cpc);
  effective_k(grid * grid, cfg_.coarse.k_ratio);

  image_encoder_.register_params(params_);
  text_encoder_.register_params(params_);
  std::mt19937_64 rng(cfg_.init_seed * 0xD1B54A32D192ED03ULL + 0x3003);
  adapter_ = AdapterParams::init(d, rng, params_);
  prompt_ = PromptState::init(cfg_.prompt_length, d, rng, params_);
  reasoning_ = ReasoningParams::init(d, cfg_.reasoning, rng, params_);
  coarse_ = CoarseHeadParams::init(d, rng, params_);
  decoder_ = DecoderParams::init(cfg_.encoder.patch_size, cfg_.decoder, rng, params_);
  sg_ = SGPoolParams::init(params_);
}

PatchFeatures Model::encode(const ImageTensor& img) const { return image_encoder_.encode(img); }

ForwardOutput Model::forward(const PatchFeatures& raw) const {
  if (raw.dim() != dim() || raw.rows != image_encoder_.grid() || raw.cols != image_encoder_.grid()) {
    throw ShapeError("forward: patch features do not match the encoder grid/width");
  }
  ForwardOutput out;
  out.spa = lgs_forward(raw, adapter_, cfg_.adapter);
  out.text_raw = text_features(prompt_, text_encoder_);
  out.enh = text_guided_attention(out.spa, out.text_raw, reasoning_, cfg_.reasoning);
  const auto pooled = soft_attention_pool(out.enh, reasoning_.pool_score);
  out.text_ta = forgery_aware_aggregate(pooled.context, out.text_raw, reasoning_);
  out.coarse = coarse_score(out.enh, coarse_, cfg_.coarse);
  out.mask = decode_mask(similarity_map(out.enh, out.text_ta), decoder_);
  out.fine_prob = sg_pool(out.mask, sg_);
  return out;
}

LossTerms Model::losses(const ForwardOutput& out, int label, double lambda, const LossSwitches& switches,
                        std::mt19937_64& rng) const {
  LossTerms t;
  t.coarse = ag::bce(out.coarse.prob, label);
  t.fine = ag::bce(out.fine_prob, label);
  t.cpc = ag::constant_scalar(0.0);
  if (label == 1) {
    auto labels = pseudo_label_patches(out.mask, patch_size(), cfg_.cpc);
    auto cpc = cpc_loss(out.enh, labels, cfg_.cpc, rng);
    t.cpc = cpc.loss;
    t.cpc_valid = cpc.valid;
  }
  const Var zero = ag::constant_scalar(0.0);
  t.total = total_loss(switches.coarse ? t.coarse : zero, switches.fine ? t.fine : zero,
                       switches.cpc ? t.cpc : zero, lambda);
  return t;
}

}  // namespace vilaco
