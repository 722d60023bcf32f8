#pragma once

// Full forward pipeline: frozen encoders -> adapter -> prompt text features
// -> text-guided reasoning -> coarse and fine heads.

#include "vilaco/backbone.hpp"
#include "vilaco/heads.hpp"
#include "vilaco/lgs_adapter.hpp"
#include "vilaco/losses.hpp"
#include "vilaco/params.hpp"
#include "vilaco/prompting.hpp"
#include "vilaco/reasoning.hpp"

#include <cstdint>
#include <random>

namespace vilaco {

struct ModelConfig {
  EncoderConfig encoder;
  AdapterConfig adapter;
  int prompt_length = 8;
  ReasoningConfig reasoning;
  CoarseHeadConfig coarse;
  DecoderConfig decoder;
  CPCConfig cpc;
  std::uint64_t init_seed = 0;  // trainable-parameter initialisation
};

struct ForwardOutput {
  PatchFeatures spa;
  PatchFeatures enh;
  TextEmbedding text_raw;
  TextEmbedding text_ta;
  CoarseOutput coarse;
  MaskPrediction mask;
  Var fine_prob;  // (1, 1)
};

// Which loss terms participate (ablations switch terms off).
struct LossSwitches {
  bool coarse = true;
  bool fine = true;
  bool cpc = true;
};

struct LossTerms {
  Var coarse;
  Var fine;
  Var cpc;
  Var total;
  bool cpc_valid = false;
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  // Frozen image encoder; a pure function of the image and encoder seed.
  PatchFeatures encode(const ImageTensor& img) const;

  ForwardOutput forward(const PatchFeatures& raw) const;
  ForwardOutput forward(const ImageTensor& img) const { return forward(encode(img)); }

  // Per-image objective. CPC is only formed for label 1 images.
  LossTerms losses(const ForwardOutput& out, int label, double lambda, const LossSwitches& switches,
                   std::mt19937_64& rng) const;

  const ModelConfig& config() const { return cfg_; }
  int dim() const { return image_encoder_.dim(); }
  int patch_size() const { return cfg_.encoder.patch_size; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const SGPoolParams& sg_params() const { return sg_; }
  const PromptState& prompt() const { return prompt_; }
  const TextEncoder& text_encoder() const { return text_encoder_; }
  const ImageEncoder& image_encoder() const { return image_encoder_; }
  const AdapterParams& adapter() const { return adapter_; }
  const ReasoningParams& reasoning() const { return reasoning_; }
  const CoarseHeadParams& coarse_head() const { return coarse_; }
  const DecoderParams& decoder() const { return decoder_; }

 private:
  ModelConfig cfg_;
  ImageEncoder image_encoder_;
  TextEncoder text_encoder_;
  ParamStore params_;
  AdapterParams adapter_;
  PromptState prompt_;
  ReasoningParams reasoning_;
  CoarseHeadParams coarse_;
  DecoderParams decoder_;
  SGPoolParams sg_;
};

}  // namespace vilaco
