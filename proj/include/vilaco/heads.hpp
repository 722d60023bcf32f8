#pragma once

// Coarse (top-K patch pooling) and fine (similarity map -> mask decoder ->
// soft-gated pooling) prediction heads.

#include "vilaco/params.hpp"
#include "vilaco/types.hpp"

#include <filesystem>
#include <random>
#include <vector>

namespace vilaco {

struct CoarseHeadConfig {
  double k_ratio = 0.1;
};

// max(1, ceil(k_ratio * n)); throws ConfigError unless 0 < k_ratio <= 1.
int effective_k(int n, double k_ratio);

struct CoarseHeadParams {
  Var weight;  // (d, 1)
  Var bias;    // (1, 1)

  static CoarseHeadParams init(int dim, std::mt19937_64& rng, ParamStore& store);
};

struct CoarseOutput {
  Var prob;         // (1, 1)
  Var patch_probs;  // (n, 1)
};

CoarseOutput coarse_score(const PatchFeatures& enh, const CoarseHeadParams& p, const CoarseHeadConfig& cfg);

// (1, rows*cols) single-channel map, (s_fake - s_real) / sqrt(d).
struct PatchMap {
  Var values;
  int rows = 0;
  int cols = 0;
};

PatchMap similarity_map(const PatchFeatures& enh, const TextEmbedding& text);

struct DecoderConfig {
  int channels = 8;
  double init_prior = 0.1;  // initial mask level; the output bias starts at logit(init_prior)
};

struct DecoderParams {
  std::vector<Var> conv_weight;  // stage s: (C, c_in * 9)
  std::vector<Var> conv_bias;    // (C, 1)
  Var out_weight;                // (1, C), 1x1 conv
  Var out_bias;                  // (1, 1)

  int stages() const { return static_cast<int>(conv_weight.size()); }

  // log2(patch_size) stages; throws ConfigError unless patch_size is a power of two.
  static DecoderParams init(int patch_size, const DecoderConfig& cfg, std::mt19937_64& rng, ParamStore& store);
};

struct MaskPrediction {
  Var mask;      // (1, height*width), sigmoid output
  PatchMap patch_map;
  int height = 0;
  int width = 0;

  double at(int y, int x) const { return mask.value()(0, static_cast<Eigen::Index>(y) * width + x); }
};

MaskPrediction decode_mask(const PatchMap& map, const DecoderParams& p);

struct SGPoolParams {
  static constexpr double kMinTemp = 1e-3;
  static constexpr double kEps = 1e-8;

  Var theta;  // (1, 1), init 0.5
  Var temp;   // (1, 1), init 0.1, projected to >= kMinTemp

  static SGPoolParams init(ParamStore& store);
  void project() const;
};

// sum(g * M) / (sum(g) + eps), g = sigmoid((M - theta) / temp).
Var sg_pool(const MaskPrediction& mask, const SGPoolParams& p);
Var sg_pool(const Var& mask, const SGPoolParams& p);

// 8-bit grayscale PNG, value = round(255 * M).
void write_mask_png(const std::filesystem::path& path, const MaskPrediction& mask);

}  // namespace vilaco
