#pragma once

// Text-guided visual enhancement and the forgery-aware aggregator.

#include "vilaco/params.hpp"
#include "vilaco/types.hpp"

#include <random>

namespace vilaco {

struct ReasoningConfig {
  int heads = 4;
  int ffn_mult = 4;
};

struct ReasoningParams {
  Var wq, wk, wv, wo;  // (d, d): queries from patches, keys/values from text rows
  Var pool_score;      // (d, 1)
  Var ffn_w1, ffn_b1;  // (d, m*d), (1, m*d)
  Var ffn_w2;          // (m*d, d)

  static ReasoningParams init(int dim, const ReasoningConfig& cfg, std::mt19937_64& rng, ParamStore& store);
};

// F_spa + CrossAttn(F_spa -> text rows) Wo.
PatchFeatures text_guided_attention(const PatchFeatures& spa, const TextEmbedding& text, const ReasoningParams& p,
                                    const ReasoningConfig& cfg);

struct PoolResult {
  Var context;  // (1, d)
  Var weights;  // (n, 1), sums to one
};

PoolResult soft_attention_pool(const PatchFeatures& enh, const Var& score);

// FFN(agg + T) + agg + T, with agg broadcast to both class rows.
TextEmbedding forgery_aware_aggregate(const Var& agg, const TextEmbedding& text, const ReasoningParams& p);

}  // namespace vilaco
