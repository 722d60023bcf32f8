#pragma once

#include "vilaco/backbone.hpp"
#include "vilaco/params.hpp"
#include "vilaco/types.hpp"

#include <array>
#include <random>

namespace vilaco {

// Shared learnable context c_1..c_l with the frozen class token inserted at
// index l/2. Both classes consume the same context tensor.
struct PromptState {
  Var context;  // (l, d), trainable
  std::array<TokenId, 2> class_ids{kRealToken, kFakeToken};

  int length() const { return static_cast<int>(context.rows()); }

  // Throws ConfigError for odd l.
  static PromptState init(int context_length, int dim, std::mt19937_64& rng, ParamStore& store);
};

// [c_1..c_{l/2}, e(cls), c_{l/2+1}..c_l] + positional[0..l].
TokenSequence build_prompt(const PromptState& state, const TextEncoder& encoder, TokenId cls);

// (2, d) embeddings ordered [real, fake].
TextEmbedding text_features(const PromptState& state, const TextEncoder& encoder);

}  // namespace vilaco
