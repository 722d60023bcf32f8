#include "vilaco/prompting.hpp"

#include "vilaco/errors.hpp"

#include <vector>

namespace vilaco {

PromptState PromptState::init(int context_length, int dim, std::mt19937_64& rng, ParamStore& store) {
  if (context_length < 0 || context_length % 2 != 0) {
    throw ConfigError("prompt context length must be even, got " + std::to_string(context_length));
  }
  PromptState s;
  // CoOp-style N(0, 0.02) context init.
  s.context = store.add_trainable("prompt.context", "prompt", random_normal(rng, context_length, dim, 0.02));
  return s;
}

TokenSequence build_prompt(const PromptState& state, const TextEncoder& encoder, TokenId cls) {
  const int l = state.length();
  if (l % 2 != 0) throw ConfigError("prompt context length must be even");
  if (state.context.cols() != encoder.dim()) throw ShapeError("prompt context width differs from text encoder");
  const int half = l / 2;
  std::vector<Var> parts;
  if (half > 0) parts.push_back(ag::slice_rows(state.context, 0, half));
  parts.push_back(encoder.class_embedding(cls));
  if (half > 0) parts.push_back(ag::slice_rows(state.context, half, half));
  auto tokens = ag::add(ag::concat_rows(parts), encoder.positional(l + 1));
  return {tokens, half};
}

TextEmbedding text_features(const PromptState& state, const TextEncoder& encoder) {
  const Var rows[] = {encoder.encode(build_prompt(state, encoder, state.class_ids[0])),
                      encoder.encode(build_prompt(state, encoder, state.class_ids[1]))};
  return {ag::concat_rows(rows), false};
}

}  // namespace vilaco
