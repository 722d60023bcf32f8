#include "vilaco/reasoning.hpp"

#include "vilaco/errors.hpp"

#include <cmath>
#include <numeric>
#include <vector>

namespace vilaco {

ReasoningParams ReasoningParams::init(int dim, const ReasoningConfig& cfg, std::mt19937_64& rng,
                                      ParamStore& store) {
  if (cfg.heads <= 0 || dim % cfg.heads != 0) throw ConfigError("reasoning width not divisible by heads");
  if (cfg.ffn_mult <= 0) throw ConfigError("ffn_mult must be positive");
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  const int hidden = cfg.ffn_mult * dim;
  ReasoningParams p;
  p.wq = store.add_trainable("reasoning.wq", "reasoning", random_normal(rng, dim, dim, s));
  p.wk = store.add_trainable("reasoning.wk", "reasoning", random_normal(rng, dim, dim, s));
  p.wv = store.add_trainable("reasoning.wv", "reasoning", random_normal(rng, dim, dim, s));
  p.wo = store.add_trainable("reasoning.wo", "reasoning", random_normal(rng, dim, dim, 0.1 * s));
  p.pool_score = store.add_trainable("reasoning.pool_score", "reasoning", random_normal(rng, dim, 1, s));
  p.ffn_w1 = store.add_trainable("reasoning.ffn_w1", "reasoning", random_normal(rng, dim, hidden, s));
  p.ffn_b1 = store.add_trainable("reasoning.ffn_b1", "reasoning", Matrix::Zero(1, hidden));
  p.ffn_w2 = store.add_trainable("reasoning.ffn_w2", "reasoning",
                                 random_normal(rng, hidden, dim, 0.1 / std::sqrt(static_cast<double>(hidden))));
  return p;
}

PatchFeatures text_guided_attention(const PatchFeatures& spa, const TextEmbedding& text, const ReasoningParams& p,
                                    const ReasoningConfig& cfg) {
  if (text.per_class.cols() != spa.data.cols() || p.wq.rows() != spa.data.cols()) {
    throw ConfigError("text/visual feature widths differ");
  }
  ag::AttentionGroup group;
  group.queries.resize(static_cast<std::size_t>(spa.n()));
  std::iota(group.queries.begin(), group.queries.end(), 0);
  group.keys.resize(static_cast<std::size_t>(text.per_class.rows()));
  std::iota(group.keys.begin(), group.keys.end(), 0);
  auto a = ag::attention(ag::matmul(spa.data, p.wq), ag::matmul(text.per_class, p.wk),
                         ag::matmul(text.per_class, p.wv), cfg.heads, std::span(&group, 1));
  return {ag::add(spa.data, ag::matmul(a, p.wo)), spa.rows, spa.cols};
}

PoolResult soft_attention_pool(const PatchFeatures& enh, const Var& score) {
  if (enh.n() < 1) throw ShapeError("soft_attention_pool: no patches");
  if (!enh.data.value().allFinite()) throw NumericalError("soft_attention_pool: non-finite features");
  // Softmax over patches: scores as a (1, n) row.
  auto alpha_row = ag::softmax_rows(ag::transpose(ag::matmul(enh.data, score)));
  return {ag::matmul(alpha_row, enh.data), ag::transpose(alpha_row)};
}

TextEmbedding forgery_aware_aggregate(const Var& agg, const TextEmbedding& text, const ReasoningParams& p) {
  const auto rows = text.per_class.rows();
  if (agg.rows() != 1 || agg.cols() != text.per_class.cols()) {
    throw ShapeError("forgery_aware_aggregate: context/text width mismatch");
  }
  auto fused = ag::add(ag::broadcast(agg, rows, agg.cols()), text.per_class);
  auto h = ag::gelu(ag::add(ag::matmul(fused, p.ffn_w1), ag::broadcast(p.ffn_b1, rows, p.ffn_w1.cols())));
  // No output bias: it would shift both class rows alike and cancel in the
  // fake-minus-real similarity map, leaving a parameter with zero gradient.
  auto ffn = ag::matmul(h, p.ffn_w2);
  return {ag::add(ffn, fused), false};
}

}  // namespace vilaco
