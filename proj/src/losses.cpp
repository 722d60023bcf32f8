#include "vilaco/losses.hpp"

#include "vilaco/errors.hpp"

#include <algorithm>
#include <cmath>

namespace vilaco {

namespace {

// Log-probability of the positive (column 0) against the anchor's negatives.
Var anchor_log_probs(const Var& unit, const std::vector<int>& anchors, const std::vector<int>& positives,
                     const std::vector<int>& negatives, double gamma) {
  auto a = ag::gather_rows(unit, anchors);
  auto p = ag::gather_rows(unit, positives);
  auto ones = ag::constant(Matrix::Ones(unit.cols(), 1));
  auto pos = ag::matmul(ag::mul(a, p), ones);
  auto neg = ag::matmul(a, ag::transpose(ag::gather_rows(unit, negatives)));
  const Var parts[] = {pos, neg};
  auto logits = ag::scale(ag::concat_cols(parts), 1.0 / gamma);
  return ag::slice_cols(ag::log_softmax_rows(logits), 0, 1);
}

void sample_pairs(const std::vector<int>& set, std::size_t count, bool all, std::mt19937_64& rng,
                  std::vector<std::pair<int, int>>& out) {
  if (all) {
    for (int a : set) {
      for (int b : set) {
        if (a != b) out.emplace_back(a, b);
      }
    }
    return;
  }
  std::uniform_int_distribution<std::size_t> pick(0, set.size() - 1);
  std::uniform_int_distribution<std::size_t> other(0, set.size() - 2);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t a = pick(rng);
    std::size_t b = other(rng);
    if (b >= a) ++b;
    out.emplace_back(set[a], set[b]);
  }
}

}  // namespace

void validate(const CPCConfig& cfg) {
  if (!(0.0 <= cfg.tau_bg && cfg.tau_bg < cfg.tau_fg && cfg.tau_fg <= 1.0)) {
    throw ConfigError("CPC thresholds must satisfy 0 <= tau_bg < tau_fg <= 1");
  }
  if (!(cfg.gamma > 0.0)) throw ConfigError("CPC temperature gamma must be positive");
  if (cfg.max_pairs <= 0) throw ConfigError("CPC max_pairs must be positive");
}

double bce(double prob, int label) {
  const double p = std::clamp(prob, 1e-7, 1.0 - 1e-7);
  return label ? -std::log(p) : -std::log(1.0 - p);
}

Matrix patch_responses(const MaskPrediction& mask, int patch_size) {
  if (patch_size <= 0 || mask.height % patch_size != 0 || mask.width % patch_size != 0) {
    throw ShapeError("patch_responses: patch size does not tile the mask");
  }
  const int rows = mask.height / patch_size;
  const int cols = mask.width / patch_size;
  const auto& m = mask.mask.value();
  Matrix out = Matrix::Zero(rows, cols);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      out(y / patch_size, x / patch_size) += m(0, static_cast<Eigen::Index>(y) * mask.width + x);
    }
  }
  return out / static_cast<double>(patch_size * patch_size);
}

PatchPseudoLabels pseudo_label_patches(const Matrix& responses, const CPCConfig& cfg) {
  validate(cfg);
  PatchPseudoLabels labels;
  for (Eigen::Index i = 0; i < responses.size(); ++i) {
    const double r = responses.data()[i];
    if (r > cfg.tau_fg) {
      labels.tampered.push_back(static_cast<int>(i));
    } else if (r < cfg.tau_bg) {
      labels.authentic.push_back(static_cast<int>(i));
    }
  }
  return labels;
}

PatchPseudoLabels pseudo_label_patches(const MaskPrediction& mask, int patch_size, const CPCConfig& cfg) {
  return pseudo_label_patches(patch_responses(mask, patch_size), cfg);
}

std::vector<std::pair<int, int>> positive_pairs(const PatchPseudoLabels& labels, int max_pairs,
                                                std::mt19937_64& rng) {
  const std::size_t nt = labels.tampered.size();
  const std::size_t na = labels.authentic.size();
  std::vector<std::pair<int, int>> pairs;
  if (nt < 2 || na < 2) return pairs;
  const std::size_t full_t = nt * (nt - 1);
  const std::size_t full_a = na * (na - 1);
  const auto cap = static_cast<std::size_t>(max_pairs);
  if (full_t + full_a <= cap) {
    sample_pairs(labels.tampered, full_t, true, rng, pairs);
    sample_pairs(labels.authentic, full_a, true, rng, pairs);
    return pairs;
  }
  std::size_t budget_t = std::min(full_t, cap / 2);
  const std::size_t budget_a = std::min(full_a, cap - budget_t);
  budget_t = std::min(full_t, cap - budget_a);
  sample_pairs(labels.tampered, budget_t, budget_t == full_t, rng, pairs);
  sample_pairs(labels.authentic, budget_a, budget_a == full_a, rng, pairs);
  return pairs;
}

CpcResult cpc_loss(const PatchFeatures& enh, const PatchPseudoLabels& labels, const CPCConfig& cfg,
                   std::mt19937_64& rng) {
  validate(cfg);
  for (int i : labels.tampered) {
    if (i < 0 || i >= enh.n()) throw ShapeError("cpc_loss: tampered index out of range");
  }
  for (int i : labels.authentic) {
    if (i < 0 || i >= enh.n()) throw ShapeError("cpc_loss: authentic index out of range");
  }
  CpcResult result;
  result.pairs = positive_pairs(labels, cfg.max_pairs, rng);
  if (result.pairs.empty()) {
    result.loss = ag::constant_scalar(0.0);
    return result;
  }
  std::vector<char> is_tampered(static_cast<std::size_t>(enh.n()), 0);
  for (int i : labels.tampered) is_tampered[static_cast<std::size_t>(i)] = 1;

  std::vector<int> ta, tp, aa, ap;
  for (const auto& [a, p] : result.pairs) {
    if (is_tampered[static_cast<std::size_t>(a)]) {
      ta.push_back(a);
      tp.push_back(p);
    } else {
      aa.push_back(a);
      ap.push_back(p);
    }
  }
  auto unit = ag::l2_normalize_rows(enh.data);
  std::vector<Var> terms;
  if (!ta.empty()) terms.push_back(anchor_log_probs(unit, ta, tp, labels.authentic, cfg.gamma));
  if (!aa.empty()) terms.push_back(anchor_log_probs(unit, aa, ap, labels.tampered, cfg.gamma));
  auto all = ag::concat_rows(terms);
  result.loss = ag::neg(ag::mean(all));
  result.valid = true;
  return result;
}

Var total_loss(const Var& coarse, const Var& fine, const Var& cpc, double lambda) {
  if (!(lambda >= 0.0 && lambda < 1.0)) throw InputError("lambda_ccs must lie in [0, 1)");
  return ag::add(ag::add(coarse, fine), ag::scale(cpc, lambda));
}

}  // namespace vilaco
