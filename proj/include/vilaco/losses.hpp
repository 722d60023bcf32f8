#pragma once

#include "vilaco/heads.hpp"
#include "vilaco/types.hpp"

#include <random>
#include <vector>

namespace vilaco {

struct CPCConfig {
  double tau_fg = 0.7;
  double tau_bg = 0.3;
  double gamma = 0.1;
  int max_pairs = 256;
};

// Throws ConfigError unless 0 <= tau_bg < tau_fg <= 1, gamma > 0, max_pairs > 0.
void validate(const CPCConfig& cfg);

double bce(double prob, int label);

struct PatchPseudoLabels {
  std::vector<int> tampered;
  std::vector<int> authentic;
};

// (rows, cols) mean of the mask over each patch footprint.
Matrix patch_responses(const MaskPrediction& mask, int patch_size);

// response > tau_fg -> tampered, response < tau_bg -> authentic, else unlabeled.
PatchPseudoLabels pseudo_label_patches(const MaskPrediction& mask, int patch_size, const CPCConfig& cfg);
PatchPseudoLabels pseudo_label_patches(const Matrix& responses, const CPCConfig& cfg);

struct CpcResult {
  Var loss;          // (1, 1), zero when not valid
  bool valid = false;
  std::vector<std::pair<int, int>> pairs;  // (anchor, positive)
};

// Ordered same-type (anchor, positive) pairs: every pair when the total fits
// in max_pairs, otherwise max_pairs sampled with replacement, split evenly
// across the two types.
std::vector<std::pair<int, int>> positive_pairs(const PatchPseudoLabels& labels, int max_pairs, std::mt19937_64& rng);

// Mean over positive pairs of
//   -log( e^{s(a,p)/g} / (e^{s(a,p)/g} + sum_{k in opposite(a)} e^{s(a,k)/g}) )
// with s the cosine similarity. Needs >= 2 patches of each type.
CpcResult cpc_loss(const PatchFeatures& enh, const PatchPseudoLabels& labels, const CPCConfig& cfg,
                   std::mt19937_64& rng);

// coarse + fine + lambda * cpc, lambda in [0, 1).
Var total_loss(const Var& coarse, const Var& fine, const Var& cpc, double lambda);

}  // namespace vilaco
