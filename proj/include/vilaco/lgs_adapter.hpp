#pragma once

// Local-global spatial adapter: two windowed self-attention passes (plain
// and shifted partition) followed by graph propagation over a cosine
// similarity adjacency and a spatial distance adjacency, with a residual
// back to the frozen features.

#include "vilaco/params.hpp"
#include "vilaco/types.hpp"

#include <random>
#include <vector>

namespace vilaco {

struct AdapterConfig {
  int window = 8;         // patches per window side
  int shift = -1;         // < 0 means window / 2
  int heads = 4;
  double sigma_dist = -1; // <= 0 means grid side / 4

  int effective_shift() const { return shift < 0 ? window / 2 : shift; }
  double effective_sigma(int grid_side) const { return sigma_dist > 0 ? sigma_dist : grid_side / 4.0; }
};

// Throws ConfigError unless window divides the grid side, 0 <= shift < window
// and the feature width splits evenly across heads.
void validate(const AdapterConfig& cfg, int grid_rows, int grid_cols, int dim);

struct WindowAttentionParams {
  Var wq, wk, wv, wo;  // (d, d) each
};

struct AdapterParams {
  WindowAttentionParams plain;
  WindowAttentionParams shifted;
  Var gcn_weight;  // (2d, d)

  static AdapterParams init(int dim, std::mt19937_64& rng, ParamStore& store);
};

struct AdjacencyPair {
  Var similarity;   // (n, n) cosine logits
  Matrix distance;  // (n, n) -||pos_i - pos_j|| / sigma
  Matrix distance_weights;  // row softmax of `distance`, optional
  int zero_norm_rows = 0;
};

// Token index sets for a window partition whose boundaries sit at
// shift, shift + window, ... along each axis; border windows are partial.
std::vector<std::vector<int>> window_partition(int rows, int cols, int window, int shift);

// One residual windowed-attention pass: x + Attn_window(x) Wo.
PatchFeatures window_attention_pass(const PatchFeatures& x, const WindowAttentionParams& p, int window,
                                    int shift, int heads);

// Plain pass then shifted pass.
PatchFeatures local_attention(const PatchFeatures& raw, const AdapterParams& params, const AdapterConfig& cfg);

AdjacencyPair build_adjacencies(const PatchFeatures& local, const AdapterConfig& cfg);

// Pure function of the grid; shared by build_adjacencies and its callers.
Matrix distance_logits(int rows, int cols, double sigma);

// GELU([softmax(H_sim) X ; softmax(H_dis) X] W), concatenated on the feature axis.
PatchFeatures gcn_propagate(const PatchFeatures& local, const AdjacencyPair& adj, const Var& weight);

// Full adapter with residual: gcn_propagate(...) + raw.
PatchFeatures lgs_forward(const PatchFeatures& raw, const AdapterParams& params, const AdapterConfig& cfg);

}  // namespace vilaco
