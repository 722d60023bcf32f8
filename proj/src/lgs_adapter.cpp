#include "vilaco/lgs_adapter.hpp"

#include "vilaco/errors.hpp"

#include <cmath>
#include <iostream>
#include <map>
#include <mutex>
#include <tuple>

namespace vilaco {

namespace {

std::vector<int> segment_starts(int side, int window, int shift) {
  std::vector<int> starts{0};
  for (int s = shift; s < side; s += window) {
    if (s > 0) starts.push_back(s);
  }
  starts.push_back(side);
  return starts;
}

WindowAttentionParams init_window(int d, std::mt19937_64& rng, ParamStore& store, const std::string& prefix) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  WindowAttentionParams p;
  p.wq = store.add_trainable(prefix + ".wq", "adapter", random_normal(rng, d, d, s));
  p.wk = store.add_trainable(prefix + ".wk", "adapter", random_normal(rng, d, d, s));
  p.wv = store.add_trainable(prefix + ".wv", "adapter", random_normal(rng, d, d, s));
  p.wo = store.add_trainable(prefix + ".wo", "adapter", random_normal(rng, d, d, 0.1 * s));
  return p;
}

// Row-softmaxed distance adjacency, memoised per (rows, cols, sigma).
const Matrix& distance_weights(int rows, int cols, double sigma) {
  static std::mutex mu;
  static std::map<std::tuple<int, int, double>, Matrix> cache;
  std::lock_guard lock(mu);
  auto key = std::make_tuple(rows, cols, sigma);
  auto it = cache.find(key);
  if (it == cache.end()) {
    Matrix w = distance_logits(rows, cols, sigma);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      auto row = w.row(r);
      row.array() -= row.maxCoeff();
      row = row.array().exp();
      row /= row.sum();
    }
    it = cache.emplace(key, std::move(w)).first;
  }
  return it->second;
}

}  // namespace

void validate(const AdapterConfig& cfg, int grid_rows, int grid_cols, int dim) {
  if (cfg.window <= 0 || grid_rows % cfg.window != 0 || grid_cols % cfg.window != 0) {
    throw ConfigError("window " + std::to_string(cfg.window) + " does not divide the " +
                      std::to_string(grid_rows) + "x" + std::to_string(grid_cols) + " patch grid");
  }
  const int shift = cfg.effective_shift();
  if (shift < 0 || shift >= cfg.window) throw ConfigError("shift must satisfy 0 <= shift < window");
  if (cfg.heads <= 0 || dim % cfg.heads != 0) throw ConfigError("adapter width not divisible by heads");
  if (cfg.sigma_dist == 0.0 || std::isnan(cfg.sigma_dist)) throw ConfigError("sigma_dist must be positive");
}

AdapterParams AdapterParams::init(int dim, std::mt19937_64& rng, ParamStore& store) {
  AdapterParams p;
  p.plain = init_window(dim, rng, store, "adapter.plain");
  p.shifted = init_window(dim, rng, store, "adapter.shifted");
  p.gcn_weight = store.add_trainable("adapter.gcn_weight", "adapter",
                                     random_normal(rng, 2 * dim, dim, 0.5 / std::sqrt(2.0 * dim)));
  return p;
}

std::vector<std::vector<int>> window_partition(int rows, int cols, int window, int shift) {
  const auto ys = segment_starts(rows, window, shift);
  const auto xs = segment_starts(cols, window, shift);
  std::vector<std::vector<int>> groups;
  for (std::size_t a = 0; a + 1 < ys.size(); ++a) {
    for (std::size_t b = 0; b + 1 < xs.size(); ++b) {
      std::vector<int> g;
      for (int y = ys[a]; y < ys[a + 1]; ++y) {
        for (int x = xs[b]; x < xs[b + 1]; ++x) g.push_back(y * cols + x);
      }
      groups.push_back(std::move(g));
    }
  }
  return groups;
}

PatchFeatures window_attention_pass(const PatchFeatures& x, const WindowAttentionParams& p, int window,
                                    int shift, int heads) {
  std::vector<ag::AttentionGroup> groups;
  for (auto& w : window_partition(x.rows, x.cols, window, shift)) groups.push_back({w, w});
  auto a = ag::attention(ag::matmul(x.data, p.wq), ag::matmul(x.data, p.wk), ag::matmul(x.data, p.wv), heads,
                         groups);
  return {ag::add(x.data, ag::matmul(a, p.wo)), x.rows, x.cols};
}

PatchFeatures local_attention(const PatchFeatures& raw, const AdapterParams& params, const AdapterConfig& cfg) {
  validate(cfg, raw.rows, raw.cols, raw.dim());
  auto x = window_attention_pass(raw, params.plain, cfg.window, 0, cfg.heads);
  return window_attention_pass(x, params.shifted, cfg.window, cfg.effective_shift(), cfg.heads);
}

Matrix distance_logits(int rows, int cols, double sigma) {
  const int n = rows * cols;
  Matrix h(n, n);
  for (int i = 0; i < n; ++i) {
    const int yi = i / cols;
    const int xi = i % cols;
    for (int j = 0; j < n; ++j) {
      const double dy = yi - j / cols;
      const double dx = xi - j % cols;
      h(i, j) = -std::sqrt(dy * dy + dx * dx) / sigma;
    }
  }
  return h;
}

AdjacencyPair build_adjacencies(const PatchFeatures& local, const AdapterConfig& cfg) {
  const auto& v = local.data.value();
  if (!v.allFinite()) throw NumericalError("build_adjacencies: non-finite patch features");
  AdjacencyPair adj;
  const Eigen::VectorXd norms = v.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (norms(i) <= 1e-12) ++adj.zero_norm_rows;
  }
  if (adj.zero_norm_rows > 0) {
    std::cerr << "warning: " << adj.zero_norm_rows << " zero-norm patch rows; cosine set to 0\n";
  }
  auto unit = ag::l2_normalize_rows(local.data);
  adj.similarity = ag::matmul(unit, ag::transpose(unit));
  const double sigma = cfg.effective_sigma(local.rows);
  adj.distance = distance_logits(local.rows, local.cols, sigma);
  adj.distance_weights = distance_weights(local.rows, local.cols, sigma);
  return adj;
}

PatchFeatures gcn_propagate(const PatchFeatures& local, const AdjacencyPair& adj, const Var& weight) {
  const auto n = local.data.rows();
  const auto d = local.data.cols();
  if (adj.similarity.rows() != n || adj.similarity.cols() != n || adj.distance.rows() != n ||
      adj.distance.cols() != n) {
    throw ShapeError("gcn_propagate: adjacency does not match patch count");
  }
  if (weight.rows() != 2 * d) throw ShapeError("gcn_propagate: weight must be (2d, d)");
  if (!adj.similarity.value().allFinite() || !adj.distance.allFinite()) {
    throw NumericalError("gcn_propagate: non-finite adjacency logits");
  }
  auto sim_weights = ag::softmax_rows(adj.similarity);
  auto dist_weights = adj.distance_weights.size() == adj.distance.size()
                          ? ag::constant(adj.distance_weights)
                          : ag::softmax_rows(ag::constant(adj.distance));
  const Var parts[] = {ag::matmul(sim_weights, local.data), ag::matmul(dist_weights, local.data)};
  auto z = ag::matmul(ag::concat_cols(parts), weight);
  return {ag::gelu(z), local.rows, local.cols};
}

PatchFeatures lgs_forward(const PatchFeatures& raw, const AdapterParams& params, const AdapterConfig& cfg) {
  auto local = local_attention(raw, params, cfg);
  auto global = gcn_propagate(local, build_adjacencies(local, cfg), params.gcn_weight);
  return {ag::add(global.data, raw.data), raw.rows, raw.cols};
}

}  // namespace vilaco
