#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. Every forward call builds a fresh graph; leaves created
// with `parameter()` persist across graphs and accumulate gradients.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace vilaco::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
  bool has_grad() const { return grad.size() != 0; }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const;

  void zero_grad() { node_->grad.resize(0, 0); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Leaves.
Var constant(Matrix value);
Var constant_scalar(double value);
Var parameter(Matrix value);

// Propagates d(root)/d(leaf) into every reachable leaf's grad. `seed`
// defaults to ones (root is normally 1x1).
void backward(const Var& root);
void backward(const Var& root, const Matrix& seed);

// Elementwise (shapes must match).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);

Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);

// Broadcasting of 1x1, 1xc or rx1 operands up to (rows, cols).
Var broadcast(const Var& a, Eigen::Index rows, Eigen::Index cols);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
Var sum_rows(const Var& a);  // column sums -> 1 x cols

Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var layer_norm_rows(const Var& a, double eps = 1e-5);
// Rows with norm <= eps map to zero rows.
Var l2_normalize_rows(const Var& a, double eps = 1e-12);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(const Var& a, std::span<const int> index);
Var slice_cols(const Var& a, Eigen::Index begin, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count);
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);

// Multi-head scaled dot-product attention. Each group pairs a set of query
// rows with the key/value rows they may attend to; query rows not covered by
// any group produce zero output.
struct AttentionGroup {
  std::vector<int> queries;
  std::vector<int> keys;
};
Var attention(const Var& q, const Var& k, const Var& v, int heads,
              std::span<const AttentionGroup> groups);

// 2-D convolution on a (channels, height*width) image, stride 1, zero
// padding ksize/2. Weight is (out, in*ksize*ksize); bias is (out, 1).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int height, int width,
           int ksize);

// 2x bilinear upsampling (half-pixel centres, edge clamped) of a
// (channels, height*width) image.
Var upsample2x(const Var& x, int height, int width);

// Mean of the k largest entries of a column or row vector. Ties resolve to
// the lower index.
Var topk_mean(const Var& a, int k);

// Binary cross-entropy of a 1x1 probability, clamped to [1e-7, 1-1e-7].
Var bce(const Var& prob, int label);

}  // namespace vilaco::ag
