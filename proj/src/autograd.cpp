#include "vilaco/autograd.hpp"

#include "vilaco/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_set>

namespace vilaco::ag {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Var make_node(Matrix value, std::vector<std::shared_ptr<Node>> parents,
              std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& p : parents) {
    if (p->requires_grad) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

// Per-axis bilinear taps for 2x upsampling with half-pixel centres.
struct Taps {
  std::vector<int> lo, hi;
  std::vector<double> wlo, whi;
};

Taps upsample_taps(int n) {
  Taps t;
  const int m = 2 * n;
  t.lo.resize(m);
  t.hi.resize(m);
  t.wlo.resize(m);
  t.whi.resize(m);
  for (int o = 0; o < m; ++o) {
    double src = (o + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > n - 1) i0 = n - 1;
    const int i1 = std::min(i0 + 1, n - 1);
    const double f = src - i0;
    t.lo[o] = i0;
    t.hi[o] = i1;
    t.wlo[o] = 1.0 - f;
    t.whi[o] = f;
  }
  return t;
}

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (!requires_grad) return;
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

double Var::scalar() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("scalar(): value is not 1x1");
  return node_->value(0, 0);
}

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var constant_scalar(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Var parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

void backward(const Var& root) {
  backward(root, Matrix::Ones(root.rows(), root.cols()));
}

void backward(const Var& root, const Matrix& seed) {
  if (!root.requires_grad()) return;
  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.contains(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward_fn) continue;  // leaf
    if (node->has_grad()) node->backward_fn(*node);
    node->grad.resize(0, 0);
  }
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_node(a.value() + b.value(), {a.node(), b.node()}, [](Node& self) {
    self.parents[0]->accumulate(self.grad);
    self.parents[1]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_node(a.value() - b.value(), {a.node(), b.node()}, [](Node& self) {
    self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make_node(a.value().cwiseProduct(b.value()), {a.node(), b.node()}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(self.grad.cwiseProduct(pa.value));
  });
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  return make_node(a.value().cwiseQuotient(b.value()), {a.node(), b.node()}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad.cwiseQuotient(pb.value));
    if (pb.requires_grad) {
      pb.accumulate(-(self.grad.cwiseProduct(self.value)).cwiseQuotient(pb.value));
    }
  });
}

Var scale(const Var& a, double s) {
  return make_node(a.value() * s, {a.node()},
                   [s](Node& self) { self.parents[0]->accumulate(self.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  return make_node(a.value().array() + s, {a.node()},
                   [](Node& self) { self.parents[0]->accumulate(self.grad); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var gelu(const Var& a) {
  Matrix y = a.value().unaryExpr(
      [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
  return make_node(std::move(y), {a.node()}, [](Node& self) {
    const Matrix& x = self.parents[0]->value;
    Matrix d = x.unaryExpr([](double v) {
      return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
    });
    self.parents[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

Var sigmoid(const Var& a) {
  Matrix y = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return make_node(std::move(y), {a.node()}, [](Node& self) {
    Matrix d = self.value.array() * (1.0 - self.value.array());
    self.parents[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

Var exp(const Var& a) {
  return make_node(a.value().array().exp(), {a.node()}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.cwiseProduct(self.value));
  });
}

Var log(const Var& a) {
  return make_node(a.value().array().log(), {a.node()}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.cwiseQuotient(self.parents[0]->value));
  });
}

Var broadcast(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  const auto ar = a.rows();
  const auto ac = a.cols();
  if ((ar != 1 && ar != rows) || (ac != 1 && ac != cols)) {
    throw ShapeError("broadcast: incompatible shape");
  }
  Matrix out = a.value().replicate(rows / ar, cols / ac);
  return make_node(std::move(out), {a.node()}, [ar, ac](Node& self) {
    Matrix g;
    if (ar == 1 && ac == 1) {
      g = Matrix::Constant(1, 1, self.grad.sum());
    } else if (ar == 1) {
      g = self.grad.colwise().sum();
    } else if (ac == 1) {
      g = self.grad.rowwise().sum();
    } else {
      g = self.grad;
    }
    self.parents[0]->accumulate(g);
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + ")");
  }
  Matrix out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  return make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      Matrix g(pa.value.rows(), pa.value.cols());
      g.noalias() = self.grad * pb.value.transpose();
      pa.accumulate(g);
    }
    if (pb.requires_grad) {
      Matrix g(pb.value.rows(), pb.value.cols());
      g.noalias() = pa.value.transpose() * self.grad;
      pb.accumulate(g);
    }
  });
}

Var transpose(const Var& a) {
  return make_node(a.value().transpose(), {a.node()}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.transpose());
  });
}

Var sum(const Var& a) {
  return make_node(Matrix::Constant(1, 1, a.value().sum()), {a.node()}, [](Node& self) {
    const auto& v = self.parents[0]->value;
    self.parents[0]->accumulate(Matrix::Constant(v.rows(), v.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return make_node(Matrix::Constant(1, 1, a.value().sum() / n), {a.node()}, [n](Node& self) {
    const auto& v = self.parents[0]->value;
    self.parents[0]->accumulate(Matrix::Constant(v.rows(), v.cols(), self.grad(0, 0) / n));
  });
}

Var sum_rows(const Var& a) {
  Matrix out = a.value().colwise().sum();
  return make_node(std::move(out), {a.node()}, [](Node& self) {
    const auto rows = self.parents[0]->value.rows();
    self.parents[0]->accumulate(self.grad.replicate(rows, 1));
  });
}

Var softmax_rows(const Var& a) {
  Matrix y = a.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp();
    row /= row.sum();
  }
  return make_node(std::move(y), {a.node()}, [](Node& self) {
    Eigen::VectorXd dots = self.grad.cwiseProduct(self.value).rowwise().sum();
    Matrix g = self.value.array() * (self.grad.colwise() - dots).array();
    self.parents[0]->accumulate(g);
  });
}

Var log_softmax_rows(const Var& a) {
  Matrix y = a.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    row.array() -= lse;
  }
  return make_node(std::move(y), {a.node()}, [](Node& self) {
    Eigen::VectorXd gsum = self.grad.rowwise().sum();
    Matrix soft = self.value.array().exp();
    Matrix g = self.grad - (soft.array().colwise() * gsum.array()).matrix();
    self.parents[0]->accumulate(g);
  });
}

Var layer_norm_rows(const Var& a, double eps) {
  const auto& x = a.value();
  const double d = static_cast<double>(x.cols());
  Eigen::VectorXd inv_std(x.rows());
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().sum() / d;
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    y.row(r) = (x.row(r).array() - mu) * inv_std(r);
  }
  return make_node(std::move(y), {a.node()}, [inv_std, d](Node& self) {
    const Matrix& xhat = self.value;
    const Matrix& g = self.grad;
    Eigen::VectorXd gmean = g.rowwise().sum() / d;
    Eigen::VectorXd gx = g.cwiseProduct(xhat).rowwise().sum() / d;
    Matrix out(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      out.row(r) = inv_std(r) * (g.row(r).array() - gmean(r) - xhat.row(r).array() * gx(r));
    }
    self.parents[0]->accumulate(out);
  });
}

Var l2_normalize_rows(const Var& a, double eps) {
  const auto& x = a.value();
  Eigen::VectorXd norms = x.rowwise().norm();
  Matrix y = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    if (norms(r) > eps) y.row(r) = x.row(r) / norms(r);
  }
  return make_node(std::move(y), {a.node()}, [norms, eps](Node& self) {
    const Matrix& y = self.value;
    Matrix out = Matrix::Zero(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      if (norms(r) <= eps) continue;
      const double dot = y.row(r).dot(self.grad.row(r));
      out.row(r) = (self.grad.row(r) - dot * y.row(r)) / norms(r);
    }
    self.parents[0]->accumulate(out);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const auto rows = parts.front().rows();
  Eigen::Index cols = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<Eigen::Index> widths;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += p.cols();
    widths.push_back(p.cols());
    parents.push_back(p.node());
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return make_node(std::move(out), std::move(parents), [widths](Node& self) {
    Eigen::Index c = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (self.parents[i]->requires_grad) {
        self.parents[i]->accumulate(self.grad.middleCols(c, widths[i]));
      }
      c += widths[i];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const auto cols = parts.front().cols();
  Eigen::Index rows = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<Eigen::Index> heights;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    rows += p.rows();
    heights.push_back(p.rows());
    parents.push_back(p.node());
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return make_node(std::move(out), std::move(parents), [heights](Node& self) {
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < heights.size(); ++i) {
      if (self.parents[i]->requires_grad) {
        self.parents[i]->accumulate(self.grad.middleRows(r, heights[i]));
      }
      r += heights[i];
    }
  });
}

Var gather_rows(const Var& a, std::span<const int> index) {
  std::vector<int> idx(index.begin(), index.end());
  Matrix out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  return make_node(std::move(out), {a.node()}, [idx](Node& self) {
    const auto& v = self.parents[0]->value;
    Matrix g = Matrix::Zero(v.rows(), v.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
    self.parents[0]->accumulate(g);
  });
}

Var slice_cols(const Var& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) throw ShapeError("slice_cols: out of range");
  return make_node(a.value().middleCols(begin, count), {a.node()}, [begin, count](Node& self) {
    const auto& v = self.parents[0]->value;
    Matrix g = Matrix::Zero(v.rows(), v.cols());
    g.middleCols(begin, count) = self.grad;
    self.parents[0]->accumulate(g);
  });
}

Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw ShapeError("slice_rows: out of range");
  return make_node(a.value().middleRows(begin, count), {a.node()}, [begin, count](Node& self) {
    const auto& v = self.parents[0]->value;
    Matrix g = Matrix::Zero(v.rows(), v.cols());
    g.middleRows(begin, count) = self.grad;
    self.parents[0]->accumulate(g);
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw ShapeError("reshape: element count changes");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return make_node(std::move(out), {a.node()}, [](Node& self) {
    const auto& v = self.parents[0]->value;
    self.parents[0]->accumulate(Eigen::Map<const Matrix>(self.grad.data(), v.rows(), v.cols()));
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads,
              std::span<const AttentionGroup> groups) {
  const auto dq = q.cols();
  const auto dv = v.cols();
  if (k.cols() != dq || k.rows() != v.rows()) throw ShapeError("attention: q/k/v shapes disagree");
  if (heads <= 0 || dq % heads != 0 || dv % heads != 0) {
    throw ShapeError("attention: feature width not divisible by heads");
  }
  const Eigen::Index hq = dq / heads;
  const Eigen::Index hv = dv / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(hq));
  const bool keep = q.requires_grad() || k.requires_grad() || v.requires_grad();

  std::vector<AttentionGroup> gs(groups.begin(), groups.end());
  // Attention weights per (group, head), kept only when a backward pass can happen.
  std::vector<Matrix> probs;
  if (keep) probs.reserve(gs.size() * static_cast<std::size_t>(heads));

  Matrix out = Matrix::Zero(q.rows(), dv);
  for (const auto& g : gs) {
    const auto nq = static_cast<Eigen::Index>(g.queries.size());
    const auto nk = static_cast<Eigen::Index>(g.keys.size());
    Matrix qg(nq, dq), kg(nk, dq), vg(nk, dv);
    for (Eigen::Index i = 0; i < nq; ++i) qg.row(i) = q.value().row(g.queries[i]);
    for (Eigen::Index j = 0; j < nk; ++j) {
      kg.row(j) = k.value().row(g.keys[j]);
      vg.row(j) = v.value().row(g.keys[j]);
    }
    for (int h = 0; h < heads; ++h) {
      Matrix s(nq, nk);
      s.noalias() = qg.middleCols(h * hq, hq) * kg.middleCols(h * hq, hq).transpose();
      s *= scale_factor;
      for (Eigen::Index r = 0; r < nq; ++r) {
        auto row = s.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp();
        row /= row.sum();
      }
      Matrix o(nq, hv);
      o.noalias() = s * vg.middleCols(h * hv, hv);
      for (Eigen::Index i = 0; i < nq; ++i) out.block(g.queries[i], h * hv, 1, hv) = o.row(i);
      if (keep) probs.push_back(std::move(s));
    }
  }

  return make_node(std::move(out), {q.node(), k.node(), v.node()},
                   [gs = std::move(gs), probs = std::move(probs), heads, hq, hv,
                    scale_factor](Node& self) {
    auto& pq = *self.parents[0];
    auto& pk = *self.parents[1];
    auto& pv = *self.parents[2];
    Matrix gq = Matrix::Zero(pq.value.rows(), pq.value.cols());
    Matrix gk = Matrix::Zero(pk.value.rows(), pk.value.cols());
    Matrix gv = Matrix::Zero(pv.value.rows(), pv.value.cols());
    std::size_t pi = 0;
    for (const auto& g : gs) {
      const auto nq = static_cast<Eigen::Index>(g.queries.size());
      const auto nk = static_cast<Eigen::Index>(g.keys.size());
      Matrix qg(nq, pq.value.cols()), kg(nk, pk.value.cols()), vg(nk, pv.value.cols());
      Matrix go(nq, self.grad.cols());
      for (Eigen::Index i = 0; i < nq; ++i) {
        qg.row(i) = pq.value.row(g.queries[i]);
        go.row(i) = self.grad.row(g.queries[i]);
      }
      for (Eigen::Index j = 0; j < nk; ++j) {
        kg.row(j) = pk.value.row(g.keys[j]);
        vg.row(j) = pv.value.row(g.keys[j]);
      }
      for (int h = 0; h < heads; ++h) {
        const Matrix& a = probs[pi++];
        const auto goh = go.middleCols(h * hv, hv);
        Matrix da(nq, nk);
        da.noalias() = goh * vg.middleCols(h * hv, hv).transpose();
        Matrix dvh(nk, hv);
        dvh.noalias() = a.transpose() * goh;
        Eigen::VectorXd dots = da.cwiseProduct(a).rowwise().sum();
        Matrix ds = a.array() * (da.colwise() - dots).array();
        ds *= scale_factor;
        Matrix dqh(nq, hq), dkh(nk, hq);
        dqh.noalias() = ds * kg.middleCols(h * hq, hq);
        dkh.noalias() = ds.transpose() * qg.middleCols(h * hq, hq);
        for (Eigen::Index i = 0; i < nq; ++i) gq.block(g.queries[i], h * hq, 1, hq) += dqh.row(i);
        for (Eigen::Index j = 0; j < nk; ++j) {
          gk.block(g.keys[j], h * hq, 1, hq) += dkh.row(j);
          gv.block(g.keys[j], h * hv, 1, hv) += dvh.row(j);
        }
      }
    }
    pq.accumulate(gq);
    pk.accumulate(gk);
    pv.accumulate(gv);
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int height, int width,
           int ksize) {
  const auto cin = x.rows();
  const auto cout = weight.rows();
  const Eigen::Index hw = static_cast<Eigen::Index>(height) * width;
  if (x.cols() != hw) throw ShapeError("conv2d: input is not height*width wide");
  if (weight.cols() != cin * ksize * ksize) throw ShapeError("conv2d: weight/input channel mismatch");
  if (bias.rows() != cout || bias.cols() != 1) throw ShapeError("conv2d: bias must be (out, 1)");
  const int pad = ksize / 2;

  Matrix cols;
  if (ksize == 1) {
    cols = x.value();
  } else {
    cols = Matrix::Zero(cin * ksize * ksize, hw);
    const auto& xv = x.value();
    for (Eigen::Index c = 0; c < cin; ++c) {
      for (int ky = 0; ky < ksize; ++ky) {
        for (int kx = 0; kx < ksize; ++kx) {
          const Eigen::Index row = (c * ksize + ky) * ksize + kx;
          for (int y = 0; y < height; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= height) continue;
            const int x0 = std::max(0, pad - kx);
            const int x1 = std::min(width, width + pad - kx);
            for (int xx = x0; xx < x1; ++xx) {
              cols(row, y * width + xx) = xv(c, sy * width + xx + kx - pad);
            }
          }
        }
      }
    }
  }
  Matrix out(cout, hw);
  out.noalias() = weight.value() * cols;
  out.colwise() += bias.value().col(0);

  return make_node(std::move(out), {x.node(), weight.node(), bias.node()},
                   [cols = std::move(cols), cin, height, width, ksize, pad](Node& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    if (pw.requires_grad) {
      Matrix gw(pw.value.rows(), pw.value.cols());
      gw.noalias() = self.grad * cols.transpose();
      pw.accumulate(gw);
    }
    if (pb.requires_grad) pb.accumulate(self.grad.rowwise().sum());
    if (!px.requires_grad) return;
    Matrix gcols(cols.rows(), cols.cols());
    gcols.noalias() = pw.value.transpose() * self.grad;
    if (ksize == 1) {
      px.accumulate(gcols);
      return;
    }
    Matrix gx = Matrix::Zero(cin, static_cast<Eigen::Index>(height) * width);
    for (Eigen::Index c = 0; c < cin; ++c) {
      for (int ky = 0; ky < ksize; ++ky) {
        for (int kx = 0; kx < ksize; ++kx) {
          const Eigen::Index row = (c * ksize + ky) * ksize + kx;
          for (int y = 0; y < height; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= height) continue;
            const int x0 = std::max(0, pad - kx);
            const int x1 = std::min(width, width + pad - kx);
            for (int xx = x0; xx < x1; ++xx) {
              gx(c, sy * width + xx + kx - pad) += gcols(row, y * width + xx);
            }
          }
        }
      }
    }
    px.accumulate(gx);
  });
}

Var upsample2x(const Var& x, int height, int width) {
  if (x.cols() != static_cast<Eigen::Index>(height) * width) {
    throw ShapeError("upsample2x: input is not height*width wide");
  }
  const Taps ty = upsample_taps(height);
  const Taps tx = upsample_taps(width);
  const int oh = 2 * height;
  const int ow = 2 * width;
  const auto channels = x.rows();
  const auto& xv = x.value();
  Matrix out(channels, static_cast<Eigen::Index>(oh) * ow);
  for (Eigen::Index c = 0; c < channels; ++c) {
    for (int y = 0; y < oh; ++y) {
      const int r0 = ty.lo[y] * width;
      const int r1 = ty.hi[y] * width;
      for (int xx = 0; xx < ow; ++xx) {
        const double top = tx.wlo[xx] * xv(c, r0 + tx.lo[xx]) + tx.whi[xx] * xv(c, r0 + tx.hi[xx]);
        const double bot = tx.wlo[xx] * xv(c, r1 + tx.lo[xx]) + tx.whi[xx] * xv(c, r1 + tx.hi[xx]);
        out(c, y * ow + xx) = ty.wlo[y] * top + ty.whi[y] * bot;
      }
    }
  }
  return make_node(std::move(out), {x.node()}, [ty, tx, height, width](Node& self) {
    const int oh = 2 * height;
    const int ow = 2 * width;
    const auto channels = self.grad.rows();
    Matrix gx = Matrix::Zero(channels, static_cast<Eigen::Index>(height) * width);
    for (Eigen::Index c = 0; c < channels; ++c) {
      for (int y = 0; y < oh; ++y) {
        const int r0 = ty.lo[y] * width;
        const int r1 = ty.hi[y] * width;
        for (int xx = 0; xx < ow; ++xx) {
          const double g = self.grad(c, y * ow + xx);
          const double gt = ty.wlo[y] * g;
          const double gb = ty.whi[y] * g;
          gx(c, r0 + tx.lo[xx]) += tx.wlo[xx] * gt;
          gx(c, r0 + tx.hi[xx]) += tx.whi[xx] * gt;
          gx(c, r1 + tx.lo[xx]) += tx.wlo[xx] * gb;
          gx(c, r1 + tx.hi[xx]) += tx.whi[xx] * gb;
        }
      }
    }
    self.parents[0]->accumulate(gx);
  });
}

Var topk_mean(const Var& a, int k) {
  const auto n = a.value().size();
  if (a.rows() != 1 && a.cols() != 1) throw ShapeError("topk_mean: input must be a vector");
  if (k < 1 || k > n) throw ShapeError("topk_mean: k out of range");
  const double* data = a.value().data();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [data](int i, int j) { return data[i] > data[j]; });
  order.resize(static_cast<std::size_t>(k));
  // Reduce a zero-masked copy in index order, so K=n is bit-identical to mean().
  Matrix kept = Matrix::Zero(a.rows(), a.cols());
  for (int i : order) kept.data()[i] = data[i];
  return make_node(Matrix::Constant(1, 1, kept.sum() / k), {a.node()}, [order, k](Node& self) {
    const auto& v = self.parents[0]->value;
    Matrix g = Matrix::Zero(v.rows(), v.cols());
    const double share = self.grad(0, 0) / k;
    for (int i : order) g.data()[i] = share;
    self.parents[0]->accumulate(g);
  });
}

Var bce(const Var& prob, int label) {
  constexpr double lo = 1e-7;
  constexpr double hi = 1.0 - 1e-7;
  const double raw = prob.scalar();
  const double p = std::clamp(raw, lo, hi);
  const double y = label ? 1.0 : 0.0;
  const double loss = -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  const bool clamped = raw < lo || raw > hi;
  return make_node(Matrix::Constant(1, 1, loss), {prob.node()}, [p, y, clamped](Node& self) {
    const double d = clamped ? 0.0 : (-y / p + (1.0 - y) / (1.0 - p));
    self.parents[0]->accumulate(Matrix::Constant(1, 1, self.grad(0, 0) * d));
  });
}

}  // namespace vilaco::ag
