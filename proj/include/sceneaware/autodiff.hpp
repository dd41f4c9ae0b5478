#pragma once

// Tape-based reverse-mode differentiation over dense double matrices. Every
// op records its output value and a closure that pushes the output gradient
// into its inputs. Nodes that do not depend on a trainable leaf carry no
// closure, so inference on a tape costs little more than plain Eigen.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sceneaware/error.hpp"

namespace sceneaware::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool requires_grad() const;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Tape() { nodes_.reserve(512); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) {
    Node n;
    n.own = std::move(value);
    return push(std::move(n));
  }

  /// Leaf referring to externally owned storage. If `grad_sink` is non-null
  /// the leaf is trainable and its gradient is accumulated there.
  Var leaf(const Matrix& value, Matrix* grad_sink) {
    Node n;
    n.ext = &value;
    n.sink = grad_sink;
    n.requires_grad = grad_sink != nullptr;
    return push(std::move(n));
  }
  Var leaf(Matrix&&, Matrix*) = delete;  // the tape keeps a pointer to the value

  /// Records an op result. `backward` is dropped when no input needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    Node n;
    n.own = std::move(value);
    for (const Var& v : inputs) n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  Var record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
    Node n;
    n.own = std::move(value);
    for (const Var& v : inputs) n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  const Matrix& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ext ? *n.ext : n.own;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adds `g` to the gradient of node `id` (no-op for constants).
  template <typename Expr>
  void accumulate(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.sink) {
      *n.sink += g;
      return;
    }
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and sweeps the tape once.
  void backward(Var root) {
    if (root.rows() != 1 || root.cols() != 1) throw Error(Errc::ShapeMismatch, "backward root must be 1x1");
    accumulate(root.id(), Matrix::Constant(1, 1, 1.0));
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix own;
    const Matrix* ext = nullptr;
    Matrix grad;
    Matrix* sink = nullptr;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {
inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(Errc::ShapeMismatch, std::string(op) + ": operand shapes differ");
}
}  // namespace detail

inline Var add(Var a, Var b) {
  detail::check_same_shape(a, b, "add");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::check_same_shape(a, b, "sub");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::check_same_shape(a, b, "mul");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

inline Var scale(Var a, double s) {
  const std::size_t ia = a.id();
  return a.tape()->record(a.value() * s, {a}, [ia, s](Tape& t, const Matrix& g) { t.accumulate(ia, g * s); });
}

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw Error(Errc::ShapeMismatch, "matmul: inner dimensions differ");
  const std::size_t ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

/// Adds a 1 x d row to every row of `a`.
inline Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error(Errc::ShapeMismatch, "add_row: row shape");
  const std::size_t ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [ia, ir](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ir, g.colwise().sum());
  });
}

/// x W + b with x: n x in, W: in x out, b: 1 x out.
inline Var linear(Var x, Var w, Var b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols())
    throw Error(Errc::ShapeMismatch, "linear: operand shapes");
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return x.tape()->record(std::move(out), {x, w, b}, [ix, iw, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ix)) t.accumulate(ix, g * t.value(iw).transpose());
    if (t.requires_grad(iw)) t.accumulate(iw, t.value(ix).transpose() * g);
    t.accumulate(ib, g.colwise().sum());
  });
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
inline constexpr double kGeluA = 0.044715;

/// Smooth GELU (tanh form).
inline Var gelu(Var x) {
  constexpr double kC = kGeluC;
  constexpr double kA = kGeluA;
  const Matrix& xv = x.value();
  Matrix th = (kC * (xv.array() + kA * xv.array().cube())).tanh().matrix();
  Matrix out = (0.5 * xv.array() * (1.0 + th.array())).matrix();
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, th = std::move(th)](Tape& t, const Matrix& g) {
    const auto xa = t.value(ix).array();
    const auto ta = th.array();
    const auto d = 0.5 * (1.0 + ta) + 0.5 * xa * (1.0 - ta.square()) * kGeluC * (1.0 + 3.0 * kGeluA * xa.square());
    t.accumulate(ix, (g.array() * d).matrix());
  });
}

inline Var exp(Var x) {
  Matrix out = x.value().array().exp().matrix();
  const std::size_t ix = x.id(), io = x.tape()->size();
  return x.tape()->record(std::move(out), {x}, [ix, io](Tape& t, const Matrix& g) {
    t.accumulate(ix, g.cwiseProduct(t.value(io)));
  });
}

/// Elementwise clamp; the gradient passes only where lo < x < hi.
inline Var clamp(Var x, double lo, double hi) {
  Matrix out = x.value().cwiseMax(lo).cwiseMin(hi);
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, lo, hi](Tape& t, const Matrix& g) {
    const auto xa = t.value(ix).array();
    t.accumulate(ix, ((xa > lo) && (xa < hi)).select(g.array(), 0.0).matrix());
  });
}

/// Row-wise layer normalization with affine gamma/beta (1 x d each).
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows(), d = xv.cols();
  if (gamma.cols() != d || beta.cols() != d) throw Error(Errc::ShapeMismatch, "layer_norm: affine shape");
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape()->record(
      std::move(out), {x, gamma, beta},
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Matrix& g) {
        t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
        t.accumulate(ib, g.colwise().sum());
        if (!t.requires_grad(ix)) return;
        Matrix dxhat = (g.array().rowwise() * t.value(ig).row(0).array()).matrix();
        Matrix dx(dxhat.rows(), dxhat.cols());
        for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
          const double m1 = dxhat.row(r).mean();
          const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
          dx.row(r) = inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
        }
        t.accumulate(ix, dx);
      });
}

/// Multi-head scaled dot-product attention core. q: n_q x d, k and v:
/// n_k x d; heads split the feature dimension evenly. Returns n_q x d.
inline Var attention(Var q, Var k, Var v, int heads) {
  const Eigen::Index d = q.cols();
  if (heads < 1 || d % heads != 0) throw Error(Errc::ShapeMismatch, "attention: heads must divide width");
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows())
    throw Error(Errc::ShapeMismatch, "attention: q/k/v shapes");
  const Eigen::Index dk = d / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dk));
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  std::vector<Matrix> probs(static_cast<std::size_t>(heads));
  Matrix out(qv.rows(), d);
  for (int h = 0; h < heads; ++h) {
    Matrix scores = (qv.middleCols(h * dk, dk) * kv.middleCols(h * dk, dk).transpose()) * s;
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
      const double mx = scores.row(r).maxCoeff();
      scores.row(r) = (scores.row(r).array() - mx).exp();
      scores.row(r) /= scores.row(r).sum();
    }
    out.middleCols(h * dk, dk) = scores * vv.middleCols(h * dk, dk);
    probs[static_cast<std::size_t>(h)] = std::move(scores);
  }
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape()->record(
      std::move(out), {q, k, v}, [iq, ik, iv, heads, dk, s, probs = std::move(probs)](Tape& t, const Matrix& g) {
        const Matrix& qv = t.value(iq);
        const Matrix& kv = t.value(ik);
        const Matrix& vv = t.value(iv);
        Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix dkm = Matrix::Zero(kv.rows(), kv.cols());
        Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
        for (int h = 0; h < heads; ++h) {
          const Matrix& a = probs[static_cast<std::size_t>(h)];
          const auto gh = g.middleCols(h * dk, dk);
          Matrix da = gh * vv.middleCols(h * dk, dk).transpose();
          dv.middleCols(h * dk, dk) += a.transpose() * gh;
          const Eigen::VectorXd row_dot = da.cwiseProduct(a).rowwise().sum();
          Matrix ds = (a.array() * (da.colwise() - row_dot).array()).matrix() * s;
          dq.middleCols(h * dk, dk) += ds * kv.middleCols(h * dk, dk);
          dkm.middleCols(h * dk, dk) += ds.transpose() * qv.middleCols(h * dk, dk);
        }
        t.accumulate(iq, dq);
        t.accumulate(ik, dkm);
        t.accumulate(iv, dv);
      });
}

/// [a b] for matrices with equal row counts.
inline Var concat_cols(Var a, Var b) {
  if (a.rows() != b.rows()) throw Error(Errc::ShapeMismatch, "concat_cols: row counts differ");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const std::size_t ia = a.id(), ib = b.id();
  const Eigen::Index ca = a.cols(), cb = b.cols();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, ca, cb](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.leftCols(ca));
    t.accumulate(ib, g.rightCols(cb));
  });
}

inline Var slice_rows(Var a, Eigen::Index first, Eigen::Index count) {
  if (first < 0 || count < 0 || first + count > a.rows()) throw Error(Errc::ShapeMismatch, "slice_rows: range");
  Matrix out = a.value().middleRows(first, count);
  const std::size_t ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(std::move(out), {a}, [ia, first, count, rows, cols](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(rows, cols);
    full.middleRows(first, count) = g;
    t.accumulate(ia, full);
  });
}

/// Running sum down the rows: out.row(i) = sum_{j <= i} a.row(j).
inline Var cumsum_rows(Var a) {
  Matrix out = a.value();
  for (Eigen::Index r = 1; r < out.rows(); ++r) out.row(r) += out.row(r - 1);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, const Matrix& g) {
    Matrix d = g;
    for (Eigen::Index r = d.rows() - 2; r >= 0; --r) d.row(r) += d.row(r + 1);
    t.accumulate(ia, d);
  });
}

inline Var sum(Var a) {
  const std::size_t ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  return a.tape()->record(Matrix::Constant(1, 1, a.value().sum()), {a}, [ia, rows, cols](Tape& t, const Matrix& g) {
    t.accumulate(ia, Matrix::Constant(rows, cols, g(0, 0)));
  });
}

/// Weighted sum of 1x1 scalars: sum_i w_i * s_i.
inline Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights) {
  if (scalars.empty() || scalars.size() != weights.size())
    throw Error(Errc::ShapeMismatch, "weighted_sum: operand count");
  double total = 0.0;
  std::vector<std::size_t> ids;
  ids.reserve(scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].rows() != 1 || scalars[i].cols() != 1) throw Error(Errc::ShapeMismatch, "weighted_sum: not 1x1");
    total += weights[i] * scalars[i].scalar();
    ids.push_back(scalars[i].id());
  }
  return scalars.front().tape()->record(Matrix::Constant(1, 1, total), scalars,
                                        [ids = std::move(ids), weights](Tape& t, const Matrix& g) {
                                          for (std::size_t i = 0; i < ids.size(); ++i)
                                            t.accumulate(ids[i], Matrix::Constant(1, 1, weights[i] * g(0, 0)));
                                        });
}

/// (1 / n) * sum_i ||a.row(i) - target.row(i)||^2 as a 1x1 result.
inline Var mean_squared_row_error(Var a, const Matrix& target) {
  if (a.rows() != target.rows() || a.cols() != target.cols())
    throw Error(Errc::ShapeMismatch, "mean_squared_row_error: shapes");
  const double n = static_cast<double>(a.rows());
  Matrix diff = a.value() - target;
  const double value = diff.squaredNorm() / n;
  const std::size_t ia = a.id();
  return a.tape()->record(Matrix::Constant(1, 1, value), {a}, [ia, n, diff = std::move(diff)](Tape& t, const Matrix& g) {
    t.accumulate(ia, diff * (2.0 * g(0, 0) / n));
  });
}

/// 0.5 * sum(mu^2 + exp(lv) - lv - 1): KL of N(mu, exp(lv)) from N(0, I).
inline Var gaussian_kl(Var mu, Var log_var) {
  detail::check_same_shape(mu, log_var, "gaussian_kl");
  const auto m = mu.value().array();
  const auto lv = log_var.value().array();
  const double value = 0.5 * (m.square() + lv.exp() - lv - 1.0).sum();
  const std::size_t im = mu.id(), il = log_var.id();
  return mu.tape()->record(Matrix::Constant(1, 1, value), {mu, log_var}, [im, il](Tape& t, const Matrix& g) {
    const double s = g(0, 0);
    t.accumulate(im, t.value(im) * s);
    t.accumulate(il, ((t.value(il).array().exp() - 1.0) * (0.5 * s)).matrix());
  });
}

/// z = mu + exp(0.5 * lv) * eps with eps held constant.
inline Var reparameterize(Var mu, Var log_var, const Matrix& eps) {
  detail::check_same_shape(mu, log_var, "reparameterize");
  if (eps.rows() != mu.rows() || eps.cols() != mu.cols()) throw Error(Errc::ShapeMismatch, "reparameterize: eps");
  Matrix sigma_eps = ((0.5 * log_var.value().array()).exp() * eps.array()).matrix();
  Matrix out = mu.value() + sigma_eps;
  const std::size_t im = mu.id(), il = log_var.id();
  return mu.tape()->record(std::move(out), {mu, log_var},
                           [im, il, sigma_eps = std::move(sigma_eps)](Tape& t, const Matrix& g) {
                             t.accumulate(im, g);
                             t.accumulate(il, g.cwiseProduct(sigma_eps) * 0.5);
                           });
}

/// Applies a scalar field f(row) -> (value, d value / d row) to every row of
/// `a` (n x c) and returns the n x 1 column of values.
inline Var row_field(Var a, const std::function<double(const Eigen::RowVectorXd&, Eigen::RowVectorXd&)>& field) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), 1);
  Matrix jac(av.rows(), av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    Eigen::RowVectorXd row = av.row(r);
    Eigen::RowVectorXd grad = Eigen::RowVectorXd::Zero(av.cols());
    out(r, 0) = field(row, grad);
    jac.row(r) = grad;
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, jac = std::move(jac)](Tape& t, const Matrix& g) {
    t.accumulate(ia, (jac.array().colwise() * g.col(0).array()).matrix());
  });
}

}  // namespace sceneaware::ad
