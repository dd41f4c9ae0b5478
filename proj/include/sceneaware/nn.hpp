#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "sceneaware/autodiff.hpp"
#include "sceneaware/random.hpp"

namespace sceneaware::nn {

using ad::Matrix;
using ad::Tape;
using ad::Var;

struct Tensor {
  std::string name;
  Matrix value;
};

/// Ordered collection of named tensors. Order is the creation order, which
/// is a pure function of the architecture, so checkpoints and gradient
/// buffers line up by index.
class ParamStore {
 public:
  std::size_t add(std::string name, Matrix value) {
    tensors_.push_back({std::move(name), std::move(value)});
    return tensors_.size() - 1;
  }

  std::size_t size() const noexcept { return tensors_.size(); }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  std::vector<Tensor>& tensors() noexcept { return tensors_; }
  const std::vector<Tensor>& tensors() const noexcept { return tensors_; }

  std::size_t scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
  }

  const Tensor* find(const std::string& name) const {
    for (const auto& t : tensors_)
      if (t.name == name) return &t;
    return nullptr;
  }
  Tensor* find(const std::string& name) {
    for (auto& t : tensors_)
      if (t.name == name) return &t;
    return nullptr;
  }

  /// Zero-initialized buffers shaped like every tensor.
  std::vector<Matrix> zeros_like() const {
    std::vector<Matrix> out;
    out.reserve(tensors_.size());
    for (const auto& t : tensors_) out.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
    return out;
  }

 private:
  std::vector<Tensor> tensors_;
};

using Gradients = std::vector<Matrix>;

/// Puts every tensor of `store` on `tape`. Tensors are trainable leaves when
/// `grads` is given (gradients land in the matching buffer), constants
/// otherwise.
inline std::vector<Var> bind(Tape& tape, const ParamStore& store, Gradients* grads) {
  std::vector<Var> vars;
  vars.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i)
    vars.push_back(tape.leaf(store[i].value, grads ? &(*grads)[i] : nullptr));
  return vars;
}

struct LinearIdx {
  std::size_t weight = 0;
  std::size_t bias = 0;
};

struct LayerNormIdx {
  std::size_t gamma = 0;
  std::size_t beta = 0;
};

struct BlockIdx {
  LayerNormIdx norm_attn;
  LinearIdx query, value, out;
  std::size_t key = 0;  // weight only: a key bias shifts every score of a query equally
  LayerNormIdx norm_ff;
  LinearIdx ff_in, ff_out;
};

inline Matrix glorot_uniform(Eigen::Index in, Eigen::Index out, Rng& rng, double gain = 1.0) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix w(in, out);
  for (Eigen::Index r = 0; r < in; ++r)
    for (Eigen::Index c = 0; c < out; ++c) w(r, c) = rng.uniform(-bound, bound);
  return w;
}

/// Glorot-uniform weight (in x out), zero bias.
inline LinearIdx add_linear(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
                            double gain = 1.0) {
  LinearIdx idx;
  idx.weight = store.add(name + ".weight", glorot_uniform(in, out, rng, gain));
  idx.bias = store.add(name + ".bias", Matrix::Zero(1, out));
  return idx;
}

inline LayerNormIdx add_layer_norm(ParamStore& store, const std::string& name, Eigen::Index width) {
  LayerNormIdx idx;
  idx.gamma = store.add(name + ".gamma", Matrix::Ones(1, width));
  idx.beta = store.add(name + ".beta", Matrix::Zero(1, width));
  return idx;
}

inline BlockIdx add_block(ParamStore& store, const std::string& name, Eigen::Index width, Eigen::Index ff_width,
                          Rng& rng) {
  BlockIdx b;
  b.norm_attn = add_layer_norm(store, name + ".norm_attn", width);
  b.query = add_linear(store, name + ".attn.query", width, width, rng);
  b.key = store.add(name + ".attn.key.weight", glorot_uniform(width, width, rng));
  b.value = add_linear(store, name + ".attn.value", width, width, rng);
  b.out = add_linear(store, name + ".attn.out", width, width, rng);
  b.norm_ff = add_layer_norm(store, name + ".norm_ff", width);
  b.ff_in = add_linear(store, name + ".ff.in", width, ff_width, rng);
  b.ff_out = add_linear(store, name + ".ff.out", ff_width, width, rng);
  return b;
}

inline Var apply(const std::vector<Var>& p, const LinearIdx& l, Var x) { return ad::linear(x, p[l.weight], p[l.bias]); }

inline Var apply(const std::vector<Var>& p, const LayerNormIdx& n, Var x) {
  return ad::layer_norm(x, p[n.gamma], p[n.beta]);
}

/// Pre-norm transformer layer over the rows of x (tokens x width):
/// h = x + MHA(LN(x)); out = h + FF(LN(h)).
inline Var apply(const std::vector<Var>& p, const BlockIdx& b, Var x, int heads) {
  const Var n1 = apply(p, b.norm_attn, x);
  const Var att = ad::attention(apply(p, b.query, n1), ad::matmul(n1, p[b.key]), apply(p, b.value, n1), heads);
  const Var h = ad::add(x, apply(p, b.out, att));
  const Var n2 = apply(p, b.norm_ff, h);
  return ad::add(h, apply(p, b.ff_out, ad::gelu(apply(p, b.ff_in, n2))));
}

/// Fixed sinusoidal position table, tokens x width.
inline Matrix sinusoidal_positions(Eigen::Index tokens, Eigen::Index width) {
  Matrix pe(tokens, width);
  for (Eigen::Index pos = 0; pos < tokens; ++pos) {
    for (Eigen::Index i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      pe(pos, i) = (i % 2 == 0) ? std::sin(static_cast<double>(pos) * rate) : std::cos(static_cast<double>(pos) * rate);
    }
  }
  return pe;
}

}  // namespace sceneaware::nn
