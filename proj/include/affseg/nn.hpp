#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "affseg/array_file.hpp"
#include "affseg/autograd.hpp"
#include "affseg/common.hpp"
#include "affseg/rng.hpp"

namespace affseg::nn {

/// Ordered, named registry of trainable leaves. Iteration (and therefore
/// serialization and optimizer traversal) follows insertion order.
template <class S>
class Params {
 public:
  using NodeP = std::shared_ptr<ad::Node<S>>;

  NodeP add(const std::string& name, ad::MatS<S> init) {
    if (index_.count(name)) throw InvalidConfig("params: duplicate parameter '" + name + "'");
    auto n = std::make_shared<ad::Node<S>>();
    n->value = std::move(init);
    n->needs_grad = true;
    n->ensure_grad();
    index_[name] = nodes_.size();
    nodes_.push_back(n);
    names_.push_back(name);
    return n;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  NodeP node(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidConfig("params: unknown parameter '" + name + "'");
    return nodes_[it->second];
  }

  ad::Var<S> var(ad::Tape<S>& tape, const std::string& name) const {
    return ad::from_node(tape, node(name));
  }

  const std::vector<std::string>& names() const { return names_; }
  size_t size() const { return nodes_.size(); }

  void zero_grad() {
    for (auto& n : nodes_) n->grad.setZero();
  }

  /// Total parameter scalars (for reporting).
  size_t scalar_count() const {
    size_t c = 0;
    for (const auto& n : nodes_) c += static_cast<size_t>(n->value.size());
    return c;
  }

  void save_into(ArrayFile& file, const std::string& prefix = "") const {
    for (size_t i = 0; i < nodes_.size(); ++i) {
      Mat m = nodes_[i]->value.template cast<double>();
      file.put(prefix + names_[i], m, ArrayFile::DType::F32);
    }
  }

  /// Loads every registered parameter from the archive; shapes must match.
  void load_from(const ArrayFile& file, const std::string& prefix = "") {
    for (size_t i = 0; i < nodes_.size(); ++i) {
      const std::string key = prefix + names_[i];
      if (!file.contains(key)) throw IoError("checkpoint: missing parameter '" + key + "'");
      const Mat m = file.mat(key);
      if (m.rows() != nodes_[i]->value.rows() || m.cols() != nodes_[i]->value.cols())
        throw IoError("checkpoint: parameter '" + key + "' has mismatched shape");
      nodes_[i]->value = m.template cast<S>();
      nodes_[i]->grad.setZero();
    }
  }

 private:
  std::vector<NodeP> nodes_;
  std::vector<std::string> names_;
  std::map<std::string, size_t> index_;
};

namespace init {

/// Truncated normal (|z| <= 2 std) init for projections, per common ViT practice.
template <class S>
ad::MatS<S> trunc_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols, double std_dev = 0.02) {
  ad::MatS<S> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<S>(rng.truncated_normal(std_dev));
  return m;
}

template <class S>
ad::MatS<S> zeros(Eigen::Index rows, Eigen::Index cols) {
  return ad::MatS<S>::Zero(rows, cols);
}

template <class S>
ad::MatS<S> ones(Eigen::Index rows, Eigen::Index cols) {
  return ad::MatS<S>::Ones(rows, cols);
}

}  // namespace init

/// y = x W + b, with W: in x out, b: 1 x out.
template <class S>
struct Linear {
  std::string w_name, b_name;

  static Linear create(Params<S>& params, const std::string& prefix, Eigen::Index in,
                       Eigen::Index out, Rng& rng) {
    Linear l{prefix + ".w", prefix + ".b"};
    params.add(l.w_name, init::trunc_normal<S>(rng, in, out));
    params.add(l.b_name, init::zeros<S>(1, out));
    return l;
  }

  ad::Var<S> operator()(ad::Tape<S>& tape, const Params<S>& params, const ad::Var<S>& x) const {
    return ad::add_rowvec(ad::matmul(x, params.var(tape, w_name)), params.var(tape, b_name));
  }
};

template <class S>
struct LayerNorm {
  std::string g_name, b_name;

  static LayerNorm create(Params<S>& params, const std::string& prefix, Eigen::Index dim) {
    LayerNorm l{prefix + ".gamma", prefix + ".beta"};
    params.add(l.g_name, init::ones<S>(1, dim));
    params.add(l.b_name, init::zeros<S>(1, dim));
    return l;
  }

  ad::Var<S> operator()(ad::Tape<S>& tape, const Params<S>& params, const ad::Var<S>& x) const {
    return ad::layer_norm(x, params.var(tape, g_name), params.var(tape, b_name));
  }
};

/// Two-layer feed-forward with GELU.
template <class S>
struct Mlp {
  Linear<S> fc1, fc2;

  static Mlp create(Params<S>& params, const std::string& prefix, Eigen::Index in,
                    Eigen::Index hidden, Eigen::Index out, Rng& rng) {
    return {Linear<S>::create(params, prefix + ".fc1", in, hidden, rng),
            Linear<S>::create(params, prefix + ".fc2", hidden, out, rng)};
  }

  ad::Var<S> operator()(ad::Tape<S>& tape, const Params<S>& params, const ad::Var<S>& x) const {
    return fc2(tape, params, ad::gelu(fc1(tape, params, x)));
  }
};

template <class S>
struct MultiHeadAttention {
  Linear<S> q, k, v, proj;
  int heads = 1;
  Eigen::Index dim = 0;

  static MultiHeadAttention create(Params<S>& params, const std::string& prefix, Eigen::Index dim,
                                   int heads, Rng& rng) {
    if (dim % heads != 0) throw InvalidConfig("attention: dim must be divisible by heads");
    MultiHeadAttention a{Linear<S>::create(params, prefix + ".q", dim, dim, rng),
                         Linear<S>::create(params, prefix + ".k", dim, dim, rng),
                         Linear<S>::create(params, prefix + ".v", dim, dim, rng),
                         Linear<S>::create(params, prefix + ".proj", dim, dim, rng), heads, dim};
    return a;
  }

  ad::Var<S> operator()(ad::Tape<S>& tape, const Params<S>& params, const ad::Var<S>& x) const {
    const Eigen::Index hd = dim / heads;
    const ad::Var<S> qs = q(tape, params, x);
    const ad::Var<S> ks = k(tape, params, x);
    const ad::Var<S> vs = v(tape, params, x);
    std::vector<ad::Var<S>> outs;
    outs.reserve(static_cast<size_t>(heads));
    const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(hd));
    for (int h = 0; h < heads; ++h) {
      const ad::Var<S> qh = ad::slice_cols(qs, h * hd, hd);
      const ad::Var<S> kh = ad::slice_cols(ks, h * hd, hd);
      const ad::Var<S> vh = ad::slice_cols(vs, h * hd, hd);
      const ad::Var<S> att = ad::row_softmax(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt));
      outs.push_back(ad::matmul(att, vh));
    }
    return proj(tape, params, ad::hconcat(outs));
  }
};

/// Pre-norm transformer block: x += attn(ln1(x)); x += mlp(ln2(x)).
template <class S>
struct TransformerBlock {
  LayerNorm<S> ln1, ln2;
  MultiHeadAttention<S> attn;
  Mlp<S> mlp;

  static TransformerBlock create(Params<S>& params, const std::string& prefix, Eigen::Index dim,
                                 int heads, Rng& rng, Eigen::Index mlp_ratio = 4) {
    return {LayerNorm<S>::create(params, prefix + ".ln1", dim),
            LayerNorm<S>::create(params, prefix + ".ln2", dim),
            MultiHeadAttention<S>::create(params, prefix + ".attn", dim, heads, rng),
            Mlp<S>::create(params, prefix + ".mlp", dim, dim * mlp_ratio, dim, rng)};
  }

  ad::Var<S> operator()(ad::Tape<S>& tape, const Params<S>& params, const ad::Var<S>& x) const {
    ad::Var<S> y = ad::add(x, attn(tape, params, ln1(tape, params, x)));
    return ad::add(y, mlp(tape, params, ln2(tape, params, y)));
  }
};

}  // namespace affseg::nn
