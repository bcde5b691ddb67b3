#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "affseg/common.hpp"

namespace affseg::ad {

template <class S>
using MatS = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

/// One value in the computation graph. Gradients are accumulated lazily; a
/// node's backprop closure reads its own grad and adds into its parents'.
template <class S>
struct Node {
  MatS<S> value;
  MatS<S> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
  bool needs_grad = false;

  void ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      grad = MatS<S>::Zero(value.rows(), value.cols());
  }
};

/// Records non-leaf nodes in creation order (which is already a topological
/// order) and replays them in reverse for backpropagation. Leaves (parameters,
/// constants) live outside the tape and survive clear().
template <class S>
class Tape {
 public:
  using NodeP = std::shared_ptr<Node<S>>;

  NodeP record(MatS<S> value, std::vector<NodeP> parents, std::function<void(Node<S>&)> backprop) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->needs_grad = false;
    for (const NodeP& p : parents) n->needs_grad = n->needs_grad || p->needs_grad;
    if (n->needs_grad) {
      n->parents = std::move(parents);
      n->backprop = std::move(backprop);
      steps_.push_back(n);
    }
    return n;
  }

  /// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
  void backward(const NodeP& root) {
    root->ensure_grad();
    root->grad.setOnes();
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
      Node<S>& n = **it;
      if (n.grad.size() == 0 || !n.backprop) continue;
      n.backprop(n);
    }
  }

  void clear() { steps_.clear(); }
  size_t size() const { return steps_.size(); }

 private:
  std::vector<NodeP> steps_;
};

/// Lightweight handle pairing a node with the tape its descendants record on.
template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  std::shared_ptr<Node<S>> node;

  const MatS<S>& value() const { return node->value; }
  Eigen::Index rows() const { return node->value.rows(); }
  Eigen::Index cols() const { return node->value.cols(); }
  S scalar() const { return node->value(0, 0); }
};

template <class S>
Var<S> leaf(Tape<S>& tape, MatS<S> value, bool needs_grad) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->needs_grad = needs_grad;
  if (needs_grad) n->ensure_grad();
  return {&tape, n};
}

template <class S>
Var<S> constant(Tape<S>& tape, MatS<S> value) {
  return leaf(tape, std::move(value), false);
}

template <class S>
Var<S> from_node(Tape<S>& tape, std::shared_ptr<Node<S>> node) {
  return {&tape, std::move(node)};
}

namespace detail {
template <class S>
void add_grad(const std::shared_ptr<Node<S>>& p, const MatS<S>& g) {
  if (!p->needs_grad) return;
  p->ensure_grad();
  p->grad += g;
}
}  // namespace detail

// ---- arithmetic -----------------------------------------------------------

template <class S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  auto pa = a.node, pb = b.node;
  return from_node(*a.tape, a.tape->record(
      MatS<S>(pa->value * pb->value), {pa, pb}, [pa, pb](Node<S>& n) {
        detail::add_grad<S>(pa, n.grad * pb->value.transpose());
        detail::add_grad<S>(pb, pa->value.transpose() * n.grad);
      }));
}

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("autograd add: shape mismatch");
  auto pa = a.node, pb = b.node;
  return from_node(*a.tape, a.tape->record(
      MatS<S>(pa->value + pb->value), {pa, pb}, [pa, pb](Node<S>& n) {
        detail::add_grad<S>(pa, n.grad);
        detail::add_grad<S>(pb, n.grad);
      }));
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("autograd sub: shape mismatch");
  auto pa = a.node, pb = b.node;
  return from_node(*a.tape, a.tape->record(
      MatS<S>(pa->value - pb->value), {pa, pb}, [pa, pb](Node<S>& n) {
        detail::add_grad<S>(pa, n.grad);
        detail::add_grad<S>(pb, MatS<S>(-n.grad));
      }));
}

template <class S>
Var<S> cmul(const Var<S>& a, const Var<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("autograd cmul: shape mismatch");
  auto pa = a.node, pb = b.node;
  return from_node(*a.tape, a.tape->record(
      MatS<S>(pa->value.cwiseProduct(pb->value)), {pa, pb}, [pa, pb](Node<S>& n) {
        detail::add_grad<S>(pa, n.grad.cwiseProduct(pb->value));
        detail::add_grad<S>(pb, n.grad.cwiseProduct(pa->value));
      }));
}

template <class S>
Var<S> cdiv(const Var<S>& a, const Var<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("autograd cdiv: shape mismatch");
  auto pa = a.node, pb = b.node;
  return from_node(*a.tape, a.tape->record(
      MatS<S>(pa->value.cwiseQuotient(pb->value)), {pa, pb}, [pa, pb](Node<S>& n) {
        detail::add_grad<S>(pa, n.grad.cwiseQuotient(pb->value));
        detail::add_grad<S>(pb, MatS<S>(-n.grad.cwiseProduct(pa->value)
                                             .cwiseQuotient(pb->value.cwiseProduct(pb->value))));
      }));
}

template <class S>
Var<S> scale(const Var<S>& a, S s) {
  auto pa = a.node;
  return from_node(*a.tape, a.tape->record(
      MatS<S>(pa->value * s), {pa}, [pa, s](Node<S>& n) { detail::add_grad<S>(pa, MatS<S>(n.grad * s)); }));
}

template <class S>
Var<S> add_scalar(const Var<S>& a, S s) {
  auto pa = a.node;
  return from_node(*a.tape, a.tape->record(
      MatS<S>(pa->value.array() + s), {pa}, [pa](Node<S>& n) { detail::add_grad<S>(pa, n.grad); }));
}

template <class S>
Var<S> neg(const Var<S>& a) { return scale(a, S(-1)); }

template <class S>
Var<S> transpose(const Var<S>& a) {
  auto pa = a.node;
  return from_node(*a.tape, a.tape->record(
      MatS<S>(pa->value.transpose()), {pa},
      [pa](Node<S>& n) { detail::add_grad<S>(pa, MatS<S>(n.grad.transpose())); }));
}

/// rows(a) x cols(a) plus a 1 x cols(a) row vector broadcast down the rows.
template <class S>
Var<S> add_rowvec(const Var<S>& a, const Var<S>& r) {
  if (r.rows() != 1 || r.cols() != a.cols()) throw InvalidInput("autograd add_rowvec: shape mismatch");
  auto pa = a.node, pr = r.node;
  return from_node(*a.tape, a.tape->record(
      MatS<S>(pa->value.rowwise() + pr->value.row(0)), {pa, pr}, [pa, pr](Node<S>& n) {
        detail::add_grad<S>(pa, n.grad);
        detail::add_grad<S>(pr, MatS<S>(n.grad.colwise().sum()));
      }));
}

/// Replicates a 1 x D row n times.
template <class S>
Var<S> broadcast_rows(const Var<S>& r, Eigen::Index n) {
  if (r.rows() != 1) throw InvalidInput("autograd broadcast_rows: input must be a row");
  auto pr = r.node;
  return from_node(*r.tape, r.tape->record(
      MatS<S>(pr->value.replicate(n, 1)), {pr},
      [pr](Node<S>& n_) { detail::add_grad<S>(pr, MatS<S>(n_.grad.colwise().sum())); }));
}

// ---- elementwise nonlinearities -------------------------------------------

template <class S>
Var<S> square(const Var<S>& a) {
  auto pa = a.node;
  return from_node(*a.tape, a.tape->record(
      MatS<S>(pa->value.array().square()), {pa}, [pa](Node<S>& n) {
        detail::add_grad<S>(pa, MatS<S>(S(2) * n.grad.cwiseProduct(pa->value)));
      }));
}

template <class S>
Var<S> sqrt_op(const Var<S>& a) {
  auto pa = a.node;
  MatS<S> v = pa->value.array().sqrt();
  auto pv = std::make_shared<MatS<S>>(v);
  return from_node(*a.tape, a.tape->record(std::move(v), {pa}, [pa, pv](Node<S>& n) {
    detail::add_grad<S>(pa, MatS<S>(n.grad.array() / (S(2) * pv->array())));
  }));
}

template <class S>
Var<S> log_op(const Var<S>& a) {
  auto pa = a.node;
  return from_node(*a.tape, a.tape->record(
      MatS<S>(pa->value.array().log()), {pa}, [pa](Node<S>& n) {
        detail::add_grad<S>(pa, MatS<S>(n.grad.cwiseQuotient(pa->value)));
      }));
}

template <class S>
Var<S> exp_op(const Var<S>& a) {
  auto pa = a.node;
  MatS<S> v = pa->value.array().exp();
  auto pv = std::make_shared<MatS<S>>(v);
  return from_node(*a.tape, a.tape->record(std::move(v), {pa}, [pa, pv](Node<S>& n) {
    detail::add_grad<S>(pa, MatS<S>(n.grad.cwiseProduct(*pv)));
  }));
}

template <class S>
Var<S> sigmoid(const Var<S>& a) {
  auto pa = a.node;
  MatS<S> v = pa->value.unaryExpr([](S x) {
    return x >= 0 ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
  });
  auto pv = std::make_shared<MatS<S>>(v);
  return from_node(*a.tape, a.tape->record(std::move(v), {pa}, [pa, pv](Node<S>& n) {
    detail::add_grad<S>(pa, MatS<S>(n.grad.array() * pv->array() * (S(1) - pv->array())));
  }));
}

template <class S>
Var<S> softplus(const Var<S>& a) {
  auto pa = a.node;
  MatS<S> v = pa->value.unaryExpr([](S x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  return from_node(*a.tape, a.tape->record(std::move(v), {pa}, [pa](Node<S>& n) {
    MatS<S> sig = pa->value.unaryExpr([](S x) {
      return x >= 0 ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
    });
    detail::add_grad<S>(pa, MatS<S>(n.grad.cwiseProduct(sig)));
  }));
}

template <class S>
Var<S> gelu(const Var<S>& a) {
  auto pa = a.node;
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kB = 0.044715;
  MatS<S> v = pa->value.unaryExpr([&](S x) {
    const S t = std::tanh(S(kC) * (x + S(kB) * x * x * x));
    return S(0.5) * x * (S(1) + t);
  });
  return from_node(*a.tape, a.tape->record(std::move(v), {pa}, [pa](Node<S>& n) {
    MatS<S> d = pa->value.unaryExpr([&](S x) {
      const S u = S(kC) * (x + S(kB) * x * x * x);
      const S t = std::tanh(u);
      const S du = S(kC) * (S(1) + S(3) * S(kB) * x * x);
      return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * du;
    });
    detail::add_grad<S>(pa, MatS<S>(n.grad.cwiseProduct(d)));
  }));
}

// ---- reductions & rearrangement -------------------------------------------

template <class S>
Var<S> sum(const Var<S>& a) {
  auto pa = a.node;
  MatS<S> v(1, 1);
  v(0, 0) = pa->value.sum();
  return from_node(*a.tape, a.tape->record(std::move(v), {pa}, [pa](Node<S>& n) {
    detail::add_grad<S>(pa, MatS<S>(MatS<S>::Constant(pa->value.rows(), pa->value.cols(), n.grad(0, 0))));
  }));
}

template <class S>
Var<S> mean(const Var<S>& a) {
  return scale(sum(a), S(1) / S(a.rows() * a.cols()));
}

/// 1 x D column-wise mean over the rows.
template <class S>
Var<S> mean_rows(const Var<S>& a) {
  auto pa = a.node;
  const S inv = S(1) / S(pa->value.rows());
  return from_node(*a.tape, a.tape->record(
      MatS<S>(pa->value.colwise().mean()), {pa}, [pa, inv](Node<S>& n) {
        detail::add_grad<S>(pa, MatS<S>(n.grad.replicate(pa->value.rows(), 1) * inv));
      }));
}

/// 1 x D column-wise max over the rows; gradient routes to the first argmax.
template <class S>
Var<S> max_rows(const Var<S>& a) {
  auto pa = a.node;
  const Eigen::Index rows = pa->value.rows(), cols = pa->value.cols();
  auto argmax = std::make_shared<std::vector<Eigen::Index>>(cols);
  MatS<S> v(1, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < rows; ++r)
      if (pa->value(r, c) > pa->value(best, c)) best = r;
    (*argmax)[static_cast<size_t>(c)] = best;
    v(0, c) = pa->value(best, c);
  }
  return from_node(*a.tape, a.tape->record(std::move(v), {pa}, [pa, argmax](Node<S>& n) {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (Eigen::Index c = 0; c < pa->value.cols(); ++c)
      pa->grad((*argmax)[static_cast<size_t>(c)], c) += n.grad(0, c);
  }));
}

template <class S>
Var<S> gather_rows(const Var<S>& a, std::vector<Eigen::Index> idx) {
  auto pa = a.node;
  auto pidx = std::make_shared<std::vector<Eigen::Index>>(std::move(idx));
  MatS<S> v(static_cast<Eigen::Index>(pidx->size()), pa->value.cols());
  for (size_t i = 0; i < pidx->size(); ++i) {
    if ((*pidx)[i] < 0 || (*pidx)[i] >= pa->value.rows())
      throw InvalidInput("autograd gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = pa->value.row((*pidx)[i]);
  }
  return from_node(*a.tape, a.tape->record(std::move(v), {pa}, [pa, pidx](Node<S>& n) {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < pidx->size(); ++i)
      pa->grad.row((*pidx)[i]) += n.grad.row(static_cast<Eigen::Index>(i));
  }));
}

template <class S>
Var<S> slice_cols(const Var<S>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 1 || start + count > a.cols())
    throw InvalidInput("autograd slice_cols: range out of bounds");
  auto pa = a.node;
  return from_node(*a.tape, a.tape->record(
      MatS<S>(pa->value.middleCols(start, count)), {pa}, [pa, start, count](Node<S>& n) {
        if (!pa->needs_grad) return;
        pa->ensure_grad();
        pa->grad.middleCols(start, count) += n.grad;
      }));
}

template <class S>
Var<S> hconcat(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw InvalidInput("autograd hconcat: empty list");
  Eigen::Index rows = parts[0].rows(), cols = 0;
  std::vector<std::shared_ptr<Node<S>>> parents;
  for (const Var<S>& p : parts) {
    if (p.rows() != rows) throw InvalidInput("autograd hconcat: row mismatch");
    cols += p.cols();
    parents.push_back(p.node);
  }
  MatS<S> v(rows, cols);
  Eigen::Index at = 0;
  for (const Var<S>& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  auto plist = std::make_shared<std::vector<std::shared_ptr<Node<S>>>>(parents);
  return from_node(*parts[0].tape, parts[0].tape->record(std::move(v), parents, [plist](Node<S>& n) {
    Eigen::Index at2 = 0;
    for (const auto& p : *plist) {
      detail::add_grad<S>(p, MatS<S>(n.grad.middleCols(at2, p->value.cols())));
      at2 += p->value.cols();
    }
  }));
}

template <class S>
Var<S> vconcat(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw InvalidInput("autograd vconcat: empty list");
  Eigen::Index cols = parts[0].cols(), rows = 0;
  std::vector<std::shared_ptr<Node<S>>> parents;
  for (const Var<S>& p : parts) {
    if (p.cols() != cols) throw InvalidInput("autograd vconcat: column mismatch");
    rows += p.rows();
    parents.push_back(p.node);
  }
  MatS<S> v(rows, cols);
  Eigen::Index at = 0;
  for (const Var<S>& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  auto plist = std::make_shared<std::vector<std::shared_ptr<Node<S>>>>(parents);
  return from_node(*parts[0].tape, parts[0].tape->record(std::move(v), parents, [plist](Node<S>& n) {
    Eigen::Index at2 = 0;
    for (const auto& p : *plist) {
      detail::add_grad<S>(p, MatS<S>(n.grad.middleRows(at2, p->value.rows())));
      at2 += p->value.rows();
    }
  }));
}

// ---- structured ops --------------------------------------------------------

template <class S>
Var<S> row_softmax(const Var<S>& a) {
  auto pa = a.node;
  MatS<S> v = pa->value;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const S m = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - m).exp();
    v.row(r) /= v.row(r).sum();
  }
  auto pv = std::make_shared<MatS<S>>(v);
  return from_node(*a.tape, a.tape->record(std::move(v), {pa}, [pa, pv](Node<S>& n) {
    MatS<S> g(n.grad.rows(), n.grad.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const S dot = n.grad.row(r).dot(pv->row(r));
      g.row(r) = (pv->row(r).array() * (n.grad.row(r).array() - dot)).matrix();
    }
    detail::add_grad<S>(pa, g);
  }));
}

/// Row-wise layer normalization with learnable gain/bias (each 1 x D).
template <class S>
Var<S> layer_norm(const Var<S>& a, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-5)) {
  if (gamma.rows() != 1 || beta.rows() != 1 || gamma.cols() != a.cols() || beta.cols() != a.cols())
    throw InvalidInput("autograd layer_norm: gain/bias must be 1 x D");
  auto pa = a.node, pg = gamma.node, pb = beta.node;
  const Eigen::Index rows = pa->value.rows(), cols = pa->value.cols();
  auto xhat = std::make_shared<MatS<S>>(rows, cols);
  auto inv_std = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
  MatS<S> v(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S mu = pa->value.row(r).mean();
    const S var = (pa->value.row(r).array() - mu).square().mean();
    const S istd = S(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = istd;
    xhat->row(r) = (pa->value.row(r).array() - mu) * istd;
    v.row(r) = xhat->row(r).cwiseProduct(pg->value.row(0)) + pb->value.row(0);
  }
  return from_node(*a.tape, a.tape->record(std::move(v), {pa, pg, pb},
                                           [pa, pg, pb, xhat, inv_std](Node<S>& n) {
    detail::add_grad<S>(pg, MatS<S>(n.grad.cwiseProduct(*xhat).colwise().sum()));
    detail::add_grad<S>(pb, MatS<S>(n.grad.colwise().sum()));
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    using RowS = Eigen::Matrix<S, 1, Eigen::Dynamic>;
    for (Eigen::Index r = 0; r < pa->value.rows(); ++r) {
      const RowS dxhat = n.grad.row(r).cwiseProduct(pg->value.row(0));
      const S m1 = dxhat.mean();
      const S m2 = dxhat.cwiseProduct(xhat->row(r)).mean();
      pa->grad.row(r) += ((dxhat.array() - m1 - xhat->row(r).array() * m2) *
                          (*inv_std)[static_cast<size_t>(r)])
                             .matrix();
    }
  }));
}

/// Row-wise l2 normalization; rows with norm below eps are scaled by 1/eps.
template <class S>
Var<S> l2_normalize_rows(const Var<S>& a, S eps = S(1e-8)) {
  auto pa = a.node;
  const Eigen::Index rows = pa->value.rows();
  auto norms = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
  MatS<S> v(rows, pa->value.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S n0 = pa->value.row(r).norm();
    const S n1 = std::max(n0, eps);
    (*norms)[static_cast<size_t>(r)] = n0;
    v.row(r) = pa->value.row(r) / n1;
  }
  auto pv = std::make_shared<MatS<S>>(v);
  return from_node(*a.tape, a.tape->record(std::move(v), {pa}, [pa, pv, norms, eps](Node<S>& n) {
    if (!pa->needs_grad) return;
    pa->ensure_grad();
    for (Eigen::Index r = 0; r < pa->value.rows(); ++r) {
      const S n0 = (*norms)[static_cast<size_t>(r)];
      if (n0 > eps) {
        const S dot = n.grad.row(r).dot(pv->row(r));
        pa->grad.row(r) += (n.grad.row(r) - pv->row(r) * dot) / n0;
      } else {
        pa->grad.row(r) += n.grad.row(r) / eps;
      }
    }
  }));
}

}  // namespace affseg::ad
