#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "affseg/autograd.hpp"
#include "affseg/common.hpp"

namespace affseg::optim {

/// Linear warmup to base_lr, then cosine decay to min_lr over the remaining
/// epochs. `epoch` is zero-based.
inline double cosine_warmup_lr(double base_lr, int epoch, int total_epochs, int warmup_epochs,
                               double min_lr = 0.0) {
  if (total_epochs < 1) throw InvalidConfig("lr schedule: total_epochs must be positive");
  if (warmup_epochs < 0 || warmup_epochs > total_epochs)
    throw InvalidConfig("lr schedule: warmup must lie within total epochs");
  if (epoch < warmup_epochs) return base_lr * double(epoch + 1) / double(warmup_epochs);
  const int span = total_epochs - warmup_epochs;
  if (span <= 1) return base_lr;
  // progress stays below 1 so the final epoch keeps a small positive rate.
  const double progress = double(epoch - warmup_epochs) / double(span);
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(M_PI * progress));
}

/// Adam with decoupled weight decay. Parameters are organized into groups,
/// each with its own learning-rate scale (the differential-LR mechanism).
/// Decay applies only to matrices with >= 2 rows: biases, norm gains, and
/// 1 x D embedding rows are exempt.
template <class S>
class AdamW {
 public:
  using NodeP = std::shared_ptr<ad::Node<S>>;

  struct Group {
    std::vector<NodeP> params;
    double lr_scale = 1.0;
  };

  AdamW(std::vector<Group> groups, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
        double weight_decay = 0.05)
      : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps), decay_(weight_decay) {
    for (const Group& g : groups_) {
      for (const NodeP& p : g.params) {
        m_.push_back(ad::MatS<S>::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(ad::MatS<S>::Zero(p->value.rows(), p->value.cols()));
      }
    }
  }

  void zero_grad() {
    for (Group& g : groups_)
      for (NodeP& p : g.params) p->grad.setZero();
  }

  /// One update using grads accumulated since the last zero_grad. `base_lr`
  /// is multiplied by each group's lr_scale.
  void step(double base_lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    size_t slot = 0;
    for (Group& g : groups_) {
      const S lr = static_cast<S>(base_lr * g.lr_scale);
      for (NodeP& p : g.params) {
        ad::MatS<S>& m = m_[slot];
        ad::MatS<S>& v = v_[slot];
        ++slot;
        m = static_cast<S>(beta1_) * m + static_cast<S>(1.0 - beta1_) * p->grad;
        v = static_cast<S>(beta2_) * v.array().matrix() +
            static_cast<S>(1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
        const auto m_hat = m.array() / static_cast<S>(bc1);
        const auto v_hat = v.array() / static_cast<S>(bc2);
        p->value.array() -= lr * (m_hat / (v_hat.sqrt() + static_cast<S>(eps_)));
        if (decay_ > 0 && p->value.rows() >= 2)
          p->value.array() -= lr * static_cast<S>(decay_) * p->value.array();
      }
    }
  }

  long step_count() const { return t_; }

 private:
  std::vector<Group> groups_;
  std::vector<ad::MatS<S>> m_, v_;
  double beta1_, beta2_, eps_, decay_;
  long t_ = 0;
};

}  // namespace affseg::optim
