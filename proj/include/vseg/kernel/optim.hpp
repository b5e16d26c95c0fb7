#pragma once

#include <cstddef>
#include <vector>

#include "vseg/errors.hpp"
#include "vseg/kernel/tensor.hpp"

namespace vseg {

/// Classical momentum: v <- momentum * v + g; p <- p - lr * v.
template <class T>
void sgd_momentum_step(std::vector<T>& params, const std::vector<T>& grads, std::vector<T>& velocity, double lr,
                       double momentum) {
  if (grads.size() != params.size()) throw ShapeError("sgd_momentum_step: gradient length mismatch");
  if (velocity.empty()) velocity.assign(params.size(), T(0));
  if (velocity.size() != params.size()) throw ShapeError("sgd_momentum_step: velocity length mismatch");
  const T m = static_cast<T>(momentum), step = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = m * velocity[i] + grads[i];
    params[i] -= step * velocity[i];
  }
}

/// Momentum SGD over a fixed list of parameter tensors, one velocity
/// buffer per tensor.
template <class T>
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor<T>> params, double lr, double momentum)
      : params_(std::move(params)), velocity_(params_.size()), lr_(lr), momentum_(momentum) {}

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      sgd_momentum_step(params_[i].mutable_values(), params_[i].grad(), velocity_[i], lr_, momentum_);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  double momentum() const { return momentum_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
  double lr_;
  double momentum_;
};

}  // namespace vseg
