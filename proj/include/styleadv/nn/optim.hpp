#pragma once

#include <vector>

#include "styleadv/nn/layers.hpp"

namespace styleadv::nn {

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient
/// (PyTorch semantics). State is keyed by parameter traversal order, so one
/// optimizer must stay bound to one network.
template <class T>
class Sgd {
 public:
  explicit Sgd(SgdConfig cfg) : cfg_(cfg) {}

  void step(Layer<T>& net);
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }

 private:
  SgdConfig cfg_;
  std::vector<Tensor<T>> velocity_;
};

/// Step schedule: base * gamma^(number of milestones <= epoch).
double step_lr(double base, int epoch, const std::vector<int>& milestones, double gamma);

/// Adam over a single tensor, used for optimizing image pixels.
template <class T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Tensor<T>& x, const Tensor<T>& grad);
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace styleadv::nn
