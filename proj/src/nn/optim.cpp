#include "styleadv/nn/optim.hpp"

#include <cmath>

namespace styleadv::nn {

template <class T>
void Sgd<T>::step(Layer<T>& net) {
  std::size_t i = 0;
  net.visit_parameters([&](Parameter<T>& p) {
    if (i == velocity_.size()) velocity_.emplace_back(p.value.shape());
    Tensor<T>& v = velocity_[i++];
    if (!(v.shape() == p.value.shape())) throw ShapeError("optimizer state does not match network");
    const T lr = static_cast<T>(cfg_.lr), mu = static_cast<T>(cfg_.momentum);
    const T wd = static_cast<T>(cfg_.weight_decay);
    T* w = p.value.data();
    const T* g = p.grad.data();
    T* vel = v.data();
    for (Index j = 0; j < p.value.numel(); ++j) {
      const T d = g[j] + wd * w[j];
      vel[j] = mu * vel[j] + d;
      w[j] -= lr * vel[j];
    }
  });
}

double step_lr(double base, int epoch, const std::vector<int>& milestones, double gamma) {
  double lr = base;
  for (int m : milestones) {
    if (epoch >= m) lr *= gamma;
  }
  return lr;
}

template <class T>
void Adam<T>::step(Tensor<T>& x, const Tensor<T>& grad) {
  if (!(x.shape() == grad.shape())) throw ShapeError("Adam gradient shape mismatch");
  const auto n = static_cast<std::size_t>(x.numel());
  if (m_.empty()) {
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
  }
  if (m_.size() != n) throw ShapeError("Adam state does not match tensor");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  T* px = x.data();
  const T* pg = grad.data();
  for (std::size_t j = 0; j < n; ++j) {
    const double g = pg[j];
    m_[j] = beta1_ * m_[j] + (1.0 - beta1_) * g;
    v_[j] = beta2_ * v_[j] + (1.0 - beta2_) * g * g;
    px[j] = static_cast<T>(px[j] - lr_ * (m_[j] / c1) / (std::sqrt(v_[j] / c2) + eps_));
  }
}

template class Sgd<float>;
template class Sgd<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace styleadv::nn
