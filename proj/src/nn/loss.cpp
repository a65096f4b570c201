#include "styleadv/nn/loss.hpp"

#include <cmath>
#include <string>

namespace styleadv::nn {
namespace {

template <class T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2 || t.dim(0) == 0 || t.dim(1) == 0) {
    throw ShapeError(std::string(what) + " must be a non-empty N x K matrix, got " + t.shape().str());
  }
}

}  // namespace

template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_matrix(logits, "logits");
  const Index n = logits.dim(0), k = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (Index i = 0; i < n; ++i) {
    const T* row = logits.data() + i * k;
    T* out = p.data() + i * k;
    double m = row[0];
    for (Index j = 1; j < k; ++j) m = std::max<double>(m, row[j]);
    double z = 0.0;
    for (Index j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - m);
    for (Index j = 0; j < k; ++j) out[j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - m) / z);
  }
  return p;
}

template <class T>
LossAndGrad<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  require_matrix(logits, "logits");
  const Index n = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("label count " + std::to_string(labels.size()) + " does not match batch " +
                     std::to_string(n));
  }
  LossAndGrad<T> r{0.0, softmax(logits)};
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw ValidationError("label " + std::to_string(y) + " out of range");
    T* g = r.grad.data() + i * k;
    r.loss -= std::log(std::max<double>(g[y], 1e-300));
    g[y] -= T(1);
    for (Index j = 0; j < k; ++j) g[j] /= static_cast<T>(n);
  }
  r.loss /= static_cast<double>(n);
  return r;
}

template <class T>
LossAndGrad<T> soft_cross_entropy(const Tensor<T>& logits, const Tensor<T>& targets) {
  require_matrix(logits, "logits");
  if (!(targets.shape() == logits.shape())) {
    throw ShapeError("target shape " + targets.shape().str() + " does not match logits " +
                     logits.shape().str());
  }
  const Index n = logits.dim(0), k = logits.dim(1);
  LossAndGrad<T> r{0.0, softmax(logits)};
  for (Index i = 0; i < n; ++i) {
    T* g = r.grad.data() + i * k;
    const T* t = targets.data() + i * k;
    for (Index j = 0; j < k; ++j) {
      r.loss -= static_cast<double>(t[j]) * std::log(std::max<double>(g[j], 1e-300));
      g[j] = (g[j] - t[j]) / static_cast<T>(n);
    }
  }
  r.loss /= static_cast<double>(n);
  return r;
}

template <class T>
std::vector<int> argmax_rows(const Tensor<T>& scores) {
  require_matrix(scores, "scores");
  const Index n = scores.dim(0), k = scores.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const T* row = scores.data() + i * k;
    int best = 0;
    for (Index j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = static_cast<int>(j);
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

#define STYLEADV_LOSS(T)                                                                  \
  template Tensor<T> softmax(const Tensor<T>&);                                           \
  template LossAndGrad<T> cross_entropy(const Tensor<T>&, const std::vector<int>&);       \
  template LossAndGrad<T> soft_cross_entropy(const Tensor<T>&, const Tensor<T>&);         \
  template std::vector<int> argmax_rows(const Tensor<T>&);
STYLEADV_LOSS(float)
STYLEADV_LOSS(double)
#undef STYLEADV_LOSS

}  // namespace styleadv::nn
