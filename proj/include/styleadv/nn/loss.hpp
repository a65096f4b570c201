#pragma once

#include <vector>

#include "styleadv/tensor.hpp"

namespace styleadv::nn {

/// Row-wise softmax of N x K logits, computed with the max-shift trick.
template <class T>
Tensor<T> softmax(const Tensor<T>& logits);

template <class T>
struct LossAndGrad {
  double loss = 0.0;
  Tensor<T> grad;  // d(loss)/d(logits)
};

/// Mean cross-entropy against integer labels.
template <class T>
LossAndGrad<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

/// Mean cross-entropy against per-row target distributions (N x K).
template <class T>
LossAndGrad<T> soft_cross_entropy(const Tensor<T>& logits, const Tensor<T>& targets);

/// Index of the largest entry in each row; ties go to the lowest index.
template <class T>
std::vector<int> argmax_rows(const Tensor<T>& scores);

}  // namespace styleadv::nn
