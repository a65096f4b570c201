#pragma once

// Dense CPU kernels behind every network layer and loss.
//
// Two implementations share one signature set:
//   kernels::serial   -- direct loops, no blocking, no threads. Kept as the
//                        reference the parallel path is tested against.
//   kernels::parallel -- cache-blocked, OpenMP over independent output items.
// The unqualified kernels:: names forward to the parallel implementation.
//
// Every parallel kernel assigns each output element to exactly one thread and
// fixes the accumulation order, so results are independent of the thread count
// except where a reduction spans batch items (conv parameter gradients); those
// follow runtime::reduction_chunks.

#include "styleadv/tensor.hpp"

namespace styleadv::kernels {

struct ConvGeometry {
  Index batch = 1;
  Index in_channels = 1;
  Index in_h = 1;
  Index in_w = 1;
  Index out_channels = 1;
  Index kernel = 3;
  Index stride = 1;
  Index pad = 0;

  Index out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  Index out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  Index patch() const { return in_channels * kernel * kernel; }
};

struct PoolGeometry {
  Index planes = 1;  // batch * channels
  Index in_h = 1;
  Index in_w = 1;
  Index kernel = 2;
  Index stride = 2;
  Index pad = 0;

  Index out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  Index out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
};

#define STYLEADV_KERNEL_DECLS                                                                      \
  /* C[m,n] = alpha * op(A)[m,k] * op(B)[k,n] + beta * C. Row-major, contiguous.                 \
     A is stored m x k (k x m when trans_a); B is k x n (n x k when trans_b). */                  \
  template <class T>                                                                               \
  void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k, T alpha, const T* a,           \
            const T* b, T beta, T* c);                                                             \
                                                                                                   \
  /* y = conv(x, w) + bias; bias may be null. x: N,C,H,W  w: O,C,K,K  y: N,O,Ho,Wo */              \
  template <class T>                                                                               \
  void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);         \
                                                                                                   \
  /* dx = d(loss)/dx, overwritten. */                                                              \
  template <class T>                                                                               \
  void conv2d_backward_data(const ConvGeometry& g, const T* dy, const T* w, T* dx);                \
                                                                                                   \
  /* dw += d(loss)/dw, dbias += d(loss)/dbias (dbias may be null). */                              \
  template <class T>                                                                               \
  void conv2d_backward_params(const ConvGeometry& g, const T* x, const T* dy, T* dw, T* dbias);    \
                                                                                                   \
  /* Batch-statistics normalization over (N, HW) per channel. Writes y, the                        \
     normalized input xhat, the batch mean and biased variance per channel. */                     \
  template <class T>                                                                               \
  void batchnorm_forward_train(Index n, Index c, Index hw, const T* x, const T* gamma,            \
                               const T* beta, T eps, T* y, T* xhat, T* mean, T* var);              \
                                                                                                   \
  /* Backward of batchnorm_forward_train. dx overwritten; dgamma/dbeta accumulated                 \
     when non-null. */                                                                             \
  template <class T>                                                                               \
  void batchnorm_backward_train(Index n, Index c, Index hw, const T* dy, const T* xhat,           \
                                const T* gamma, const T* var, T eps, T* dx, T* dgamma,             \
                                T* dbeta);                                                         \
                                                                                                   \
  /* y[n,c,:] = scale[c] * x[n,c,:] + shift[c] */                                                  \
  template <class T>                                                                               \
  void channel_affine(Index n, Index c, Index hw, const T* x, const T* scale, const T* shift,     \
                      T* y);                                                                       \
                                                                                                   \
  template <class T>                                                                               \
  void relu_forward(Index count, const T* x, T* y);                                                \
  template <class T>                                                                               \
  void relu_backward(Index count, const T* x, const T* dy, T* dx);                                 \
                                                                                                   \
  /* Max pooling; argmax holds the flat input offset within each plane, -1 when                    \
     the window covers only padding. */                                                            \
  template <class T>                                                                               \
  void maxpool_forward(const PoolGeometry& g, const T* x, T* y, Index* argmax);                    \
  template <class T>                                                                               \
  void maxpool_backward(const PoolGeometry& g, const T* dy, const Index* argmax, T* dx);           \
                                                                                                   \
  /* Average pooling, padding counted in the divisor. */                                           \
  template <class T>                                                                               \
  void avgpool_forward(const PoolGeometry& g, const T* x, T* y);                                   \
  template <class T>                                                                               \
  void avgpool_backward(const PoolGeometry& g, const T* dy, T* dx);                                \
                                                                                                   \
  /* Per-plane spatial mean and population standard deviation,                                     \
     std = sqrt(max(var, var_floor)). */                                                           \
  template <class T>                                                                               \
  void channel_moments(Index planes, Index hw, const T* x, T var_floor, T* mean, T* std);          \
                                                                                                   \
  /* dx = dmean * dmean/dx + dstd * dstd/dx (overwritten). dstd/dx is zero on                      \
     planes whose variance sits at the floor. */                                                   \
  template <class T>                                                                               \
  void channel_moments_backward(Index planes, Index hw, const T* x, const T* mean, const T* std,  \
                                T var_floor, const T* dmean, const T* dstd, T* dx);

namespace serial {
STYLEADV_KERNEL_DECLS
}  // namespace serial

namespace parallel {
STYLEADV_KERNEL_DECLS
}  // namespace parallel

#undef STYLEADV_KERNEL_DECLS

using parallel::avgpool_backward;
using parallel::avgpool_forward;
using parallel::batchnorm_backward_train;
using parallel::batchnorm_forward_train;
using parallel::channel_affine;
using parallel::channel_moments;
using parallel::channel_moments_backward;
using parallel::conv2d_backward_data;
using parallel::conv2d_backward_params;
using parallel::conv2d_forward;
using parallel::gemm;
using parallel::maxpool_backward;
using parallel::maxpool_forward;
using parallel::relu_backward;
using parallel::relu_forward;

}  // namespace styleadv::kernels
