// Reference kernels: direct loops, written for obviousness rather than speed.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "styleadv/kernels/kernels.hpp"
#include "kernels/instantiate.hpp"

namespace styleadv::kernels::serial {

template <class T>
void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k, T alpha, const T* a, const T* b,
          T beta, T* c) {
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      T acc = 0;
      for (Index p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * m + i] : a[i * k + p];
        const T bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = alpha * acc + (beta == T(0) ? T(0) : beta * c[i * n + j]);
    }
  }
}

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const Index oh = g.out_h(), ow = g.out_w();
  for (Index n = 0; n < g.batch; ++n)
    for (Index o = 0; o < g.out_channels; ++o)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
          T acc = bias ? bias[o] : T(0);
          for (Index c = 0; c < g.in_channels; ++c)
            for (Index ki = 0; ki < g.kernel; ++ki)
              for (Index kj = 0; kj < g.kernel; ++kj) {
                const Index hi = i * g.stride - g.pad + ki;
                const Index wj = j * g.stride - g.pad + kj;
                if (hi < 0 || hi >= g.in_h || wj < 0 || wj >= g.in_w) continue;
                acc += x[((n * g.in_channels + c) * g.in_h + hi) * g.in_w + wj] *
                       w[((o * g.in_channels + c) * g.kernel + ki) * g.kernel + kj];
              }
          y[((n * g.out_channels + o) * oh + i) * ow + j] = acc;
        }
}

template <class T>
void conv2d_backward_data(const ConvGeometry& g, const T* dy, const T* w, T* dx) {
  const Index oh = g.out_h(), ow = g.out_w();
  std::fill(dx, dx + g.batch * g.in_channels * g.in_h * g.in_w, T(0));
  for (Index n = 0; n < g.batch; ++n)
    for (Index o = 0; o < g.out_channels; ++o)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
          const T d = dy[((n * g.out_channels + o) * oh + i) * ow + j];
          for (Index c = 0; c < g.in_channels; ++c)
            for (Index ki = 0; ki < g.kernel; ++ki)
              for (Index kj = 0; kj < g.kernel; ++kj) {
                const Index hi = i * g.stride - g.pad + ki;
                const Index wj = j * g.stride - g.pad + kj;
                if (hi < 0 || hi >= g.in_h || wj < 0 || wj >= g.in_w) continue;
                dx[((n * g.in_channels + c) * g.in_h + hi) * g.in_w + wj] +=
                    d * w[((o * g.in_channels + c) * g.kernel + ki) * g.kernel + kj];
              }
        }
}

template <class T>
void conv2d_backward_params(const ConvGeometry& g, const T* x, const T* dy, T* dw, T* dbias) {
  const Index oh = g.out_h(), ow = g.out_w();
  for (Index n = 0; n < g.batch; ++n)
    for (Index o = 0; o < g.out_channels; ++o)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
          const T d = dy[((n * g.out_channels + o) * oh + i) * ow + j];
          if (dbias) dbias[o] += d;
          for (Index c = 0; c < g.in_channels; ++c)
            for (Index ki = 0; ki < g.kernel; ++ki)
              for (Index kj = 0; kj < g.kernel; ++kj) {
                const Index hi = i * g.stride - g.pad + ki;
                const Index wj = j * g.stride - g.pad + kj;
                if (hi < 0 || hi >= g.in_h || wj < 0 || wj >= g.in_w) continue;
                dw[((o * g.in_channels + c) * g.kernel + ki) * g.kernel + kj] +=
                    d * x[((n * g.in_channels + c) * g.in_h + hi) * g.in_w + wj];
              }
        }
}

template <class T>
void batchnorm_forward_train(Index n, Index c, Index hw, const T* x, const T* gamma,
                             const T* beta, T eps, T* y, T* xhat, T* mean, T* var) {
  const T count = static_cast<T>(n * hw);
  for (Index ch = 0; ch < c; ++ch) {
    T s = 0;
    for (Index b = 0; b < n; ++b)
      for (Index p = 0; p < hw; ++p) s += x[(b * c + ch) * hw + p];
    const T mu = s / count;
    T v = 0;
    for (Index b = 0; b < n; ++b)
      for (Index p = 0; p < hw; ++p) {
        const T d = x[(b * c + ch) * hw + p] - mu;
        v += d * d;
      }
    v /= count;
    mean[ch] = mu;
    var[ch] = v;
    const T inv = T(1) / std::sqrt(v + eps);
    for (Index b = 0; b < n; ++b)
      for (Index p = 0; p < hw; ++p) {
        const Index idx = (b * c + ch) * hw + p;
        xhat[idx] = (x[idx] - mu) * inv;
        y[idx] = gamma[ch] * xhat[idx] + beta[ch];
      }
  }
}

template <class T>
void batchnorm_backward_train(Index n, Index c, Index hw, const T* dy, const T* xhat,
                              const T* gamma, const T* var, T eps, T* dx, T* dgamma, T* dbeta) {
  const T count = static_cast<T>(n * hw);
  for (Index ch = 0; ch < c; ++ch) {
    T sum_dy = 0, sum_dy_xhat = 0;
    for (Index b = 0; b < n; ++b)
      for (Index p = 0; p < hw; ++p) {
        const Index idx = (b * c + ch) * hw + p;
        sum_dy += dy[idx];
        sum_dy_xhat += dy[idx] * xhat[idx];
      }
    if (dgamma) dgamma[ch] += sum_dy_xhat;
    if (dbeta) dbeta[ch] += sum_dy;
    const T inv = T(1) / std::sqrt(var[ch] + eps);
    for (Index b = 0; b < n; ++b)
      for (Index p = 0; p < hw; ++p) {
        const Index idx = (b * c + ch) * hw + p;
        dx[idx] = gamma[ch] * inv / count * (count * dy[idx] - sum_dy - xhat[idx] * sum_dy_xhat);
      }
  }
}

template <class T>
void channel_affine(Index n, Index c, Index hw, const T* x, const T* scale, const T* shift, T* y) {
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch)
      for (Index p = 0; p < hw; ++p) {
        const Index idx = (b * c + ch) * hw + p;
        y[idx] = scale[ch] * x[idx] + (shift ? shift[ch] : T(0));
      }
}

template <class T>
void relu_forward(Index count, const T* x, T* y) {
  for (Index i = 0; i < count; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_backward(Index count, const T* x, const T* dy, T* dx) {
  for (Index i = 0; i < count; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

template <class T>
void maxpool_forward(const PoolGeometry& g, const T* x, T* y, Index* argmax) {
  const Index oh = g.out_h(), ow = g.out_w();
  for (Index p = 0; p < g.planes; ++p)
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j) {
        T best = -std::numeric_limits<T>::infinity();
        Index where = -1;
        for (Index ki = 0; ki < g.kernel; ++ki)
          for (Index kj = 0; kj < g.kernel; ++kj) {
            const Index hi = i * g.stride - g.pad + ki;
            const Index wj = j * g.stride - g.pad + kj;
            if (hi < 0 || hi >= g.in_h || wj < 0 || wj >= g.in_w) continue;
            const T v = x[(p * g.in_h + hi) * g.in_w + wj];
            if (where < 0 || v > best) {
              best = v;
              where = hi * g.in_w + wj;
            }
          }
        y[(p * oh + i) * ow + j] = where < 0 ? T(0) : best;
        argmax[(p * oh + i) * ow + j] = where;
      }
}

template <class T>
void maxpool_backward(const PoolGeometry& g, const T* dy, const Index* argmax, T* dx) {
  const Index oh = g.out_h(), ow = g.out_w();
  std::fill(dx, dx + g.planes * g.in_h * g.in_w, T(0));
  for (Index p = 0; p < g.planes; ++p)
    for (Index o = 0; o < oh * ow; ++o) {
      const Index where = argmax[p * oh * ow + o];
      if (where >= 0) dx[p * g.in_h * g.in_w + where] += dy[p * oh * ow + o];
    }
}

template <class T>
void avgpool_forward(const PoolGeometry& g, const T* x, T* y) {
  const Index oh = g.out_h(), ow = g.out_w();
  const T inv = T(1) / static_cast<T>(g.kernel * g.kernel);
  for (Index p = 0; p < g.planes; ++p)
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j) {
        T acc = 0;
        for (Index ki = 0; ki < g.kernel; ++ki)
          for (Index kj = 0; kj < g.kernel; ++kj) {
            const Index hi = i * g.stride - g.pad + ki;
            const Index wj = j * g.stride - g.pad + kj;
            if (hi < 0 || hi >= g.in_h || wj < 0 || wj >= g.in_w) continue;
            acc += x[(p * g.in_h + hi) * g.in_w + wj];
          }
        y[(p * oh + i) * ow + j] = acc * inv;
      }
}

template <class T>
void avgpool_backward(const PoolGeometry& g, const T* dy, T* dx) {
  const Index oh = g.out_h(), ow = g.out_w();
  const T inv = T(1) / static_cast<T>(g.kernel * g.kernel);
  std::fill(dx, dx + g.planes * g.in_h * g.in_w, T(0));
  for (Index p = 0; p < g.planes; ++p)
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j)
        for (Index ki = 0; ki < g.kernel; ++ki)
          for (Index kj = 0; kj < g.kernel; ++kj) {
            const Index hi = i * g.stride - g.pad + ki;
            const Index wj = j * g.stride - g.pad + kj;
            if (hi < 0 || hi >= g.in_h || wj < 0 || wj >= g.in_w) continue;
            dx[(p * g.in_h + hi) * g.in_w + wj] += dy[(p * oh + i) * ow + j] * inv;
          }
}

template <class T>
void channel_moments(Index planes, Index hw, const T* x, T var_floor, T* mean, T* std) {
  for (Index p = 0; p < planes; ++p) {
    T s = 0;
    for (Index i = 0; i < hw; ++i) s += x[p * hw + i];
    const T mu = s / static_cast<T>(hw);
    T v = 0;
    for (Index i = 0; i < hw; ++i) v += (x[p * hw + i] - mu) * (x[p * hw + i] - mu);
    v /= static_cast<T>(hw);
    mean[p] = mu;
    std[p] = std::sqrt(v > var_floor ? v : var_floor);
  }
}

template <class T>
void channel_moments_backward(Index planes, Index hw, const T* x, const T* mean, const T* std,
                              T var_floor, const T* dmean, const T* dstd, T* dx) {
  const T n = static_cast<T>(hw);
  for (Index p = 0; p < planes; ++p) {
    const bool floored = std[p] * std[p] <= var_floor;
    for (Index i = 0; i < hw; ++i) {
      T g = dmean[p] / n;
      if (!floored) g += dstd[p] * (x[p * hw + i] - mean[p]) / (n * std[p]);
      dx[p * hw + i] = g;
    }
  }
}

STYLEADV_INSTANTIATE(float)
STYLEADV_INSTANTIATE(double)

}  // namespace styleadv::kernels::serial
