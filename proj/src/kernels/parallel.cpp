// OpenMP kernels. Each output element is owned by one thread and accumulated
// in a fixed order; see kernels.hpp for the determinism contract.

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "styleadv/kernels/kernels.hpp"
#include "styleadv/runtime.hpp"
#include "kernels/instantiate.hpp"

namespace styleadv::kernels::parallel {
namespace {

constexpr Index kBlockK = 256;
constexpr Index kBlockN = 256;
constexpr Index kRowGroup = 4;

bool in_parallel() { return omp_in_parallel() != 0; }

// Rows [r0, r1) of C = alpha * op(A) * B + beta * C, with B already k x n
// contiguous. Per element the k-sum runs in ascending order whatever the row
// partition, so callers may split rows freely without changing results.
template <class T>
void gemm_rows(Index r0, Index r1, Index m, Index n, Index k, T alpha, const T* a, bool trans_a,
               const T* b, T beta, T* c) {
  for (Index i = r0; i < r1; ++i) {
    T* row = c + i * n;
    if (beta == T(0)) {
      std::fill(row, row + n, T(0));
    } else if (beta != T(1)) {
      for (Index j = 0; j < n; ++j) row[j] *= beta;
    }
  }
  auto a_at = [&](Index i, Index p) { return trans_a ? a[p * m + i] : a[i * k + p]; };
  for (Index kb = 0; kb < k; kb += kBlockK) {
    const Index ke = std::min(k, kb + kBlockK);
    for (Index nb = 0; nb < n; nb += kBlockN) {
      const Index nl = std::min(n, nb + kBlockN) - nb;
      Index i = r0;
      for (; i + kRowGroup <= r1; i += kRowGroup) {
        T* __restrict c0 = c + i * n + nb;
        T* __restrict c1 = c0 + n;
        T* __restrict c2 = c1 + n;
        T* __restrict c3 = c2 + n;
        for (Index p = kb; p < ke; ++p) {
          const T a0 = alpha * a_at(i, p);
          const T a1 = alpha * a_at(i + 1, p);
          const T a2 = alpha * a_at(i + 2, p);
          const T a3 = alpha * a_at(i + 3, p);
          const T* __restrict br = b + p * n + nb;
#pragma omp simd
          for (Index j = 0; j < nl; ++j) {
            const T bv = br[j];
            c0[j] += a0 * bv;
            c1[j] += a1 * bv;
            c2[j] += a2 * bv;
            c3[j] += a3 * bv;
          }
        }
      }
      for (; i < r1; ++i) {
        T* __restrict c0 = c + i * n + nb;
        for (Index p = kb; p < ke; ++p) {
          const T a0 = alpha * a_at(i, p);
          const T* __restrict br = b + p * n + nb;
#pragma omp simd
          for (Index j = 0; j < nl; ++j) c0[j] += a0 * br[j];
        }
      }
    }
  }
}

template <class T>
void transpose(Index rows, Index cols, const T* src, T* dst) {
  constexpr Index tile = 32;
  for (Index i0 = 0; i0 < rows; i0 += tile)
    for (Index j0 = 0; j0 < cols; j0 += tile)
      for (Index i = i0; i < std::min(rows, i0 + tile); ++i)
        for (Index j = j0; j < std::min(cols, j0 + tile); ++j) dst[j * rows + i] = src[i * cols + j];
}

// Row-parallel gemm on a k x n contiguous B. Falls back to one thread when
// already inside a parallel region.
template <class T>
void gemm_packed(Index m, Index n, Index k, T alpha, const T* a, bool trans_a, const T* b, T beta,
                 T* c) {
  const Index blocks = (m + kRowGroup * 4 - 1) / (kRowGroup * 4);
  if (in_parallel() || blocks < 2) {
    gemm_rows(0, m, m, n, k, alpha, a, trans_a, b, beta, c);
    return;
  }
#pragma omp parallel for schedule(static)
  for (Index blk = 0; blk < blocks; ++blk) {
    const Index r0 = blk * kRowGroup * 4;
    gemm_rows(r0, std::min(m, r0 + kRowGroup * 4), m, n, k, alpha, a, trans_a, b, beta, c);
  }
}

template <class T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const Index oh = g.out_h(), ow = g.out_w();
  for (Index c = 0; c < g.in_channels; ++c)
    for (Index ki = 0; ki < g.kernel; ++ki)
      for (Index kj = 0; kj < g.kernel; ++kj) {
        T* dst = col + ((c * g.kernel + ki) * g.kernel + kj) * oh * ow;
        for (Index i = 0; i < oh; ++i) {
          const Index hi = i * g.stride - g.pad + ki;
          if (hi < 0 || hi >= g.in_h) {
            std::fill(dst + i * ow, dst + (i + 1) * ow, T(0));
            continue;
          }
          const T* src = x + (c * g.in_h + hi) * g.in_w;
          for (Index j = 0; j < ow; ++j) {
            const Index wj = j * g.stride - g.pad + kj;
            dst[i * ow + j] = (wj < 0 || wj >= g.in_w) ? T(0) : src[wj];
          }
        }
      }
}

template <class T>
void col2im(const ConvGeometry& g, const T* col, T* x) {
  const Index oh = g.out_h(), ow = g.out_w();
  std::fill(x, x + g.in_channels * g.in_h * g.in_w, T(0));
  for (Index c = 0; c < g.in_channels; ++c)
    for (Index ki = 0; ki < g.kernel; ++ki)
      for (Index kj = 0; kj < g.kernel; ++kj) {
        const T* src = col + ((c * g.kernel + ki) * g.kernel + kj) * oh * ow;
        for (Index i = 0; i < oh; ++i) {
          const Index hi = i * g.stride - g.pad + ki;
          if (hi < 0 || hi >= g.in_h) continue;
          T* dst = x + (c * g.in_h + hi) * g.in_w;
          for (Index j = 0; j < ow; ++j) {
            const Index wj = j * g.stride - g.pad + kj;
            if (wj >= 0 && wj < g.in_w) dst[wj] += src[i * ow + j];
          }
        }
      }
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

template <class T>
void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k, T alpha, const T* a, const T* b,
          T beta, T* c) {
  if (!trans_b) {
    gemm_packed(m, n, k, alpha, a, trans_a, b, beta, c);
    return;
  }
  std::vector<T> packed(static_cast<std::size_t>(k * n));
  transpose(n, k, b, packed.data());
  gemm_packed(m, n, k, alpha, a, trans_a, packed.data(), beta, c);
}

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const Index hw_out = g.out_h() * g.out_w();
  const Index in_item = g.in_channels * g.in_h * g.in_w;
  const Index out_item = g.out_channels * hw_out;
  auto one = [&](Index n, std::vector<T>& col, bool nested) {
    const T* src = x + n * in_item;
    if (!is_pointwise(g)) {
      col.resize(static_cast<std::size_t>(g.patch() * hw_out));
      im2col(g, src, col.data());
      src = col.data();
    }
    T* dst = y + n * out_item;
    if (nested) {
      gemm_rows(Index{0}, g.out_channels, g.out_channels, hw_out, g.patch(), T(1), w, false, src,
                T(0), dst);
    } else {
      gemm_packed(g.out_channels, hw_out, g.patch(), T(1), w, false, src, T(0), dst);
    }
    if (bias) {
      for (Index o = 0; o < g.out_channels; ++o)
        for (Index p = 0; p < hw_out; ++p) dst[o * hw_out + p] += bias[o];
    }
  };
  if (g.batch > 1 && !in_parallel()) {
#pragma omp parallel
    {
      std::vector<T> col;
#pragma omp for schedule(static)
      for (Index n = 0; n < g.batch; ++n) one(n, col, true);
    }
  } else {
    std::vector<T> col;
    for (Index n = 0; n < g.batch; ++n) one(n, col, in_parallel());
  }
}

template <class T>
void conv2d_backward_data(const ConvGeometry& g, const T* dy, const T* w, T* dx) {
  const Index hw_out = g.out_h() * g.out_w();
  const Index in_item = g.in_channels * g.in_h * g.in_w;
  const Index out_item = g.out_channels * hw_out;
  auto one = [&](Index n, std::vector<T>& col, bool nested) {
    T* dst = dx + n * in_item;
    T* target = dst;
    if (!is_pointwise(g)) {
      col.resize(static_cast<std::size_t>(g.patch() * hw_out));
      target = col.data();
    }
    if (nested) {
      gemm_rows(Index{0}, g.patch(), g.patch(), hw_out, g.out_channels, T(1), w, true,
                dy + n * out_item, T(0), target);
    } else {
      gemm_packed(g.patch(), hw_out, g.out_channels, T(1), w, true, dy + n * out_item, T(0),
                  target);
    }
    if (!is_pointwise(g)) col2im(g, col.data(), dst);
  };
  if (g.batch > 1 && !in_parallel()) {
#pragma omp parallel
    {
      std::vector<T> col;
#pragma omp for schedule(static)
      for (Index n = 0; n < g.batch; ++n) one(n, col, true);
    }
  } else {
    std::vector<T> col;
    for (Index n = 0; n < g.batch; ++n) one(n, col, in_parallel());
  }
}

template <class T>
void conv2d_backward_params(const ConvGeometry& g, const T* x, const T* dy, T* dw, T* dbias) {
  const Index hw_out = g.out_h() * g.out_w();
  const Index in_item = g.in_channels * g.in_h * g.in_w;
  const Index out_item = g.out_channels * hw_out;
  const Index wsize = g.out_channels * g.patch();
  const int chunks = runtime::reduction_chunks(static_cast<long>(g.batch));

  // Per chunk: dw_chunk (O x patch) = sum_n dy_n (O x HW) * col_n^T (HW x patch).
  // col_n^T is materialized directly by a transposing im2col.
  std::vector<std::vector<T>> dw_part(static_cast<std::size_t>(chunks));
  std::vector<std::vector<T>> db_part(static_cast<std::size_t>(chunks));
  auto run_chunk = [&](int ch, bool nested) {
    auto& dwp = dw_part[static_cast<std::size_t>(ch)];
    auto& dbp = db_part[static_cast<std::size_t>(ch)];
    dwp.assign(static_cast<std::size_t>(wsize), T(0));
    dbp.assign(static_cast<std::size_t>(g.out_channels), T(0));
    std::vector<T> col, colt(static_cast<std::size_t>(hw_out * g.patch()));
    const Index lo = g.batch * ch / chunks, hi = g.batch * (ch + 1) / chunks;
    for (Index n = lo; n < hi; ++n) {
      const T* src = x + n * in_item;
      if (!is_pointwise(g)) {
        col.resize(static_cast<std::size_t>(g.patch() * hw_out));
        im2col(g, src, col.data());
        src = col.data();
      }
      transpose(g.patch(), hw_out, src, colt.data());
      const T* d = dy + n * out_item;
      if (nested) {
        gemm_rows(Index{0}, g.out_channels, g.out_channels, g.patch(), hw_out, T(1), d, false,
                  colt.data(), T(1), dwp.data());
      } else {
        gemm_packed(g.out_channels, g.patch(), hw_out, T(1), d, false, colt.data(), T(1),
                    dwp.data());
      }
      for (Index o = 0; o < g.out_channels; ++o) {
        T s = 0;
        for (Index p = 0; p < hw_out; ++p) s += d[o * hw_out + p];
        dbp[static_cast<std::size_t>(o)] += s;
      }
    }
  };
  if (chunks > 1 && !in_parallel()) {
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < chunks; ++ch) run_chunk(ch, true);
  } else {
    for (int ch = 0; ch < chunks; ++ch) run_chunk(ch, in_parallel());
  }
  for (int ch = 0; ch < chunks; ++ch) {
    const auto& dwp = dw_part[static_cast<std::size_t>(ch)];
    for (Index i = 0; i < wsize; ++i) dw[i] += dwp[static_cast<std::size_t>(i)];
    if (dbias) {
      for (Index o = 0; o < g.out_channels; ++o) dbias[o] += db_part[static_cast<std::size_t>(ch)][static_cast<std::size_t>(o)];
    }
  }
}

template <class T>
void batchnorm_forward_train(Index n, Index c, Index hw, const T* x, const T* gamma,
                             const T* beta, T eps, T* y, T* xhat, T* mean, T* var) {
  const double count = static_cast<double>(n * hw);
#pragma omp parallel for schedule(static)
  for (Index ch = 0; ch < c; ++ch) {
    double s = 0;
    for (Index b = 0; b < n; ++b) {
      const T* px = x + (b * c + ch) * hw;
      for (Index p = 0; p < hw; ++p) s += px[p];
    }
    const double mu = s / count;
    double v = 0;
    for (Index b = 0; b < n; ++b) {
      const T* px = x + (b * c + ch) * hw;
      for (Index p = 0; p < hw; ++p) v += (px[p] - mu) * (px[p] - mu);
    }
    v /= count;
    mean[ch] = static_cast<T>(mu);
    var[ch] = static_cast<T>(v);
    const T inv = static_cast<T>(1.0 / std::sqrt(v + eps));
    const T m = static_cast<T>(mu);
    for (Index b = 0; b < n; ++b) {
      const Index off = (b * c + ch) * hw;
      for (Index p = 0; p < hw; ++p) {
        const T xh = (x[off + p] - m) * inv;
        xhat[off + p] = xh;
        y[off + p] = gamma[ch] * xh + beta[ch];
      }
    }
  }
}

template <class T>
void batchnorm_backward_train(Index n, Index c, Index hw, const T* dy, const T* xhat,
                              const T* gamma, const T* var, T eps, T* dx, T* dgamma, T* dbeta) {
  const double count = static_cast<double>(n * hw);
#pragma omp parallel for schedule(static)
  for (Index ch = 0; ch < c; ++ch) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (Index b = 0; b < n; ++b) {
      const Index off = (b * c + ch) * hw;
      for (Index p = 0; p < hw; ++p) {
        sum_dy += dy[off + p];
        sum_dy_xhat += static_cast<double>(dy[off + p]) * xhat[off + p];
      }
    }
    if (dgamma) dgamma[ch] += static_cast<T>(sum_dy_xhat);
    if (dbeta) dbeta[ch] += static_cast<T>(sum_dy);
    const T scale = static_cast<T>(gamma[ch] / std::sqrt(static_cast<double>(var[ch]) + eps));
    const T mean_dy = static_cast<T>(sum_dy / count);
    const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
    for (Index b = 0; b < n; ++b) {
      const Index off = (b * c + ch) * hw;
      for (Index p = 0; p < hw; ++p) {
        dx[off + p] = scale * (dy[off + p] - mean_dy - xhat[off + p] * mean_dy_xhat);
      }
    }
  }
}

template <class T>
void channel_affine(Index n, Index c, Index hw, const T* x, const T* scale, const T* shift, T* y) {
#pragma omp parallel for schedule(static)
  for (Index plane = 0; plane < n * c; ++plane) {
    const Index ch = plane % c;
    const T s = scale[ch], t = shift ? shift[ch] : T(0);
    const T* px = x + plane * hw;
    T* py = y + plane * hw;
    for (Index p = 0; p < hw; ++p) py[p] = s * px[p] + t;
  }
}

template <class T>
void relu_forward(Index count, const T* x, T* y) {
#pragma omp parallel for simd schedule(static)
  for (Index i = 0; i < count; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_backward(Index count, const T* x, const T* dy, T* dx) {
#pragma omp parallel for simd schedule(static)
  for (Index i = 0; i < count; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

template <class T>
void maxpool_forward(const PoolGeometry& g, const T* x, T* y, Index* argmax) {
  const Index oh = g.out_h(), ow = g.out_w();
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < g.planes; ++p) {
    const T* px = x + p * g.in_h * g.in_w;
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j) {
        T best = -std::numeric_limits<T>::infinity();
        Index where = -1;
        const Index h0 = std::max<Index>(0, i * g.stride - g.pad);
        const Index h1 = std::min(g.in_h, i * g.stride - g.pad + g.kernel);
        const Index w0 = std::max<Index>(0, j * g.stride - g.pad);
        const Index w1 = std::min(g.in_w, j * g.stride - g.pad + g.kernel);
        for (Index hi = h0; hi < h1; ++hi)
          for (Index wj = w0; wj < w1; ++wj) {
            const T v = px[hi * g.in_w + wj];
            if (where < 0 || v > best) {
              best = v;
              where = hi * g.in_w + wj;
            }
          }
        y[(p * oh + i) * ow + j] = where < 0 ? T(0) : best;
        argmax[(p * oh + i) * ow + j] = where;
      }
  }
}

template <class T>
void maxpool_backward(const PoolGeometry& g, const T* dy, const Index* argmax, T* dx) {
  const Index oh = g.out_h(), ow = g.out_w();
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < g.planes; ++p) {
    T* px = dx + p * g.in_h * g.in_w;
    std::fill(px, px + g.in_h * g.in_w, T(0));
    for (Index o = 0; o < oh * ow; ++o) {
      const Index where = argmax[p * oh * ow + o];
      if (where >= 0) px[where] += dy[p * oh * ow + o];
    }
  }
}

template <class T>
void avgpool_forward(const PoolGeometry& g, const T* x, T* y) {
  const Index oh = g.out_h(), ow = g.out_w();
  const T inv = T(1) / static_cast<T>(g.kernel * g.kernel);
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < g.planes; ++p) {
    const T* px = x + p * g.in_h * g.in_w;
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j) {
        T acc = 0;
        const Index h0 = std::max<Index>(0, i * g.stride - g.pad);
        const Index h1 = std::min(g.in_h, i * g.stride - g.pad + g.kernel);
        const Index w0 = std::max<Index>(0, j * g.stride - g.pad);
        const Index w1 = std::min(g.in_w, j * g.stride - g.pad + g.kernel);
        for (Index hi = h0; hi < h1; ++hi)
          for (Index wj = w0; wj < w1; ++wj) acc += px[hi * g.in_w + wj];
        y[(p * oh + i) * ow + j] = acc * inv;
      }
  }
}

template <class T>
void avgpool_backward(const PoolGeometry& g, const T* dy, T* dx) {
  const Index oh = g.out_h(), ow = g.out_w();
  const T inv = T(1) / static_cast<T>(g.kernel * g.kernel);
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < g.planes; ++p) {
    T* px = dx + p * g.in_h * g.in_w;
    std::fill(px, px + g.in_h * g.in_w, T(0));
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j) {
        const T d = dy[(p * oh + i) * ow + j] * inv;
        const Index h0 = std::max<Index>(0, i * g.stride - g.pad);
        const Index h1 = std::min(g.in_h, i * g.stride - g.pad + g.kernel);
        const Index w0 = std::max<Index>(0, j * g.stride - g.pad);
        const Index w1 = std::min(g.in_w, j * g.stride - g.pad + g.kernel);
        for (Index hi = h0; hi < h1; ++hi)
          for (Index wj = w0; wj < w1; ++wj) px[hi * g.in_w + wj] += d;
      }
  }
}

template <class T>
void channel_moments(Index planes, Index hw, const T* x, T var_floor, T* mean, T* std) {
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < planes; ++p) {
    const T* px = x + p * hw;
    double s = 0;
    for (Index i = 0; i < hw; ++i) s += px[i];
    const double mu = s / static_cast<double>(hw);
    double v = 0;
    for (Index i = 0; i < hw; ++i) v += (px[i] - mu) * (px[i] - mu);
    v /= static_cast<double>(hw);
    mean[p] = static_cast<T>(mu);
    std[p] = static_cast<T>(std::sqrt(std::max(v, static_cast<double>(var_floor))));
  }
}

template <class T>
void channel_moments_backward(Index planes, Index hw, const T* x, const T* mean, const T* std,
                              T var_floor, const T* dmean, const T* dstd, T* dx) {
  const T n = static_cast<T>(hw);
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < planes; ++p) {
    const bool floored = std[p] * std[p] <= var_floor;
    const T gm = dmean[p] / n;
    const T gs = floored ? T(0) : dstd[p] / (n * std[p]);
    const T* px = x + p * hw;
    T* pd = dx + p * hw;
    for (Index i = 0; i < hw; ++i) pd[i] = gm + gs * (px[i] - mean[p]);
  }
}

STYLEADV_INSTANTIATE(float)
STYLEADV_INSTANTIATE(double)

}  // namespace styleadv::kernels::parallel
