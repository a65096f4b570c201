#include "styleadv/nn/layers.hpp"

#include <cmath>

#include "styleadv/kernels/kernels.hpp"

namespace styleadv::nn {
namespace {

void require_rank(const char* who, const Shape& s, int rank) {
  if (s.rank() != rank) {
    throw ShapeError(std::string(who) + ": expected rank " + std::to_string(rank) + " input, got " +
                     s.str());
  }
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

template <class T>
Conv2d<T>::Conv2d(std::string name, Index in_channels, Index out_channels, Index kernel,
                  Index stride, Index pad, bool bias)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      has_bias_(bias) {
  weight_.name = name + ".weight";
  weight_.value = Tensor<T>(Shape{out_channels, in_channels, kernel, kernel});
  weight_.grad = Tensor<T>(weight_.value.shape());
  if (has_bias_) {
    bias_.name = name + ".bias";
    bias_.value = Tensor<T>(Shape{out_channels});
    bias_.grad = Tensor<T>(bias_.value.shape());
  }
}

template <class T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode) {
  require_rank("conv2d", x.shape(), 4);
  if (x.dim(1) != in_channels_) {
    throw ShapeError("conv2d " + weight_.name + ": expected " + std::to_string(in_channels_) +
                     " input channels, got " + x.shape().str());
  }
  kernels::ConvGeometry g{x.dim(0), in_channels_, x.dim(2), x.dim(3), out_channels_,
                          kernel_,  stride_,      pad_};
  Tensor<T> y(Shape{g.batch, out_channels_, g.out_h(), g.out_w()});
  kernels::conv2d_forward(g, x.data(), weight_.value.data(),
                          has_bias_ ? bias_.value.data() : nullptr, y.data());
  input_ = x;
  return y;
}

template <class T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out, bool param_grads) {
  const auto& x = input_;
  kernels::ConvGeometry g{x.dim(0), in_channels_, x.dim(2), x.dim(3), out_channels_,
                          kernel_,  stride_,      pad_};
  if (param_grads) {
    kernels::conv2d_backward_params(g, x.data(), grad_out.data(), weight_.grad.data(),
                                    has_bias_ ? bias_.grad.data() : nullptr);
  }
  Tensor<T> dx(x.shape());
  kernels::conv2d_backward_data(g, grad_out.data(), weight_.value.data(), dx.data());
  return dx;
}

template <class T>
void Conv2d<T>::visit_parameters(const ParameterVisitor<T>& f) {
  f(weight_);
  if (has_bias_) f(bias_);
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <class T>
BatchNorm2d<T>::BatchNorm2d(std::string name, Index channels, T eps, T momentum)
    : name_(std::move(name)), channels_(channels), eps_(eps), momentum_(momentum) {
  gamma_.name = name_ + ".gamma";
  gamma_.value = Tensor<T>(Shape{channels}, T(1));
  gamma_.grad = Tensor<T>(Shape{channels});
  beta_.name = name_ + ".beta";
  beta_.value = Tensor<T>(Shape{channels});
  beta_.grad = Tensor<T>(Shape{channels});
  running_mean_ = Tensor<T>(Shape{channels});
  running_var_ = Tensor<T>(Shape{channels}, T(1));
}

template <class T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode) {
  require_rank("batchnorm2d", x.shape(), 4);
  if (x.dim(1) != channels_) throw ShapeError("batchnorm2d " + name_ + ": channel mismatch");
  const Index n = x.dim(0), hw = x.dim(2) * x.dim(3);
  Tensor<T> y(x.shape());
  last_mode_ = mode;
  if (mode == Mode::train) {
    xhat_ = Tensor<T>(x.shape());
    Tensor<T> mean(Shape{channels_});
    batch_var_ = Tensor<T>(Shape{channels_});
    kernels::batchnorm_forward_train(n, channels_, hw, x.data(), gamma_.value.data(),
                                     beta_.value.data(), eps_, y.data(), xhat_.data(), mean.data(),
                                     batch_var_.data());
    const T count = static_cast<T>(n * hw);
    const T unbias = count > T(1) ? count / (count - T(1)) : T(1);
    for (Index c = 0; c < channels_; ++c) {
      running_mean_[c] = (T(1) - momentum_) * running_mean_[c] + momentum_ * mean[c];
      running_var_[c] = (T(1) - momentum_) * running_var_[c] + momentum_ * batch_var_[c] * unbias;
    }
  } else {
    std::vector<T> scale(static_cast<std::size_t>(channels_)), shift(scale.size());
    for (Index c = 0; c < channels_; ++c) {
      const T inv = T(1) / std::sqrt(running_var_[c] + eps_);
      scale[static_cast<std::size_t>(c)] = gamma_.value[c] * inv;
      shift[static_cast<std::size_t>(c)] = beta_.value[c] - running_mean_[c] * gamma_.value[c] * inv;
    }
    kernels::channel_affine(n, channels_, hw, x.data(), scale.data(), shift.data(), y.data());
    xhat_ = x;  // raw input; normalized lazily if parameter gradients are requested
  }
  return y;
}

template <class T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& grad_out, bool param_grads) {
  const Index n = grad_out.dim(0), hw = grad_out.dim(2) * grad_out.dim(3);
  Tensor<T> dx(grad_out.shape());
  if (last_mode_ == Mode::train) {
    kernels::batchnorm_backward_train(n, channels_, hw, grad_out.data(), xhat_.data(),
                                      gamma_.value.data(), batch_var_.data(), eps_, dx.data(),
                                      param_grads ? gamma_.grad.data() : nullptr,
                                      param_grads ? beta_.grad.data() : nullptr);
    return dx;
  }
  std::vector<T> scale(static_cast<std::size_t>(channels_));
  for (Index c = 0; c < channels_; ++c) {
    scale[static_cast<std::size_t>(c)] = gamma_.value[c] / std::sqrt(running_var_[c] + eps_);
  }
  kernels::channel_affine(n, channels_, hw, grad_out.data(), scale.data(), static_cast<const T*>(nullptr),
                          dx.data());
  if (param_grads) {
    for (Index b = 0; b < n; ++b)
      for (Index c = 0; c < channels_; ++c) {
        const T inv = T(1) / std::sqrt(running_var_[c] + eps_);
        for (Index p = 0; p < hw; ++p) {
          const Index idx = (b * channels_ + c) * hw + p;
          gamma_.grad[c] += grad_out[idx] * (xhat_[idx] - running_mean_[c]) * inv;
          beta_.grad[c] += grad_out[idx];
        }
      }
  }
  return dx;
}

template <class T>
void BatchNorm2d<T>::visit_parameters(const ParameterVisitor<T>& f) {
  f(gamma_);
  f(beta_);
}

template <class T>
void BatchNorm2d<T>::visit_buffers(const BufferVisitor<T>& f) {
  f(name_ + ".running_mean", running_mean_);
  f(name_ + ".running_var", running_var_);
}

// ---------------------------------------------------------------------------
// ReLU

template <class T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, Mode) {
  Tensor<T> y(x.shape());
  kernels::relu_forward(x.numel(), x.data(), y.data());
  input_ = x;
  return y;
}

template <class T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad_out, bool) {
  Tensor<T> dx(grad_out.shape());
  kernels::relu_backward(grad_out.numel(), input_.data(), grad_out.data(), dx.data());
  return dx;
}

// ---------------------------------------------------------------------------
// Pooling

template <class T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x, Mode) {
  require_rank("maxpool2d", x.shape(), 4);
  kernels::PoolGeometry g{x.dim(0) * x.dim(1), x.dim(2), x.dim(3), kernel_, stride_, pad_};
  Tensor<T> y(Shape{x.dim(0), x.dim(1), g.out_h(), g.out_w()});
  argmax_.assign(static_cast<std::size_t>(y.numel()), 0);
  kernels::maxpool_forward(g, x.data(), y.data(), argmax_.data());
  in_shape_ = x.shape();
  return y;
}

template <class T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& grad_out, bool) {
  kernels::PoolGeometry g{in_shape_[0] * in_shape_[1], in_shape_[2], in_shape_[3],
                          kernel_,                     stride_,      pad_};
  Tensor<T> dx(in_shape_);
  kernels::maxpool_backward(g, grad_out.data(), argmax_.data(), dx.data());
  return dx;
}

template <class T>
Tensor<T> AvgPool2d<T>::forward(const Tensor<T>& x, Mode) {
  require_rank("avgpool2d", x.shape(), 4);
  kernels::PoolGeometry g{x.dim(0) * x.dim(1), x.dim(2), x.dim(3), kernel_, stride_, 0};
  Tensor<T> y(Shape{x.dim(0), x.dim(1), g.out_h(), g.out_w()});
  kernels::avgpool_forward(g, x.data(), y.data());
  in_shape_ = x.shape();
  return y;
}

template <class T>
Tensor<T> AvgPool2d<T>::backward(const Tensor<T>& grad_out, bool) {
  kernels::PoolGeometry g{in_shape_[0] * in_shape_[1], in_shape_[2], in_shape_[3], kernel_,
                          stride_, 0};
  Tensor<T> dx(in_shape_);
  kernels::avgpool_backward(g, grad_out.data(), dx.data());
  return dx;
}

template <class T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, Mode) {
  require_rank("global_avgpool", x.shape(), 4);
  in_shape_ = x.shape();
  const Index planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> y(Shape{x.dim(0), x.dim(1)});
  for (Index p = 0; p < planes; ++p) {
    T s = 0;
    for (Index i = 0; i < hw; ++i) s += x[p * hw + i];
    y[p] = s / static_cast<T>(hw);
  }
  return y;
}

template <class T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& grad_out, bool) {
  Tensor<T> dx(in_shape_);
  const Index planes = in_shape_[0] * in_shape_[1], hw = in_shape_[2] * in_shape_[3];
  for (Index p = 0; p < planes; ++p) {
    const T g = grad_out[p] / static_cast<T>(hw);
    for (Index i = 0; i < hw; ++i) dx[p * hw + i] = g;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear

template <class T>
Linear<T>::Linear(std::string name, Index in_features, Index out_features)
    : in_(in_features), out_(out_features) {
  weight_.name = name + ".weight";
  weight_.value = Tensor<T>(Shape{out_features, in_features});
  weight_.grad = Tensor<T>(weight_.value.shape());
  bias_.name = name + ".bias";
  bias_.value = Tensor<T>(Shape{out_features});
  bias_.grad = Tensor<T>(bias_.value.shape());
}

template <class T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Mode) {
  if (x.rank() != 2 || x.dim(1) != in_) {
    throw ShapeError("linear " + weight_.name + ": expected [N x " + std::to_string(in_) +
                     "] input, got " + x.shape().str());
  }
  const Index n = x.dim(0);
  Tensor<T> y(Shape{n, out_});
  kernels::gemm(false, true, n, out_, in_, T(1), x.data(), weight_.value.data(), T(0), y.data());
  for (Index i = 0; i < n; ++i)
    for (Index o = 0; o < out_; ++o) y[i * out_ + o] += bias_.value[o];
  input_ = x;
  return y;
}

template <class T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out, bool param_grads) {
  const Index n = grad_out.dim(0);
  if (param_grads) {
    kernels::gemm(true, false, out_, in_, n, T(1), grad_out.data(), input_.data(), T(1),
                  weight_.grad.data());
    for (Index i = 0; i < n; ++i)
      for (Index o = 0; o < out_; ++o) bias_.grad[o] += grad_out[i * out_ + o];
  }
  Tensor<T> dx(Shape{n, in_});
  kernels::gemm(false, false, n, in_, out_, T(1), grad_out.data(), weight_.value.data(), T(0),
                dx.data());
  return dx;
}

template <class T>
void Linear<T>::visit_parameters(const ParameterVisitor<T>& f) {
  f(weight_);
  f(bias_);
}

// ---------------------------------------------------------------------------
// Normalize

template <class T>
Normalize<T>::Normalize(std::array<double, 3> mean, std::array<double, 3> std) {
  for (int c = 0; c < 3; ++c) {
    scale_.push_back(static_cast<T>(1.0 / std[static_cast<std::size_t>(c)]));
    shift_.push_back(static_cast<T>(-mean[static_cast<std::size_t>(c)] / std[static_cast<std::size_t>(c)]));
  }
}

template <class T>
Tensor<T> Normalize<T>::forward(const Tensor<T>& x, Mode) {
  require_rank("normalize", x.shape(), 4);
  if (x.dim(1) != 3) throw ShapeError("normalize: expected 3 channels, got " + x.shape().str());
  Tensor<T> y(x.shape());
  kernels::channel_affine(x.dim(0), Index{3}, x.dim(2) * x.dim(3), x.data(), scale_.data(),
                          shift_.data(), y.data());
  in_shape_ = x.shape();
  return y;
}

template <class T>
Tensor<T> Normalize<T>::backward(const Tensor<T>& grad_out, bool) {
  Tensor<T> dx(grad_out.shape());
  kernels::channel_affine(grad_out.dim(0), Index{3}, grad_out.dim(2) * grad_out.dim(3),
                          grad_out.data(), scale_.data(), static_cast<const T*>(nullptr), dx.data());
  return dx;
}

// ---------------------------------------------------------------------------
// Sequential

template <class T>
Sequential<T>::Sequential(const Sequential& other) : last_ran_(other.last_ran_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

template <class T>
Sequential<T>& Sequential<T>::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <class T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> h = x;
  for (auto& l : layers_) h = l->forward(h, mode);
  last_ran_ = static_cast<int>(layers_.size()) - 1;
  return h;
}

template <class T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out, bool param_grads) {
  Tensor<T> g = grad_out;
  for (int i = last_ran_; i >= 0; --i) g = layers_[static_cast<std::size_t>(i)]->backward(g, param_grads);
  return g;
}

template <class T>
std::vector<Tensor<T>> Sequential<T>::forward_taps(const Tensor<T>& x, Mode mode,
                                                   const std::vector<int>& taps) {
  int last = -1;
  for (int t : taps) {
    if (t < 0 || t >= static_cast<int>(layers_.size())) throw ValidationError("forward_taps: tap out of range");
    last = std::max(last, t);
  }
  std::vector<Tensor<T>> out(taps.size());
  Tensor<T> h = x;
  for (int i = 0; i <= last; ++i) {
    h = layers_[static_cast<std::size_t>(i)]->forward(h, mode);
    for (std::size_t k = 0; k < taps.size(); ++k) {
      if (taps[k] == i) out[k] = h;
    }
  }
  last_ran_ = last;
  return out;
}

template <class T>
Tensor<T> Sequential<T>::backward_taps(const std::vector<int>& taps,
                                       const std::vector<Tensor<T>>& grads, bool param_grads) {
  if (taps.size() != grads.size()) throw ValidationError("backward_taps: taps/grads size mismatch");
  Tensor<T> g;
  for (int i = last_ran_; i >= 0; --i) {
    for (std::size_t k = 0; k < taps.size(); ++k) {
      if (taps[k] != i || grads[k].empty()) continue;
      if (g.empty()) {
        g = grads[k];
      } else {
        if (g.shape() != grads[k].shape()) throw ShapeError("backward_taps: gradient shape mismatch");
        for (Index j = 0; j < g.numel(); ++j) g[j] += grads[k][j];
      }
    }
    if (!g.empty()) g = layers_[static_cast<std::size_t>(i)]->backward(g, param_grads);
  }
  return g;
}

template <class T>
void Sequential<T>::visit_parameters(const ParameterVisitor<T>& f) {
  for (auto& l : layers_) l->visit_parameters(f);
}

template <class T>
void Sequential<T>::visit_buffers(const BufferVisitor<T>& f) {
  for (auto& l : layers_) l->visit_buffers(f);
}

// ---------------------------------------------------------------------------
// Residual

template <class T>
Tensor<T> Residual<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> y = main_.forward(x, mode);
  Tensor<T> s = shortcut_.forward(x, mode);
  if (y.shape() != s.shape()) throw ShapeError("residual: branch shapes differ");
  for (Index i = 0; i < y.numel(); ++i) y[i] += s[i];
  return y;
}

template <class T>
Tensor<T> Residual<T>::backward(const Tensor<T>& grad_out, bool param_grads) {
  Tensor<T> dx = main_.backward(grad_out, param_grads);
  Tensor<T> ds = shortcut_.backward(grad_out, param_grads);
  for (Index i = 0; i < dx.numel(); ++i) dx[i] += ds[i];
  return dx;
}

template <class T>
void Residual<T>::visit_parameters(const ParameterVisitor<T>& f) {
  main_.visit_parameters(f);
  shortcut_.visit_parameters(f);
}

template <class T>
void Residual<T>::visit_buffers(const BufferVisitor<T>& f) {
  main_.visit_buffers(f);
  shortcut_.visit_buffers(f);
}

// ---------------------------------------------------------------------------
// Concat

template <class T>
Tensor<T> Concat<T>::forward(const Tensor<T>& x, Mode mode) {
  require_rank("concat", x.shape(), 4);
  std::vector<Tensor<T>> outs;
  outs.reserve(branches_.size());
  channels_.clear();
  Index total = 0;
  for (auto& b : branches_) {
    outs.push_back(b.forward(x, mode));
    const auto& o = outs.back();
    if (o.dim(0) != x.dim(0) || o.dim(2) != outs.front().dim(2) || o.dim(3) != outs.front().dim(3)) {
      throw ShapeError("concat: branch spatial shapes differ");
    }
    channels_.push_back(o.dim(1));
    total += o.dim(1);
  }
  const Index n = x.dim(0), hw = outs.front().dim(2) * outs.front().dim(3);
  Tensor<T> y(Shape{n, total, outs.front().dim(2), outs.front().dim(3)});
  for (Index b = 0; b < n; ++b) {
    Index c0 = 0;
    for (std::size_t k = 0; k < outs.size(); ++k) {
      const Index ck = channels_[k];
      std::copy(outs[k].data() + b * ck * hw, outs[k].data() + (b + 1) * ck * hw,
                y.data() + (b * total + c0) * hw);
      c0 += ck;
    }
  }
  return y;
}

template <class T>
Tensor<T> Concat<T>::backward(const Tensor<T>& grad_out, bool param_grads) {
  const Index n = grad_out.dim(0), total = grad_out.dim(1), hw = grad_out.dim(2) * grad_out.dim(3);
  Tensor<T> dx;
  Index c0 = 0;
  for (std::size_t k = 0; k < branches_.size(); ++k) {
    const Index ck = channels_[k];
    Tensor<T> gk(Shape{n, ck, grad_out.dim(2), grad_out.dim(3)});
    for (Index b = 0; b < n; ++b) {
      std::copy(grad_out.data() + (b * total + c0) * hw, grad_out.data() + (b * total + c0 + ck) * hw,
                gk.data() + b * ck * hw);
    }
    c0 += ck;
    Tensor<T> dk = branches_[k].backward(gk, param_grads);
    if (dx.empty()) {
      dx = std::move(dk);
    } else {
      for (Index i = 0; i < dx.numel(); ++i) dx[i] += dk[i];
    }
  }
  return dx;
}

template <class T>
void Concat<T>::visit_parameters(const ParameterVisitor<T>& f) {
  for (auto& b : branches_) b.visit_parameters(f);
}

template <class T>
void Concat<T>::visit_buffers(const BufferVisitor<T>& f) {
  for (auto& b : branches_) b.visit_buffers(f);
}

// ---------------------------------------------------------------------------

template <class T>
void initialize_parameters(Layer<T>& net, std::uint64_t seed) {
  Rng rng(seed);
  net.visit_parameters([&](Parameter<T>& p) {
    auto& v = p.value;
    if (v.rank() == 4) {
      const double fan_in = static_cast<double>(v.dim(1) * v.dim(2) * v.dim(3));
      const double sd = std::sqrt(2.0 / fan_in);
      for (Index i = 0; i < v.numel(); ++i) v[i] = static_cast<T>(sd * standard_normal(rng));
    } else if (v.rank() == 2) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(v.dim(1)));
      for (Index i = 0; i < v.numel(); ++i) v[i] = static_cast<T>(bound * (2.0 * uniform01(rng) - 1.0));
    } else if (ends_with(p.name, ".gamma")) {
      v.fill(T(1));
    } else {
      v.fill(T(0));
    }
    p.grad = Tensor<T>(v.shape());
  });
}

template <class T>
void zero_grads(Layer<T>& net) {
  net.visit_parameters([](Parameter<T>& p) { p.grad.fill(T(0)); });
}

template <class T>
Index parameter_count(Layer<T>& net) {
  Index n = 0;
  net.visit_parameters([&](Parameter<T>& p) { n += p.value.numel(); });
  return n;
}

#define STYLEADV_NN_INSTANTIATE(T)                             \
  template class Conv2d<T>;                                    \
  template class BatchNorm2d<T>;                               \
  template class ReLU<T>;                                      \
  template class MaxPool2d<T>;                                 \
  template class AvgPool2d<T>;                                 \
  template class GlobalAvgPool<T>;                             \
  template class Linear<T>;                                    \
  template class Normalize<T>;                                 \
  template class Sequential<T>;                                \
  template class Residual<T>;                                  \
  template class Concat<T>;                                    \
  template void initialize_parameters<T>(Layer<T>&, std::uint64_t); \
  template void zero_grads<T>(Layer<T>&);                      \
  template Index parameter_count<T>(Layer<T>&);

STYLEADV_NN_INSTANTIATE(float)
STYLEADV_NN_INSTANTIATE(double)

}  // namespace styleadv::nn
