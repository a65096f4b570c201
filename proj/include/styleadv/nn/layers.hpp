#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "styleadv/rng.hpp"
#include "styleadv/tensor.hpp"

namespace styleadv::nn {

enum class Mode { train, eval };

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

template <class T>
using ParameterVisitor = std::function<void(Parameter<T>&)>;
template <class T>
using BufferVisitor = std::function<void(const std::string&, Tensor<T>&)>;

/// A differentiable layer. forward() caches whatever backward() needs, so a
/// layer instance serves one forward/backward pair at a time and is not
/// thread-safe; clone() a network for concurrent use.
template <class T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;

  /// Gradient w.r.t. the last forward input. Parameter gradients are
  /// accumulated into Parameter::grad only when `param_grads` is set.
  virtual Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) = 0;

  virtual void visit_parameters(const ParameterVisitor<T>&) {}
  virtual void visit_buffers(const BufferVisitor<T>&) {}
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual std::string kind() const = 0;
};

template <class T>
using LayerPtr = std::unique_ptr<Layer<T>>;

template <class T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::string name, Index in_channels, Index out_channels, Index kernel, Index stride,
         Index pad, bool bias);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
  void visit_parameters(const ParameterVisitor<T>& f) override;
  LayerPtr<T> clone() const override { return std::make_unique<Conv2d>(*this); }
  std::string kind() const override { return "conv2d"; }

  Index in_channels() const { return in_channels_; }
  Index out_channels() const { return out_channels_; }

 private:
  Index in_channels_, out_channels_, kernel_, stride_, pad_;
  bool has_bias_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
};

/// Batch normalization over (N, H, W) per channel, with running statistics
/// for eval mode (momentum 0.1, unbiased running variance).
template <class T>
class BatchNorm2d final : public Layer<T> {
 public:
  BatchNorm2d(std::string name, Index channels, T eps = T(1e-5), T momentum = T(0.1));

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
  void visit_parameters(const ParameterVisitor<T>& f) override;
  void visit_buffers(const BufferVisitor<T>& f) override;
  LayerPtr<T> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
  std::string kind() const override { return "batchnorm2d"; }

 private:
  std::string name_;
  Index channels_;
  T eps_, momentum_;
  Parameter<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
  Mode last_mode_ = Mode::eval;
  Tensor<T> xhat_, batch_var_;
};

template <class T>
class ReLU final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
  LayerPtr<T> clone() const override { return std::make_unique<ReLU>(*this); }
  std::string kind() const override { return "relu"; }

 private:
  Tensor<T> input_;
};

template <class T>
class MaxPool2d final : public Layer<T> {
 public:
  MaxPool2d(Index kernel, Index stride, Index pad = 0) : kernel_(kernel), stride_(stride), pad_(pad) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
  LayerPtr<T> clone() const override { return std::make_unique<MaxPool2d>(*this); }
  std::string kind() const override { return "maxpool2d"; }

 private:
  Index kernel_, stride_, pad_;
  Shape in_shape_;
  std::vector<Index> argmax_;
};

template <class T>
class AvgPool2d final : public Layer<T> {
 public:
  AvgPool2d(Index kernel, Index stride) : kernel_(kernel), stride_(stride) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
  LayerPtr<T> clone() const override { return std::make_unique<AvgPool2d>(*this); }
  std::string kind() const override { return "avgpool2d"; }

 private:
  Index kernel_, stride_;
  Shape in_shape_;
};

/// Mean over each spatial plane; N,C,H,W -> N,C.
template <class T>
class GlobalAvgPool final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
  LayerPtr<T> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  std::string kind() const override { return "global_avgpool"; }

 private:
  Shape in_shape_;
};

/// Fully connected layer on N,F inputs.
template <class T>
class Linear final : public Layer<T> {
 public:
  Linear(std::string name, Index in_features, Index out_features);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
  void visit_parameters(const ParameterVisitor<T>& f) override;
  LayerPtr<T> clone() const override { return std::make_unique<Linear>(*this); }
  std::string kind() const override { return "linear"; }

 private:
  Index in_, out_;
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
};

/// Fixed per-channel standardization (x - mean) / std; no parameters.
template <class T>
class Normalize final : public Layer<T> {
 public:
  Normalize(std::array<double, 3> mean, std::array<double, 3> std);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
  LayerPtr<T> clone() const override { return std::make_unique<Normalize>(*this); }
  std::string kind() const override { return "normalize"; }

 private:
  std::vector<T> scale_, shift_;
  Shape in_shape_;
};

/// Layers applied in order. Empty is the identity.
template <class T>
class Sequential final : public Layer<T> {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  Sequential& add(LayerPtr<T> layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }
  template <class L, class... Args>
  Sequential& emplace(Args&&... args) {
    return add(std::make_unique<L>(std::forward<Args>(args)...));
  }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& at(std::size_t i) { return *layers_.at(i); }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;

  /// Runs layers [0, max(taps)] and returns the output of each tapped layer,
  /// in the order given.
  std::vector<Tensor<T>> forward_taps(const Tensor<T>& x, Mode mode, const std::vector<int>& taps);

  /// Backward through the layers run by the last forward_taps call, adding
  /// grads[i] (if non-empty) at tap taps[i]. Returns the input gradient.
  Tensor<T> backward_taps(const std::vector<int>& taps, const std::vector<Tensor<T>>& grads,
                          bool param_grads);

  void visit_parameters(const ParameterVisitor<T>& f) override;
  void visit_buffers(const BufferVisitor<T>& f) override;
  LayerPtr<T> clone() const override { return std::make_unique<Sequential>(*this); }
  std::string kind() const override { return "sequential"; }

 private:
  std::vector<LayerPtr<T>> layers_;
  int last_ran_ = -1;
};

/// y = main(x) + shortcut(x); an empty shortcut is the identity.
template <class T>
class Residual final : public Layer<T> {
 public:
  Residual(Sequential<T> main, Sequential<T> shortcut)
      : main_(std::move(main)), shortcut_(std::move(shortcut)) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
  void visit_parameters(const ParameterVisitor<T>& f) override;
  void visit_buffers(const BufferVisitor<T>& f) override;
  LayerPtr<T> clone() const override { return std::make_unique<Residual>(*this); }
  std::string kind() const override { return "residual"; }

 private:
  Sequential<T> main_, shortcut_;
};

/// Runs every branch on the same input and concatenates along channels.
/// An empty branch passes the input through (DenseNet-style skip).
template <class T>
class Concat final : public Layer<T> {
 public:
  explicit Concat(std::vector<Sequential<T>> branches) : branches_(std::move(branches)) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads) override;
  void visit_parameters(const ParameterVisitor<T>& f) override;
  void visit_buffers(const BufferVisitor<T>& f) override;
  LayerPtr<T> clone() const override { return std::make_unique<Concat>(*this); }
  std::string kind() const override { return "concat"; }

 private:
  std::vector<Sequential<T>> branches_;
  std::vector<Index> channels_;
};

/// He-normal init for conv weights, PyTorch-default uniform for linear layers,
/// zeros for biases, ones/zeros for batch-norm affine terms. Deterministic in
/// parameter traversal order.
template <class T>
void initialize_parameters(Layer<T>& net, std::uint64_t seed);

template <class T>
void zero_grads(Layer<T>& net);

template <class T>
Index parameter_count(Layer<T>& net);

}  // namespace styleadv::nn
