#include <gtest/gtest.h>

#include "styleadv/nn/architectures.hpp"
#include "styleadv/nn/layers.hpp"
#include "styleadv/nn/loss.hpp"
#include "styleadv/nn/optim.hpp"
#include "support.hpp"

namespace styleadv::nn {
namespace {

using styleadv::testing::directional_derivative;
using styleadv::testing::dot;
using styleadv::testing::random_tensor;

// Checks input and parameter gradients of `net` under loss <net(x), r>.
void check_gradients(Layer<double>& net, const Tensor<double>& x, Mode mode, double tol = 1e-6) {
  Tensor<double> y = net.forward(x, mode);
  auto r = random_tensor<double>(y.shape(), 99);
  zero_grads(net);
  Tensor<double> dx = net.backward(r, true);

  auto loss = [&](const Tensor<double>& in) { return dot(net.forward(in, mode), r); };
  auto dir = random_tensor<double>(x.shape(), 7);
  const double fd = directional_derivative(loss, x, dir);
  EXPECT_NEAR(dot(dx, dir), fd, tol * std::max(1.0, std::abs(fd))) << "input gradient";

  std::vector<Parameter<double>*> params;
  net.visit_parameters([&](Parameter<double>& p) { params.push_back(&p); });
  std::vector<Tensor<double>> analytic;
  for (auto* p : params) analytic.push_back(p->grad);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto pdir = random_tensor<double>(p.value.shape(), 100 + i);
    auto f = [&](const Tensor<double>& v) {
      Tensor<double> saved = p.value;
      p.value = v;
      const double out = loss(x);
      p.value = saved;
      return out;
    };
    const double pfd = directional_derivative(f, p.value, pdir);
    EXPECT_NEAR(dot(analytic[i], pdir), pfd, tol * std::max(1.0, std::abs(pfd))) << p.name;
  }
}

TEST(LayerGradients, Conv2dWithBias) {
  Conv2d<double> conv("c", 3, 4, 3, 2, 1, true);
  initialize_parameters(conv, 1);
  check_gradients(conv, random_tensor<double>(Shape{2, 3, 7, 7}, 1), Mode::train);
}

TEST(LayerGradients, BatchNormTrainAndEval) {
  Sequential<double> net;
  net.emplace<Conv2d<double>>("c", 2, 3, 3, 1, 1, false);
  net.emplace<BatchNorm2d<double>>("bn", 3);
  initialize_parameters(net, 2);
  auto x = random_tensor<double>(Shape{4, 2, 5, 5}, 2);
  check_gradients(net, x, Mode::train);
  net.forward(x, Mode::train);  // populate running stats
  check_gradients(net, x, Mode::eval);
}

TEST(LayerGradients, PoolsReluLinearNormalize) {
  Sequential<double> net;
  net.emplace<Normalize<double>>(kCifarMean, kCifarStd);
  net.emplace<MaxPool2d<double>>(3, 2, 1);
  net.emplace<ReLU<double>>();
  net.emplace<AvgPool2d<double>>(2, 2);
  net.emplace<GlobalAvgPool<double>>();
  net.emplace<Linear<double>>("fc", 3, 5);
  initialize_parameters(net, 3);
  check_gradients(net, random_tensor<double>(Shape{3, 3, 8, 8}, 3), Mode::train);
}

TEST(LayerGradients, ResidualAndConcat) {
  Sequential<double> main;
  main.emplace<Conv2d<double>>("m", 2, 2, 3, 1, 1, false);
  Sequential<double> shortcut;
  Sequential<double> branch;
  branch.emplace<Conv2d<double>>("b", 2, 3, 1, 1, 0, true);
  std::vector<Sequential<double>> branches;
  branches.push_back(std::move(branch));
  branches.emplace_back();
  Sequential<double> net;
  net.emplace<Residual<double>>(std::move(main), std::move(shortcut));
  net.emplace<Concat<double>>(std::move(branches));
  initialize_parameters(net, 4);
  Tensor<double> y = net.forward(random_tensor<double>(Shape{2, 2, 4, 4}, 4), Mode::train);
  EXPECT_EQ(y.shape(), (Shape{2, 5, 4, 4}));
  check_gradients(net, random_tensor<double>(Shape{2, 2, 4, 4}, 4), Mode::train);
}

class ArchitectureTest : public ::testing::TestWithParam<Arch> {};

TEST_P(ArchitectureTest, OutputContractAndInputGradient) {
  auto net = build_classifier<double>({GetParam(), 0.0625, 10});
  initialize_parameters(net, 5);
  auto x = random_tensor<double>(Shape{2, 3, 32, 32}, 5, 0.0, 1.0);
  Tensor<double> logits = net.forward(x, Mode::eval);
  EXPECT_EQ(logits.shape(), (Shape{2, 10}));
  auto taps = net.forward_taps(x, Mode::eval, {representation_tap(net)});
  EXPECT_EQ(taps[0].rank(), 2);

  Tensor<double> y = net.forward(x, Mode::eval);
  auto r = random_tensor<double>(y.shape(), 6);
  Tensor<double> dx = net.backward(r, false);
  auto dir = random_tensor<double>(x.shape(), 8);
  auto loss = [&](const Tensor<double>& in) { return dot(net.forward(in, Mode::eval), r); };
  const double fd = directional_derivative(loss, x, dir, 1e-7);
  EXPECT_NEAR(dot(dx, dir), fd, 1e-4 * std::max(1.0, std::abs(fd)));
}

INSTANTIATE_TEST_SUITE_P(All, ArchitectureTest, ::testing::ValuesIn(supported_archs()),
                         [](const auto& info) { return to_string(info.param); });

TEST(Architectures, FullWidthParameterCounts) {
  // Reference counts of the CIFAR-10 variants (conv/linear/batch-norm affine).
  auto resnet = build_classifier<float>({Arch::resnet18, 1.0, 10});
  EXPECT_EQ(parameter_count(resnet), 11173962);
  auto vgg = build_classifier<float>({Arch::vgg19, 1.0, 10});
  EXPECT_EQ(parameter_count(vgg), 20040522);
  auto dense = build_classifier<float>({Arch::densenet121, 1.0, 10});
  EXPECT_EQ(parameter_count(dense), 6956298);
  auto google = build_classifier<float>({Arch::googlenet, 1.0, 10});
  EXPECT_EQ(parameter_count(google), 6166250);
}

TEST(Architectures, ParseNames) {
  EXPECT_EQ(parse_arch("resnet18"), Arch::resnet18);
  EXPECT_EQ(parse_arch("GoogLeNet"), Arch::googlenet);
  EXPECT_THROW(parse_arch("AlexNet"), ValidationError);
}

TEST(Loss, CrossEntropyGradientAndArgmax) {
  auto logits = random_tensor<double>(Shape{3, 4}, 1, -3, 3);
  std::vector<int> labels{0, 3, 1};
  auto r = cross_entropy(logits, labels);
  auto dir = random_tensor<double>(logits.shape(), 2);
  auto f = [&](const Tensor<double>& l) { return cross_entropy(l, labels).loss; };
  EXPECT_NEAR(dot(r.grad, dir), directional_derivative(f, logits, dir), 1e-8);

  Tensor<double> onehot(logits.shape());
  for (int i = 0; i < 3; ++i) onehot[i * 4 + labels[static_cast<std::size_t>(i)]] = 1.0;
  EXPECT_NEAR(soft_cross_entropy(logits, onehot).loss, r.loss, 1e-12);

  Tensor<float> tie(Shape{1, 3}, std::vector<float>{0.5f, 0.5f, 0.1f});
  EXPECT_EQ(argmax_rows(tie), std::vector<int>{0});
  EXPECT_THROW(cross_entropy(logits, {0, 1}), ShapeError);
}

TEST(Optim, AdamFirstStepMovesByLearningRate) {
  Tensor<double> x(Shape{3}, std::vector<double>{0.0, 1.0, 2.0});
  Tensor<double> g(Shape{3}, std::vector<double>{2.0, -0.5, 0.0});
  Adam<double> adam(0.05);
  adam.step(x, g);
  EXPECT_NEAR(x[0], -0.05, 1e-6);
  EXPECT_NEAR(x[1], 1.05, 1e-6);
  EXPECT_DOUBLE_EQ(x[2], 2.0);
}

TEST(Optim, SgdMomentumAndSchedule) {
  Linear<double> fc("fc", 1, 1);
  fc.visit_parameters([](Parameter<double>& p) {
    p.value.fill(1.0);
    p.grad.fill(1.0);
  });
  Sgd<double> sgd({0.1, 0.9, 0.0});
  sgd.step(fc);
  sgd.step(fc);  // velocity 1, then 1.9
  fc.visit_parameters([](Parameter<double>& p) { EXPECT_NEAR(p.value[0], 1.0 - 0.1 - 0.19, 1e-12); });
  EXPECT_DOUBLE_EQ(step_lr(0.1, 0, {50, 75}, 0.1), 0.1);
  EXPECT_NEAR(step_lr(0.1, 80, {50, 75}, 0.1), 0.001, 1e-15);
}

}  // namespace
}  // namespace styleadv::nn
