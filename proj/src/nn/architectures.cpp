#include "styleadv/nn/architectures.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace styleadv::nn {
namespace {

Index scaled(double width, Index channels) {
  return std::max<Index>(1, static_cast<Index>(std::lround(static_cast<double>(channels) * width)));
}

template <class T>
void conv_bn_relu(Sequential<T>& s, const std::string& name, Index in, Index out, Index k,
                  Index stride, Index pad, bool bias = false) {
  s.template emplace<Conv2d<T>>(name + ".conv", in, out, k, stride, pad, bias);
  s.template emplace<BatchNorm2d<T>>(name + ".bn", out);
  s.template emplace<ReLU<T>>();
}

// ResNet18: BasicBlock x [2,2,2,2].
template <class T>
void resnet18_body(Sequential<T>& net, double width) {
  Index in = scaled(width, 64);
  conv_bn_relu(net, "stem", 3, in, 3, 1, 1);
  const std::array<Index, 4> planes{64, 128, 256, 512};
  for (int stage = 0; stage < 4; ++stage) {
    const Index out = scaled(width, planes[static_cast<std::size_t>(stage)]);
    for (int block = 0; block < 2; ++block) {
      const Index stride = (stage > 0 && block == 0) ? 2 : 1;
      const std::string name = "layer" + std::to_string(stage + 1) + "." + std::to_string(block);
      Sequential<T> main;
      main.template emplace<Conv2d<T>>(name + ".conv1", in, out, 3, stride, 1, false);
      main.template emplace<BatchNorm2d<T>>(name + ".bn1", out);
      main.template emplace<ReLU<T>>();
      main.template emplace<Conv2d<T>>(name + ".conv2", out, out, 3, 1, 1, false);
      main.template emplace<BatchNorm2d<T>>(name + ".bn2", out);
      Sequential<T> shortcut;
      if (stride != 1 || in != out) {
        shortcut.template emplace<Conv2d<T>>(name + ".shortcut.conv", in, out, 1, stride, 0, false);
        shortcut.template emplace<BatchNorm2d<T>>(name + ".shortcut.bn", out);
      }
      net.template emplace<Residual<T>>(std::move(main), std::move(shortcut));
      net.template emplace<ReLU<T>>();
      in = out;
    }
  }
}

// VGG19 with batch norm: 16 conv layers, 5 max-pools.
template <class T>
Index vgg19_body(Sequential<T>& net, double width) {
  constexpr int M = -1;
  const std::array<int, 21> cfg{64,  64,  M,   128, 128, M,   256, 256, 256, 256, M,
                                512, 512, 512, 512, M,   512, 512, 512, 512, M};
  Index in = 3;
  int conv = 0, pool = 0;
  for (int c : cfg) {
    if (c == M) {
      net.template emplace<MaxPool2d<T>>(2, 2);
      ++pool;
      continue;
    }
    const Index out = scaled(width, c);
    conv_bn_relu(net, "features.b" + std::to_string(pool + 1) + "c" + std::to_string(++conv), in,
                 out, 3, 1, 1, true);
    in = out;
  }
  return in;
}

// DenseNet121: bottleneck blocks [6,12,24,16], growth 32, compression 0.5.
template <class T>
Index densenet121_body(Sequential<T>& net, double width) {
  const Index growth = scaled(width, 32);
  Index planes = 2 * growth;
  net.template emplace<Conv2d<T>>("stem.conv", 3, planes, 3, 1, 1, false);
  const std::array<int, 4> blocks{6, 12, 24, 16};
  for (int d = 0; d < 4; ++d) {
    for (int i = 0; i < blocks[static_cast<std::size_t>(d)]; ++i) {
      const std::string name = "dense" + std::to_string(d + 1) + "." + std::to_string(i);
      Sequential<T> f;
      f.template emplace<BatchNorm2d<T>>(name + ".bn1", planes);
      f.template emplace<ReLU<T>>();
      f.template emplace<Conv2d<T>>(name + ".conv1", planes, 4 * growth, 1, 1, 0, false);
      f.template emplace<BatchNorm2d<T>>(name + ".bn2", 4 * growth);
      f.template emplace<ReLU<T>>();
      f.template emplace<Conv2d<T>>(name + ".conv2", 4 * growth, growth, 3, 1, 1, false);
      std::vector<Sequential<T>> branches;
      branches.push_back(std::move(f));
      branches.emplace_back();  // identity: new features first, then the input
      net.template emplace<Concat<T>>(std::move(branches));
      planes += growth;
    }
    if (d < 3) {
      const Index out = planes / 2;
      const std::string name = "trans" + std::to_string(d + 1);
      net.template emplace<BatchNorm2d<T>>(name + ".bn", planes);
      net.template emplace<ReLU<T>>();
      net.template emplace<Conv2d<T>>(name + ".conv", planes, out, 1, 1, 0, false);
      net.template emplace<AvgPool2d<T>>(2, 2);
      planes = out;
    }
  }
  net.template emplace<BatchNorm2d<T>>("final.bn", planes);
  net.template emplace<ReLU<T>>();
  return planes;
}

struct InceptionSpec {
  Index n1x1, n3x3red, n3x3, n5x5red, n5x5, pool_planes;
};

template <class T>
Index inception(Sequential<T>& net, const std::string& name, Index in, InceptionSpec s, double width) {
  const Index a = scaled(width, s.n1x1), br = scaled(width, s.n3x3red), b = scaled(width, s.n3x3);
  const Index cr = scaled(width, s.n5x5red), c = scaled(width, s.n5x5), p = scaled(width, s.pool_planes);
  std::vector<Sequential<T>> branches(4);
  conv_bn_relu(branches[0], name + ".b1", in, a, 1, 1, 0, true);
  conv_bn_relu(branches[1], name + ".b2a", in, br, 1, 1, 0, true);
  conv_bn_relu(branches[1], name + ".b2b", br, b, 3, 1, 1, true);
  conv_bn_relu(branches[2], name + ".b3a", in, cr, 1, 1, 0, true);
  conv_bn_relu(branches[2], name + ".b3b", cr, c, 3, 1, 1, true);
  conv_bn_relu(branches[2], name + ".b3c", c, c, 3, 1, 1, true);
  branches[3].template emplace<MaxPool2d<T>>(3, 1, 1);
  conv_bn_relu(branches[3], name + ".b4", in, p, 1, 1, 0, true);
  net.template emplace<Concat<T>>(std::move(branches));
  return a + b + c + p;
}

// GoogLeNet (Inception v1), CIFAR stem.
template <class T>
Index googlenet_body(Sequential<T>& net, double width) {
  Index in = scaled(width, 192);
  conv_bn_relu(net, "pre", 3, in, 3, 1, 1, true);
  in = inception(net, "a3", in, {64, 96, 128, 16, 32, 32}, width);
  in = inception(net, "b3", in, {128, 128, 192, 32, 96, 64}, width);
  net.template emplace<MaxPool2d<T>>(3, 2, 1);
  in = inception(net, "a4", in, {192, 96, 208, 16, 48, 64}, width);
  in = inception(net, "b4", in, {160, 112, 224, 24, 64, 64}, width);
  in = inception(net, "c4", in, {128, 128, 256, 24, 64, 64}, width);
  in = inception(net, "d4", in, {112, 144, 288, 32, 64, 64}, width);
  in = inception(net, "e4", in, {256, 160, 320, 32, 128, 128}, width);
  net.template emplace<MaxPool2d<T>>(3, 2, 1);
  in = inception(net, "a5", in, {256, 160, 320, 32, 128, 128}, width);
  in = inception(net, "b5", in, {384, 192, 384, 48, 128, 128}, width);
  return in;
}

}  // namespace

std::string to_string(Arch a) {
  switch (a) {
    case Arch::resnet18: return "ResNet18";
    case Arch::vgg19: return "VGG19";
    case Arch::densenet121: return "DenseNet121";
    case Arch::googlenet: return "GoogLeNet";
  }
  return "?";
}

const std::vector<Arch>& supported_archs() {
  static const std::vector<Arch> all{Arch::resnet18, Arch::vgg19, Arch::densenet121, Arch::googlenet};
  return all;
}

Arch parse_arch(std::string_view name) {
  auto lower = [](std::string_view s) {
    std::string r(s);
    std::transform(r.begin(), r.end(), r.begin(), [](unsigned char c) { return std::tolower(c); });
    return r;
  };
  for (Arch a : supported_archs()) {
    if (lower(to_string(a)) == lower(name)) return a;
  }
  std::string list;
  for (Arch a : supported_archs()) list += (list.empty() ? "" : ", ") + to_string(a);
  throw ValidationError("unknown architecture '" + std::string(name) + "'; supported: " + list);
}

template <class T>
Sequential<T> build_classifier(const ArchConfig& cfg) {
  if (!(cfg.width > 0.0)) throw ValidationError("architecture width must be positive");
  if (cfg.num_classes < 1) throw ValidationError("num_classes must be positive");
  Sequential<T> net;
  net.template emplace<Normalize<T>>(kCifarMean, kCifarStd);
  Index features = 0;
  switch (cfg.arch) {
    case Arch::resnet18:
      resnet18_body(net, cfg.width);
      features = scaled(cfg.width, 512);
      break;
    case Arch::vgg19: features = vgg19_body(net, cfg.width); break;
    case Arch::densenet121: features = densenet121_body(net, cfg.width); break;
    case Arch::googlenet: features = googlenet_body(net, cfg.width); break;
  }
  net.template emplace<GlobalAvgPool<T>>();
  net.template emplace<Linear<T>>("classifier", features, cfg.num_classes);
  return net;
}

template Sequential<float> build_classifier<float>(const ArchConfig&);
template Sequential<double> build_classifier<double>(const ArchConfig&);

}  // namespace styleadv::nn
