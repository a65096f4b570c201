#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "styleadv/nn/layers.hpp"

namespace styleadv::nn {

enum class Arch { resnet18, vgg19, densenet121, googlenet };

std::string to_string(Arch a);
/// Accepts the canonical names (ResNet18, VGG19, DenseNet121, GoogLeNet),
/// case-insensitively. Throws ValidationError listing the supported set.
Arch parse_arch(std::string_view name);
const std::vector<Arch>& supported_archs();

/// CIFAR-10 per-channel statistics applied inside every classifier.
inline constexpr std::array<double, 3> kCifarMean{0.4914, 0.4822, 0.4465};
inline constexpr std::array<double, 3> kCifarStd{0.2470, 0.2435, 0.2616};

struct ArchConfig {
  Arch arch = Arch::resnet18;
  /// Channel multiplier. 1.0 is the published architecture; smaller values
  /// shrink every stage proportionally for CPU-budget runs.
  double width = 1.0;
  int num_classes = 10;
};

/// CIFAR-adapted classifier for 3x32x32 inputs in [0,1]:
///   Normalize -> body -> GlobalAvgPool -> Linear(num_classes).
/// The layer before the final Linear yields the penultimate representation.
template <class T>
Sequential<T> build_classifier(const ArchConfig& cfg);

/// Tap index of the penultimate (pre-logit) representation.
template <class T>
int representation_tap(const Sequential<T>& net) {
  return static_cast<int>(net.size()) - 2;
}

}  // namespace styleadv::nn
