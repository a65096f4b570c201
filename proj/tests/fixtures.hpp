#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "styleadv/dataset.hpp"
#include "styleadv/model_zoo.hpp"
#include "styleadv/rng.hpp"

namespace styleadv::testing {

inline Classifier tiny_classifier(const std::string& name, Regime regime, std::uint64_t seed) {
  ClassifierInfo info;
  info.name = name;
  info.arch = {nn::Arch::resnet18, 0.0625, 10};
  info.seed = seed;
  info.regime = regime;
  return Classifier(info);
}

/// Zeroes the final layer so every input lands in class `cls`.
inline void force_constant_prediction(Classifier& model, int cls) {
  model.network().visit_parameters([&](nn::Parameter<float>& p) {
    if (p.name == "classifier.weight") p.value.fill(0.0f);
    if (p.name == "classifier.bias") {
      p.value.fill(0.0f);
      p.value[cls] = 1.0f;
    }
  });
}

/// `per_class` images of every class, each a class-dependent level plus noise.
inline Dataset class_dataset(Index per_class, std::uint64_t seed, Split split = Split::test, int skip_class = -1) {
  std::vector<LabeledExample> ex;
  Rng rng(seed);
  std::uint64_t id = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    if (c == skip_class) continue;
    for (Index i = 0; i < per_class; ++i) {
      LabeledExample e;
      e.image = Tensor<float>(Shape{3, 32, 32});
      for (Index k = 0; k < e.image.numel(); ++k) {
        e.image[k] = static_cast<float>(std::clamp(0.08 * c + 0.3 * uniform01(rng), 0.0, 1.0));
      }
      e.label = c;
      e.id = id++;
      ex.push_back(std::move(e));
    }
  }
  return make_dataset(DatasetKind::cifar10, split, ex);
}

/// Smooth sinusoidal colour pattern with a little noise.
inline Tensor<float> textured_image(std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> x(Shape{3, 32, 32});
  for (int c = 0; c < 3; ++c) {
    const double fx = 1 + 5 * uniform01(rng), fy = 1 + 5 * uniform01(rng), ph = 6.28 * uniform01(rng);
    const double base = 0.2 + 0.6 * uniform01(rng), amp = 0.1 + 0.3 * uniform01(rng);
    for (int h = 0; h < 32; ++h) {
      for (int w = 0; w < 32; ++w) {
        const double v = base + amp * std::sin(fx * w * 0.3 + fy * h * 0.2 + ph) + 0.05 * (uniform01(rng) - 0.5);
        x[(c * 32 + h) * 32 + w] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return x;
}

/// Full-size CIFAR-10 binary files (five training batches and the test batch)
/// whose images are a class-dependent colour plus noise.
inline void write_synthetic_cifar(const std::filesystem::path& root) {
  constexpr Index kRecordBytes = 3073;
  std::filesystem::create_directories(root / kCifarDirName);
  const std::vector<std::string> names = {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                                          "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"};
  Rng rng(11);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(10000 * kRecordBytes));
  for (const auto& name : names) {
    for (Index i = 0; i < 10000; ++i) {
      auto* rec = bytes.data() + i * kRecordBytes;
      const int c = static_cast<int>(i % 10);
      rec[0] = static_cast<std::uint8_t>(c);
      for (Index ch = 0; ch < 3; ++ch) {
        const int base = 25 * ((c + 3 * static_cast<int>(ch)) % 10);
        for (Index p = 0; p < 1024; ++p) {
          rec[1 + ch * 1024 + p] = static_cast<std::uint8_t>(base + static_cast<int>(uniform_index(rng, 30)));
        }
      }
    }
    std::ofstream(root / kCifarDirName / name, std::ios::binary)
        .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
}

}  // namespace styleadv::testing
