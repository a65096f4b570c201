#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "styleadv/nn/layers.hpp"

namespace styleadv {

/// VGG19 activations used for style statistics and content comparison.
enum class StyleLayer { r11, r12, r21, r22, r31 };

/// Short code ("R22"); parse accepts the code or the relu name ("relu2_2").
std::string to_string(StyleLayer l);
std::string relu_name(StyleLayer l);
StyleLayer parse_style_layer(std::string_view s);
const std::vector<StyleLayer>& all_style_layers();

inline constexpr StyleLayer kContentLayer = StyleLayer::r22;
inline constexpr double kVarianceFloor = 1e-8;
inline constexpr std::array<double, 3> kImageNetMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageNetStd{0.229, 0.224, 0.225};

/// Per-channel spatial mean and population standard deviation of one layer.
template <class T>
struct LayerStats {
  StyleLayer layer = StyleLayer::r11;
  std::vector<T> mean;
  std::vector<T> std;
  friend bool operator==(const LayerStats&, const LayerStats&) = default;
};

template <class T>
struct FeatureStats {
  std::vector<LayerStats<T>> layers;
  const LayerStats<T>& at(StyleLayer l) const;
  friend bool operator==(const FeatureStats&, const FeatureStats&) = default;
};

/// Statistics of a C x H x W (or 1 x C x H x W) activation map with
/// std = sqrt(max(population variance, kVarianceFloor)).
template <class T>
LayerStats<T> channel_stats(StyleLayer layer, const Tensor<T>& activation);

/// Environment variable naming the extractor weight file.
inline constexpr const char* kVggWeightsEnv = "STYLEADV_VGG19_WEIGHTS";
inline constexpr const char* kVggWeightsFile = "vgg19_relu3_1.bin";
inline constexpr std::uint32_t kVggFormatVersion = 1;

/// The first eleven layers of VGG19 (through relu3_1) with ImageNet input
/// normalization applied inside. Weights are fixed; nothing here trains them.
/// Like every network in this library it caches activations between extract()
/// and backward(), so each thread needs its own copy.
template <class T>
class VggExtractor {
 public:
  /// Loads the exported weight blob; throws MissingWeightsError with
  /// acquisition instructions if the file is absent.
  static VggExtractor from_file(const std::filesystem::path& path);

  /// Resolves the weight file from STYLEADV_VGG19_WEIGHTS, then
  /// <cache root>/vgg19_relu3_1.bin.
  static VggExtractor load_default();

  /// He-initialized weights. Exercises every code path without the
  /// pretrained file; statistics are meaningless for perception.
  static VggExtractor random(std::uint64_t seed);

  struct Features {
    FeatureStats<T> stats;
    Tensor<T> content;  // R22 activation map (C x H x W), empty unless requested
  };

  /// Runs one 3 x H x W image in [0,1].
  Features extract(const Tensor<T>& image, const std::vector<StyleLayer>& layers, bool want_content);

  /// Gradient w.r.t. the image of the last extract() call, given gradients of
  /// each requested layer's mean/std (same order as requested) and of the
  /// content map (may be null).
  Tensor<T> backward(const std::vector<LayerStats<T>>& dstats, const Tensor<T>* dcontent);

  bool pretrained() const { return pretrained_; }
  const std::string& source() const { return source_; }

 private:
  VggExtractor();
  static int tap(StyleLayer l);

  nn::Sequential<T> net_;
  bool pretrained_ = false;
  std::string source_;
  std::vector<StyleLayer> last_layers_;
  bool last_content_ = false;
  std::vector<int> last_taps_;
  std::vector<Tensor<T>> last_acts_;
  std::vector<LayerStats<T>> last_stats_;
  Shape last_shape_;
};

/// Cache root: $STYLEADV_CACHE, else $HOME/.cache/styleadv.
std::filesystem::path cache_root();

}  // namespace styleadv
