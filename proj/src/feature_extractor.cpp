#include "styleadv/feature_extractor.hpp"

#include <algorithm>
#include <cstdlib>

#include "styleadv/io.hpp"
#include "styleadv/kernels/kernels.hpp"

namespace styleadv {
namespace {

struct ConvSpec {
  const char* name;
  Index in, out;
};

constexpr std::array<ConvSpec, 5> kConvs{{{"conv1_1", 3, 64},
                                          {"conv1_2", 64, 64},
                                          {"conv2_1", 64, 128},
                                          {"conv2_2", 128, 128},
                                          {"conv3_1", 128, 256}}};

constexpr std::string_view kVggMagic = "SADVVGG1";

std::string acquisition_help(const std::filesystem::path& tried) {
  return "pretrained VGG19 weights not found at " + tried.string() +
         ".\nExport them once (needs torch + torchvision and network access):\n"
         "  python3 tools/export_vgg19_weights.py --out " + tried.string() +
         "\nor point " + kVggWeightsEnv + " at an existing export.";
}

}  // namespace

std::string to_string(StyleLayer l) {
  switch (l) {
    case StyleLayer::r11: return "R11";
    case StyleLayer::r12: return "R12";
    case StyleLayer::r21: return "R21";
    case StyleLayer::r22: return "R22";
    case StyleLayer::r31: return "R31";
  }
  return "?";
}

std::string relu_name(StyleLayer l) {
  const std::string s = to_string(l);
  return std::string("relu") + s[1] + "_" + s[2];
}

StyleLayer parse_style_layer(std::string_view s) {
  for (StyleLayer l : all_style_layers()) {
    if (s == to_string(l) || s == relu_name(l)) return l;
  }
  throw ValidationError("unknown style layer '" + std::string(s) + "' (R11, R12, R21, R22, R31)");
}

const std::vector<StyleLayer>& all_style_layers() {
  static const std::vector<StyleLayer> all{StyleLayer::r11, StyleLayer::r12, StyleLayer::r21, StyleLayer::r22,
                                           StyleLayer::r31};
  return all;
}

template <class T>
const LayerStats<T>& FeatureStats<T>::at(StyleLayer l) const {
  for (const auto& s : layers) {
    if (s.layer == l) return s;
  }
  throw ValidationError("feature statistics do not include layer " + to_string(l));
}

template <class T>
LayerStats<T> channel_stats(StyleLayer layer, const Tensor<T>& a) {
  if (a.rank() != 3 && !(a.rank() == 4 && a.dim(0) == 1)) {
    throw ShapeError("channel_stats expects C x H x W, got " + a.shape().str());
  }
  const Index c = a.dim(a.rank() - 3);
  const Index hw = a.dim(a.rank() - 2) * a.dim(a.rank() - 1);
  LayerStats<T> s{layer, std::vector<T>(static_cast<std::size_t>(c)), std::vector<T>(static_cast<std::size_t>(c))};
  kernels::channel_moments(c, hw, a.data(), static_cast<T>(kVarianceFloor), s.mean.data(), s.std.data());
  return s;
}

template <class T>
VggExtractor<T>::VggExtractor() {
  net_.template emplace<nn::Normalize<T>>(kImageNetMean, kImageNetStd);
  for (std::size_t i = 0; i < kConvs.size(); ++i) {
    const auto& c = kConvs[i];
    net_.template emplace<nn::Conv2d<T>>(c.name, c.in, c.out, 3, 1, 1, true);
    net_.template emplace<nn::ReLU<T>>();
    if (i == 1 || i == 3) net_.template emplace<nn::MaxPool2d<T>>(2, 2);
  }
}

template <class T>
int VggExtractor<T>::tap(StyleLayer l) {
  switch (l) {
    case StyleLayer::r11: return 2;
    case StyleLayer::r12: return 4;
    case StyleLayer::r21: return 7;
    case StyleLayer::r22: return 9;
    case StyleLayer::r31: return 12;
  }
  return -1;
}

template <class T>
VggExtractor<T> VggExtractor<T>::random(std::uint64_t seed) {
  VggExtractor v;
  nn::initialize_parameters(v.net_, seed);
  v.source_ = "random:" + std::to_string(seed);
  return v;
}

template <class T>
VggExtractor<T> VggExtractor<T>::from_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingWeightsError(acquisition_help(path));
  const auto bytes = io::read_bytes(path);
  io::BlobReader r(bytes, "VGG19 weights " + path.string());
  io::read_header(r, kVggMagic, kVggFormatVersion);
  const auto count = r.u32();
  if (count != kConvs.size()) throw FormatError("VGG19 weight file must hold 5 convolutions");
  VggExtractor v;
  std::size_t k = 0;
  v.net_.visit_parameters([&](nn::Parameter<T>& p) {
    const std::size_t conv = k / 2;
    const bool is_bias = k % 2 == 1;
    ++k;
    if (!is_bias && r.str() != kConvs[conv].name) throw FormatError("VGG19 weight file layer order mismatch");
    Tensor<float> t = r.tensor<float>();
    if (t.shape() != p.value.shape()) {
      throw FormatError("VGG19 tensor for " + p.name + " has shape " + t.shape().str() + ", expected " +
                        p.value.shape().str());
    }
    p.value = t.cast<T>();
  });
  r.expect_end();
  v.pretrained_ = true;
  v.source_ = path.string();
  return v;
}

template <class T>
VggExtractor<T> VggExtractor<T>::load_default() {
  if (const char* env = std::getenv(kVggWeightsEnv); env && *env) return from_file(env);
  return from_file(cache_root() / kVggWeightsFile);
}

template <class T>
typename VggExtractor<T>::Features VggExtractor<T>::extract(const Tensor<T>& image,
                                                             const std::vector<StyleLayer>& layers,
                                                             bool want_content) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("extractor input must be 3 x H x W, got " + image.shape().str());
  if (image.dim(1) < 4 || image.dim(2) < 4) throw ShapeError("extractor input must be at least 4 x 4");
  std::vector<int> taps;
  for (StyleLayer l : layers) taps.push_back(tap(l));
  if (want_content) taps.push_back(tap(kContentLayer));
  std::sort(taps.begin(), taps.end());
  taps.erase(std::unique(taps.begin(), taps.end()), taps.end());

  last_shape_ = image.shape();
  last_acts_ = net_.forward_taps(image.reshaped(image.shape().batched(1)), nn::Mode::eval, taps);
  last_taps_ = taps;
  last_layers_ = layers;
  last_content_ = want_content;

  auto act_of = [&](StyleLayer l) -> const Tensor<T>& {
    const auto it = std::find(taps.begin(), taps.end(), tap(l));
    return last_acts_[static_cast<std::size_t>(it - taps.begin())];
  };
  Features f;
  for (StyleLayer l : layers) f.stats.layers.push_back(channel_stats(l, act_of(l)));
  last_stats_ = f.stats.layers;
  if (want_content) {
    const auto& a = act_of(kContentLayer);
    f.content = a.reshaped(a.shape().tail());
  }
  return f;
}

template <class T>
Tensor<T> VggExtractor<T>::backward(const std::vector<LayerStats<T>>& dstats, const Tensor<T>* dcontent) {
  if (last_taps_.empty()) throw ValidationError("extractor backward called before extract");
  if (dstats.size() != last_layers_.size()) throw ShapeError("extractor backward: layer count mismatch");
  if (dcontent && !last_content_) throw ValidationError("extractor backward: content map was not requested");
  std::vector<Tensor<T>> grads(last_taps_.size());
  auto slot = [&](StyleLayer l) -> std::size_t {
    return static_cast<std::size_t>(std::find(last_taps_.begin(), last_taps_.end(), tap(l)) - last_taps_.begin());
  };
  for (std::size_t i = 0; i < dstats.size(); ++i) {
    const std::size_t k = slot(last_layers_[i]);
    const Tensor<T>& a = last_acts_[k];
    const Index c = a.dim(1), hw = a.dim(2) * a.dim(3);
    const auto& s = last_stats_[i];
    if (dstats[i].mean.size() != static_cast<std::size_t>(c) || dstats[i].std.size() != static_cast<std::size_t>(c)) {
      throw ShapeError("extractor backward: channel count mismatch at " + to_string(last_layers_[i]));
    }
    Tensor<T> g(a.shape());
    kernels::channel_moments_backward(c, hw, a.data(), s.mean.data(), s.std.data(), static_cast<T>(kVarianceFloor),
                                      dstats[i].mean.data(), dstats[i].std.data(), g.data());
    if (grads[k].empty()) {
      grads[k] = std::move(g);
    } else {
      for (Index j = 0; j < g.numel(); ++j) grads[k][j] += g[j];
    }
  }
  if (dcontent) {
    const std::size_t k = slot(kContentLayer);
    if (dcontent->numel() != last_acts_[k].numel()) throw ShapeError("extractor backward: content gradient shape");
    if (grads[k].empty()) grads[k] = Tensor<T>(last_acts_[k].shape());
    for (Index j = 0; j < dcontent->numel(); ++j) grads[k][j] += (*dcontent)[j];
  }
  Tensor<T> dx = net_.backward_taps(last_taps_, grads, false);
  if (dx.empty()) return Tensor<T>(last_shape_);
  return std::move(dx).reshaped(last_shape_);
}

std::filesystem::path cache_root() {
  if (const char* env = std::getenv("STYLEADV_CACHE"); env && *env) return env;
  if (const char* home = std::getenv("HOME"); home && *home) return std::filesystem::path(home) / ".cache" / "styleadv";
  return std::filesystem::current_path() / ".styleadv-cache";
}

template struct FeatureStats<float>;
template struct FeatureStats<double>;
template LayerStats<float> channel_stats(StyleLayer, const Tensor<float>&);
template LayerStats<double> channel_stats(StyleLayer, const Tensor<double>&);
template class VggExtractor<float>;
template class VggExtractor<double>;

}  // namespace styleadv
