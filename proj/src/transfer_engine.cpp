#include "styleadv/transfer_engine.hpp"

#include <algorithm>
#include <cmath>

#include "styleadv/nn/optim.hpp"
#include "styleadv/rng.hpp"

namespace styleadv {
namespace {

template <class T>
void require_image(const Tensor<T>& x, const char* what) {
  if (x.rank() != 3 || x.dim(0) != 3) {
    throw ShapeError(std::string(what) + " must be 3 x H x W, got " + x.shape().str());
  }
}

// Writes scale * (a - b) / ||a - b|| into out (zero where a == b).
template <class T>
void unit_difference(const T* a, const T* b, std::size_t n, double scale, T* out) {
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) sq += (double(a[i]) - double(b[i])) * (double(a[i]) - double(b[i]));
  const double norm = std::sqrt(sq);
  for (std::size_t i = 0; i < n; ++i) out[i] = norm > 0.0 ? static_cast<T>(scale * (double(a[i]) - double(b[i])) / norm) : T(0);
}

template <class T>
double vec_distance(const std::vector<T>& a, const std::vector<T>& b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += (double(a[i]) - double(b[i])) * (double(a[i]) - double(b[i]));
  return std::sqrt(sq);
}

template <class T>
void check_compatible(const FeatureStats<T>& a, const FeatureStats<T>& b) {
  if (a.layers.size() != b.layers.size()) throw ValidationError("style_loss: layer sets differ");
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    if (x.layer != y.layer) throw ValidationError("style_loss: layer sets differ");
    if (x.mean.size() != y.mean.size() || x.std.size() != y.std.size() || x.mean.size() != x.std.size()) {
      throw ValidationError("style_loss: channel counts differ at " + to_string(x.layer));
    }
  }
}

bool finite(const LossTerms& l) {
  return std::isfinite(l.content) && std::isfinite(l.style) && std::isfinite(l.total);
}

}  // namespace

std::string to_string(ContentMode m) { return m == ContentMode::pixel ? "pixel" : "feature_r22"; }

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::content_budget: return "content_budget";
    case StopReason::style_plateau: return "style_plateau";
    case StopReason::max_iters: return "max_iters";
  }
  return "?";
}

ContentMode parse_content_mode(std::string_view s) {
  if (s == "pixel") return ContentMode::pixel;
  if (s == "feature_r22") return ContentMode::feature_r22;
  throw ValidationError("unknown content mode '" + std::string(s) + "' (feature_r22, pixel)");
}

StopReason parse_stop_reason(std::string_view s) {
  for (auto r : {StopReason::content_budget, StopReason::style_plateau, StopReason::max_iters}) {
    if (to_string(r) == s) return r;
  }
  throw FormatError("unknown stop reason '" + std::string(s) + "'");
}

template <class T>
double l2_distance(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  double sq = 0.0;
  for (Index i = 0; i < a.numel(); ++i) sq += (double(a[i]) - double(b[i])) * (double(a[i]) - double(b[i]));
  return std::sqrt(sq);
}

template <class T>
double content_loss(VggExtractor<T>& vgg, const Tensor<T>& gen, const Tensor<T>& content, ContentMode mode) {
  require_image(gen, "generated image");
  if (gen.shape() != content.shape()) {
    throw ShapeError("content_loss: shape mismatch " + gen.shape().str() + " vs " + content.shape().str());
  }
  if (mode == ContentMode::pixel) return l2_distance(gen, content);
  const Tensor<T> a = vgg.extract(gen, {}, true).content;
  const Tensor<T> b = vgg.extract(content, {}, true).content;
  return l2_distance(a, b);
}

template <class T>
double style_loss(const FeatureStats<T>& gen, const FeatureStats<T>& style) {
  check_compatible(gen, style);
  double total = 0.0;
  for (std::size_t i = 0; i < gen.layers.size(); ++i) {
    total += vec_distance(gen.layers[i].mean, style.layers[i].mean);
    total += vec_distance(gen.layers[i].std, style.layers[i].std);
  }
  return total;
}

template <class T>
void StylizationProblem<T>::validate() const {
  require_image(content, "content image");
  require_image(style, "style image");
  auto in_unit = [](const Tensor<T>& t) {
    return std::all_of(t.span().begin(), t.span().end(), [](T v) { return v >= T(0) && v <= T(1); });
  };
  if (!in_unit(content) || !in_unit(style)) throw ValidationError("stylization images must lie in [0,1]");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ValidationError("alpha and beta must be non-negative");
  if (!(alpha + beta > 0.0)) throw ValidationError("alpha + beta must be positive");
  if (max_iters < 1) throw ValidationError("max_iters must be at least 1");
  if (!(content_budget > 0.0)) throw ValidationError("content budget must be positive");
  if (patience < 1) throw ValidationError("patience must be at least 1");
  if (!(plateau_tolerance >= 0.0)) throw ValidationError("plateau tolerance must be non-negative");
  if (!(step_size > 0.0)) throw ValidationError("step size must be positive");
  if (beta > 0.0 && style_layers.empty()) throw ValidationError("style weight set but no style layers given");
}

template <class T>
io::Json problem_scalars(const StylizationProblem<T>& p) {
  io::Json layers = io::Json::array();
  for (auto l : p.style_layers) layers.push_back(to_string(l));
  return {{"alpha", p.alpha},
          {"beta", p.beta},
          {"style_layers", layers},
          {"content_layer", to_string(kContentLayer)},
          {"content_mode", to_string(p.content_mode)},
          {"content_budget", std::isfinite(p.content_budget) ? io::Json(p.content_budget) : io::Json("inf")},
          {"patience", p.patience},
          {"plateau_tolerance", p.plateau_tolerance},
          {"max_iters", p.max_iters},
          {"step_size", p.step_size},
          {"seed", p.seed}};
}

template <class T>
StyleObjective<T>::StyleObjective(VggExtractor<T>& vgg, const StylizationProblem<T>& problem)
    : vgg_(vgg), p_(problem) {
  p_.validate();
  style_stats_ = vgg_.extract(p_.style, p_.style_layers, false).stats;
  if (p_.content_mode == ContentMode::feature_r22) content_target_ = vgg_.extract(p_.content, {}, true).content;
}

template <class T>
LossTerms StyleObjective<T>::evaluate(const Tensor<T>& x, Tensor<T>* grad) {
  if (x.shape() != p_.content.shape()) throw ShapeError("objective point has the wrong shape");
  const bool feature = p_.content_mode == ContentMode::feature_r22;
  auto f = vgg_.extract(x, p_.style_layers, feature);
  LossTerms l;
  l.style = style_loss(f.stats, style_stats_);
  l.content = feature ? l2_distance(f.content, content_target_) : l2_distance(x, p_.content);
  l.total = total_loss(l.content, l.style, p_.alpha, p_.beta);
  if (!grad) return l;

  std::vector<LayerStats<T>> dstats;
  for (std::size_t i = 0; i < f.stats.layers.size(); ++i) {
    const auto& g = f.stats.layers[i];
    const auto& s = style_stats_.layers[i];
    LayerStats<T> d{g.layer, std::vector<T>(g.mean.size()), std::vector<T>(g.std.size())};
    unit_difference(g.mean.data(), s.mean.data(), g.mean.size(), p_.beta, d.mean.data());
    unit_difference(g.std.data(), s.std.data(), g.std.size(), p_.beta, d.std.data());
    dstats.push_back(std::move(d));
  }
  Tensor<T> dcontent;
  if (feature) {
    dcontent = Tensor<T>(f.content.shape());
    unit_difference(f.content.data(), content_target_.data(), static_cast<std::size_t>(f.content.numel()), p_.alpha,
                    dcontent.data());
  }
  *grad = vgg_.backward(dstats, feature ? &dcontent : nullptr);
  if (!feature) {
    Tensor<T> dpix(x.shape());
    unit_difference(x.data(), p_.content.data(), static_cast<std::size_t>(x.numel()), p_.alpha, dpix.data());
    for (Index i = 0; i < x.numel(); ++i) (*grad)[i] += dpix[i];
  }
  return l;
}

template <class T>
StylizationResult<T> stylize(VggExtractor<T>& vgg, const StylizationProblem<T>& problem) {
  StyleObjective<T> objective(vgg, problem);
  StylizationResult<T> r;
  Tensor<T> x = problem.content;
  Tensor<T> grad;
  r.initial = objective.evaluate(x, &grad);
  if (!finite(r.initial)) throw DivergenceError("stylization: non-finite loss at the starting image");
  r.image = x;
  r.final_losses = r.initial;
  if (r.initial.content > problem.content_budget) {
    r.stop_reason = StopReason::content_budget;
    return r;
  }

  nn::Adam<T> adam(problem.step_size);
  double best_style = r.initial.style;
  int stall = 0;
  r.stop_reason = StopReason::max_iters;
  for (int it = 0; it < problem.max_iters; ++it) {
    Tensor<T> next = r.image;
    adam.step(next, grad);
    for (auto& v : next.span()) v = std::clamp(v, T(0), T(1));
    Tensor<T> next_grad;
    const LossTerms l = objective.evaluate(next, &next_grad);
    if (!finite(l)) {
      std::string tail;
      for (std::size_t k = r.trace.size() > 5 ? r.trace.size() - 5 : 0; k < r.trace.size(); ++k) {
        tail += " (" + std::to_string(r.trace[k].content) + ", " + std::to_string(r.trace[k].style) + ")";
      }
      throw DivergenceError("stylization diverged at iteration " + std::to_string(it + 1) +
                            "; last (content, style) losses:" + (tail.empty() ? " none" : tail));
    }
    if (l.content > problem.content_budget) {
      r.stop_reason = StopReason::content_budget;
      break;
    }
    r.trace.push_back(l);
    r.image = std::move(next);
    r.final_losses = l;
    grad = std::move(next_grad);
    if (l.style < best_style * (1.0 - problem.plateau_tolerance)) {
      best_style = l.style;
      stall = 0;
    } else if (++stall >= problem.patience) {
      r.stop_reason = StopReason::style_plateau;
      break;
    }
  }
  return r;
}

template <class T>
double gradient_check(VggExtractor<T>& vgg, const StylizationProblem<T>& problem, const Tensor<T>& point,
                      double epsilon_fd, int coords, std::uint64_t seed) {
  if (!(epsilon_fd > 0.0)) throw ValidationError("finite-difference step must be positive");
  if (coords < 1) throw ValidationError("gradient check needs at least one coordinate");
  StyleObjective<T> objective(vgg, problem);
  Tensor<T> grad;
  objective.evaluate(point, &grad);
  Rng rng(seed);
  std::vector<Index> idx(static_cast<std::size_t>(point.numel()));
  for (Index i = 0; i < point.numel(); ++i) idx[static_cast<std::size_t>(i)] = i;
  shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(idx.size(), static_cast<std::size_t>(coords)));

  std::vector<double> analytic, numeric;
  for (Index i : idx) {
    Tensor<T> xp = point, xm = point;
    xp[i] += static_cast<T>(epsilon_fd);
    xm[i] -= static_cast<T>(epsilon_fd);
    const double fp = objective.evaluate(xp, nullptr).total;
    const double fm = objective.evaluate(xm, nullptr).total;
    numeric.push_back((fp - fm) / (2.0 * epsilon_fd));
    analytic.push_back(grad[i]);
  }
  double scale = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) scale = std::max({scale, std::abs(analytic[k]), std::abs(numeric[k])});
  const double floor = std::max(1e-12, 1e-6 * scale);
  double worst = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric[k]), floor});
    worst = std::max(worst, std::abs(analytic[k] - numeric[k]) / denom);
  }
  return worst;
}

template <class T>
Tensor<T> noise_image(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t(shape);
  for (auto& v : t.span()) v = static_cast<T>(uniform01(rng));
  return t;
}

template <class T>
double content_budget_for(VggExtractor<T>& vgg, const Tensor<T>& content, ContentMode mode, double scale,
                          std::uint64_t seed) {
  if (!(scale > 0.0)) throw ValidationError("content budget scale must be positive");
  return scale * content_loss(vgg, noise_image<T>(content.shape(), seed), content, mode);
}

#define STYLEADV_ENGINE(T)                                                                             \
  template double l2_distance(const Tensor<T>&, const Tensor<T>&);                                     \
  template double content_loss(VggExtractor<T>&, const Tensor<T>&, const Tensor<T>&, ContentMode);     \
  template double style_loss(const FeatureStats<T>&, const FeatureStats<T>&);                          \
  template struct StylizationProblem<T>;                                                               \
  template io::Json problem_scalars(const StylizationProblem<T>&);                                     \
  template class StyleObjective<T>;                                                                    \
  template StylizationResult<T> stylize(VggExtractor<T>&, const StylizationProblem<T>&);               \
  template double gradient_check(VggExtractor<T>&, const StylizationProblem<T>&, const Tensor<T>&,     \
                                 double, int, std::uint64_t);                                          \
  template Tensor<T> noise_image(const Shape&, std::uint64_t);                                         \
  template double content_budget_for(VggExtractor<T>&, const Tensor<T>&, ContentMode, double, std::uint64_t);
STYLEADV_ENGINE(float)
STYLEADV_ENGINE(double)
#undef STYLEADV_ENGINE

}  // namespace styleadv
