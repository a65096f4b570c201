#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "styleadv/feature_extractor.hpp"
#include "styleadv/io.hpp"

namespace styleadv {

/// Where content is compared: VGG19 relu2_2 activations, or raw pixels.
enum class ContentMode { feature_r22, pixel };
enum class StopReason { content_budget, style_plateau, max_iters };

std::string to_string(ContentMode m);
std::string to_string(StopReason r);
ContentMode parse_content_mode(std::string_view s);
StopReason parse_stop_reason(std::string_view s);

/// L2 norm of the difference between two equally shaped tensors.
template <class T>
double l2_distance(const Tensor<T>& a, const Tensor<T>& b);

/// ||I_gen - I_C||_2 in pixel space, or between their R22 maps.
template <class T>
double content_loss(VggExtractor<T>& vgg, const Tensor<T>& gen, const Tensor<T>& content, ContentMode mode);

/// Sum over layers of ||mu_gen - mu_style||_2 + ||sigma_gen - sigma_style||_2.
/// Throws ValidationError if the layer sets or channel counts differ.
template <class T>
double style_loss(const FeatureStats<T>& gen, const FeatureStats<T>& style);

inline double total_loss(double content, double style, double alpha, double beta) {
  return alpha * content + beta * style;
}

template <class T>
struct StylizationProblem {
  Tensor<T> content;  // I_C, 3 x H x W in [0,1]
  Tensor<T> style;    // I_S, 3 x H' x W' in [0,1]
  double alpha = 1.0;  // content weight
  double beta = 1.0;   // style weight
  std::vector<StyleLayer> style_layers = all_style_layers();
  ContentMode content_mode = ContentMode::feature_r22;
  double content_budget = std::numeric_limits<double>::infinity();  // C_max
  int patience = 25;
  double plateau_tolerance = 1e-4;
  int max_iters = 300;
  double step_size = 0.05;
  std::uint64_t seed = 0;

  /// Throws ValidationError on a violated invariant.
  void validate() const;
};

template <class T>
io::Json problem_scalars(const StylizationProblem<T>& p);

struct LossTerms {
  double content = 0.0;
  double style = 0.0;
  double total = 0.0;
};

template <class T>
struct StylizationResult {
  Tensor<T> image;              // I*
  std::vector<LossTerms> trace;  // losses after each accepted step
  LossTerms initial;             // losses at I* = I_C
  LossTerms final_losses;        // losses of `image`
  StopReason stop_reason = StopReason::max_iters;
};

/// The weighted objective alpha*L_C + beta*L_S with its pixel gradient. Style
/// statistics of I_S and the content target are computed once.
template <class T>
class StyleObjective {
 public:
  StyleObjective(VggExtractor<T>& vgg, const StylizationProblem<T>& problem);

  /// Losses at x; writes d(total)/dx into *grad when non-null.
  LossTerms evaluate(const Tensor<T>& x, Tensor<T>* grad);

  const FeatureStats<T>& style_stats() const { return style_stats_; }

 private:
  VggExtractor<T>& vgg_;
  const StylizationProblem<T>& p_;
  FeatureStats<T> style_stats_;
  Tensor<T> content_target_;
};

/// Adam on pixels from I* = I_C, clamped to [0,1] after each step. Stops when
/// the content loss would exceed C_max (returning the last iterate within
/// budget), when the style loss has not improved by the relative tolerance
/// for `patience` steps, or after max_iters. Throws DivergenceError on a
/// non-finite loss.
template <class T>
StylizationResult<T> stylize(VggExtractor<T>& vgg, const StylizationProblem<T>& problem);

/// Largest relative error between the analytic gradient of the objective at
/// `point` and central finite differences over `coords` sampled pixels.
template <class T>
double gradient_check(VggExtractor<T>& vgg, const StylizationProblem<T>& problem, const Tensor<T>& point,
                      double epsilon_fd, int coords = 64, std::uint64_t seed = 0);

/// Seeded uniform noise image, used as the start of style-only synthesis and
/// as the content-free reference for the content budget.
template <class T>
Tensor<T> noise_image(const Shape& shape, std::uint64_t seed);

/// C_max = scale * content_loss(noise, I_C): the budget is a fraction of the
/// content distance of an image sharing nothing with I_C.
template <class T>
double content_budget_for(VggExtractor<T>& vgg, const Tensor<T>& content, ContentMode mode, double scale,
                          std::uint64_t seed);

}  // namespace styleadv
