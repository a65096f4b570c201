#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "styleadv/dataset.hpp"
#include "styleadv/model_zoo.hpp"

namespace styleadv {

/// Where each robust-distillation image starts.
enum class RobustInit {
  other_image,  // a different, seeded-uniformly drawn image of the base set
  noise,        // seeded uniform noise
  self,         // the source image itself (a fixed point; used for checks)
};

std::string to_string(RobustInit i);
RobustInit parse_robust_init(std::string_view s);

struct RobustConfig {
  int steps = 1000;
  double step_size = 0.1;  // L2 length of each normalized gradient step
  RobustInit init = RobustInit::other_image;
  Index batch_size = 64;
};

/// Distills robust features: each output starts from an initialization image
/// and takes normalized gradient steps on ||rep(x) - rep(source)||_2, where
/// rep is the penultimate layer of `robust_model`. The iterate with the lowest
/// distance is kept. Labels and ids are those of the sources.
///
/// A standard-regime model is accepted but a warning is recorded in the
/// provenance, since its representation is not robust.
Dataset construct_robust_dataset(const Dataset& base, Classifier& robust_model, const RobustConfig& cfg,
                                 std::uint64_t seed);

/// Target class rule for the non-robust construction.
enum class TargetRule {
  rotate,   // t = (y + 1) mod 10
  uniform,  // seeded uniform over the ten classes
};

std::string to_string(TargetRule r);
TargetRule parse_target_rule(std::string_view s);

struct NonRobustConfig {
  double epsilon = 0.5;  // L-infinity radius in [0,1] pixel units
  int steps = 100;
  double step_size = 0.1;
  TargetRule rule = TargetRule::rotate;
  /// Per-example targets overriding `rule` (same order as the base set).
  std::optional<std::vector<int>> targets;
  Index batch_size = 64;
};

/// Target classes for every example of `base` under the configured rule.
std::vector<int> nonrobust_targets(const Dataset& base, const NonRobustConfig& cfg, std::uint64_t seed);

/// Relabels adversarially: each example is pushed by targeted PGD under
/// `standard_model` toward its target class and labeled with that target.
/// Examples the attack fails to move into the target class are dropped; their
/// count and ids are recorded in the provenance. Refuses epsilon <= 0.
Dataset construct_nonrobust_dataset(const Dataset& base, Classifier& standard_model, const NonRobustConfig& cfg,
                                    std::uint64_t seed);

/// ||rep(a_i) - rep(b_i)||_2 for every row.
std::vector<double> representation_distances(Classifier& model, const Tensor<float>& a, const Tensor<float>& b);

/// Imports an externally published robust or non-robust set stored as NumPy
/// arrays: images (N x 3 x 32 x 32 float32 in [0,1], or N x 32 x 32 x 3 uint8)
/// and labels (N integers).
Dataset import_feature_dataset(DatasetKind kind, Split split, const std::filesystem::path& images_npy,
                               const std::filesystem::path& labels_npy);

}  // namespace styleadv
