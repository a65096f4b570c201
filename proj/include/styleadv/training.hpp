#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "styleadv/dataset.hpp"
#include "styleadv/model_zoo.hpp"

namespace styleadv {

/// L-infinity projected gradient descent settings.
struct PgdConfig {
  double epsilon = 8.0 / 255.0;
  int steps = 20;
  double step_size = 2.0 / 255.0;
  bool random_start = true;
};

io::Json to_json(const PgdConfig& c);

/// Runs PGD on a batch. Untargeted steps ascend the cross-entropy of `labels`;
/// targeted steps descend the cross-entropy of `labels` (the targets). Every
/// output stays within epsilon of `x` and inside [0,1]. `seeds` holds one
/// random-start seed per image.
Tensor<float> pgd_perturb(Classifier& model, const Tensor<float>& x, const std::vector<int>& labels,
                          const PgdConfig& cfg, bool targeted, const std::vector<std::uint64_t>& seeds);

struct TrainConfig {
  int epochs = 20;
  Index batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Epochs at which the learning rate is multiplied by lr_gamma. Empty means
  /// {epochs/2, 3*epochs/4}.
  std::vector<int> milestones;
  double lr_gamma = 0.1;
  bool augment = true;  // random 4-pixel-padded crop and horizontal flip
  std::uint64_t seed = 0;
};

io::Json to_json(const TrainConfig& c);

/// Optional post-training evaluation recorded in the classifier metadata.
struct EvalOptions {
  const Dataset* test = nullptr;
  std::optional<PgdConfig> robust_probe;
  Index robust_probe_size = 200;
};

/// Interpolation coefficient lambda ~ Beta(alpha, beta), or fixed.
struct MixConfig {
  double alpha = 1.0;
  double beta = 1.0;
  std::optional<double> fixed_lambda;
};

struct MixedBatch {
  Tensor<float> images;
  Tensor<float> targets;  // N x 10 soft labels
};

/// Mixup of each row i with row partner[i]: lambda * x_i + (1 - lambda) * x_j,
/// with targets lambda * onehot(y_i) + (1 - lambda) * onehot(y_j).
MixedBatch interpolate_batch(const Tensor<float>& x, const std::vector<int>& labels, double lambda,
                             const std::vector<Index>& partner);

/// Standard cross-entropy training with SGD + momentum and a step schedule.
/// Throws DivergenceError if the loss becomes non-finite. Zero epochs leave
/// the model untouched.
Classifier& train_standard(Classifier& model, const Dataset& train, const TrainConfig& cfg,
                           const EvalOptions& eval = {});

/// Madry-style adversarial training on PGD examples generated in eval mode.
Classifier& train_pgd_adversarial(Classifier& model, const Dataset& train, const PgdConfig& attack,
                                  const TrainConfig& cfg, const EvalOptions& eval = {});

/// Interpolated adversarial training: the loss averages mixup on the clean
/// batch and mixup on its PGD counterpart, sharing lambda and the pairing.
Classifier& train_interpolated_adversarial(Classifier& model, const Dataset& train, const PgdConfig& attack,
                                           const MixConfig& mix, const TrainConfig& cfg,
                                           const EvalOptions& eval = {});

/// Accuracy of `model` on PGD examples of `ds` (untargeted, true labels).
double robust_accuracy(Classifier& model, const Dataset& ds, const PgdConfig& cfg, std::uint64_t seed);

/// Applies the training augmentation to a batch in place.
void augment_batch(Tensor<float>& x, Rng& rng);

}  // namespace styleadv
