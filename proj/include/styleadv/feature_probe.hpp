#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "styleadv/dataset.hpp"
#include "styleadv/model_zoo.hpp"
#include "styleadv/training.hpp"

namespace styleadv {

/// An image that the robust-feature model and the non-robust-feature model
/// assign to different classes.
struct DisagreementExample {
  Tensor<float> image;
  std::uint64_t source_id = 0;
  int r_label = 0;
  int nr_label = 0;
  double perturbation_norm = 0.0;  // L-infinity distance to the source image
};

struct MiningConfig {
  double epsilon = 8.0 / 255.0;
  int steps = 20;
  double step_size = 2.0 / 255.0;
  int r_target = 8;   // ship
  int nr_target = 0;  // airplane
  Index want = 200;
  Index batch_size = 64;
};

io::Json to_json(const MiningConfig& c);

struct MiningResult {
  std::vector<DisagreementExample> examples;
  Index want = 0;
  Index attempted = 0;  // seed images tried
  bool shortfall = false;
};

/// Searches for images judged r_target by `r_model` and nr_target by
/// `nr_model`. Clean seed images of class r_target are pushed toward
/// nr_target under the NR model with sign-gradient steps inside the
/// epsilon ball; a step that would move the R model off r_target is undone
/// and that image stops. Seed images are visited in a seeded order until
/// `want` examples are found or the class runs out, in which case the
/// shortfall flag is set.
MiningResult mine_disagreements(Classifier& r_model, Classifier& nr_model, const Dataset& seed_ds,
                                const MiningConfig& cfg, std::uint64_t seed);

/// Stacked images of a probe set (N x 3 x 32 x 32).
Tensor<float> probe_images(const std::vector<DisagreementExample>& probe);

/// Per-model class counts over a probe set.
struct JudgmentTable {
  std::vector<std::string> models;
  std::vector<std::array<Index, kNumClasses>> counts;
  Index probe_size = 0;

  double fraction(std::size_t model, int cls) const;
};

/// Classifies every probe image with each model. Rows follow the model order.
JudgmentTable tabulate_judgments(const std::vector<DisagreementExample>& probe,
                                 const std::vector<Classifier*>& models);

io::Json to_json(const JudgmentTable& t);
std::string render_text(const JudgmentTable& t);

struct GeneralizationRow {
  std::string model;
  double clean_accuracy = 0.0;
  Index evaluated = 0;
  Index correct = 0;
  Index pgd_successes = 0;
  std::optional<double> pgd_success;  // null when no example was classified correctly
  bool zero_denominator = false;
};

/// Clean accuracy and untargeted PGD success per model. Success is measured
/// over the examples each model classifies correctly before the attack.
std::vector<GeneralizationRow> robustness_generalization_summary(const std::vector<Classifier*>& models,
                                                                 const Dataset& clean_ds, const PgdConfig& pgd,
                                                                 std::uint64_t seed);

io::Json to_json(const std::vector<GeneralizationRow>& rows);
std::string render_text(const std::vector<GeneralizationRow>& rows);

}  // namespace styleadv
