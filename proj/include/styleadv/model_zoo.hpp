#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "styleadv/dataset.hpp"
#include "styleadv/io.hpp"
#include "styleadv/nn/architectures.hpp"

namespace styleadv {

enum class Regime { standard, pgd_at, iat };

std::string to_string(Regime r);
Regime parse_regime(std::string_view s);

/// Class probabilities for one image.
using ProbabilityVector = std::array<double, kNumClasses>;

/// Index of the largest probability; ties go to the lowest class index.
int argmax(const ProbabilityVector& p);

struct ClassifierInfo {
  std::string name;  // zoo code, e.g. "RNB"
  nn::ArchConfig arch;
  Regime regime = Regime::standard;
  DatasetKind train_set = DatasetKind::cifar10;
  std::uint64_t seed = 0;
  int epochs = 0;
  std::optional<double> clean_accuracy;
  std::optional<double> robust_accuracy;  // accuracy under the recorded PGD probe
  io::Json training = io::Json::object();  // hyperparameters, curve, warnings
};

io::Json to_json(const ClassifierInfo& info);
ClassifierInfo classifier_info_from_json(const io::Json& j);

/// A CIFAR-10 classifier: architecture, weights and metadata.
///
/// Layers cache activations between forward and backward passes, so a
/// Classifier must not be used from several threads at once; copy it (deep)
/// for concurrent inference. Inference always runs in eval mode, which makes
/// every output row depend on its own input image only.
class Classifier {
 public:
  /// Builds the architecture and initializes parameters from info.seed.
  explicit Classifier(ClassifierInfo info);

  const ClassifierInfo& info() const { return info_; }
  ClassifierInfo& info() { return info_; }
  nn::Sequential<float>& network() { return net_; }

  /// Logits for an N x 3 x 32 x 32 batch or one 3 x 32 x 32 image.
  Tensor<float> logits(const Tensor<float>& x);
  std::vector<ProbabilityVector> classify(const Tensor<float>& x);
  std::vector<int> predict(const Tensor<float>& x);

  /// Penultimate (pre-logit) activations, N x F.
  Tensor<float> representation(const Tensor<float>& x);

  /// d(loss)/dx where `dlogits` maps logits to d(loss)/d(logits).
  Tensor<float> input_gradient(const Tensor<float>& x,
                               const std::function<Tensor<float>(const Tensor<float>&)>& dlogits);

  /// d(loss)/dx where `drep` maps the representation to d(loss)/d(representation).
  Tensor<float> representation_gradient(const Tensor<float>& x,
                                        const std::function<Tensor<float>(const Tensor<float>&)>& drep);

  /// SHA-256 over architecture and current weights.
  std::string fingerprint();

 private:
  ClassifierInfo info_;
  nn::Sequential<float> net_;
};

/// Fraction of examples whose argmax prediction equals the label.
double evaluate_accuracy(Classifier& model, const Dataset& ds, Index batch_size = 256);

/// Runs `fn(begin, end)` over [0, n) in contiguous batches.
void for_each_batch(Index n, Index batch_size, const std::function<void(Index, Index)>& fn);

// ---------------------------------------------------------------------------
// Checkpoints: <path> is the weight blob, <path>.json the metadata sidecar.

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

void save_checkpoint(Classifier& model, const std::filesystem::path& path);
Classifier load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Zoo layout

struct ZooEntry {
  std::string name;
  nn::Arch arch;
  Regime regime;
  DatasetKind train_set;
};

/// The twelve architecture x training-set models plus the two
/// adversarially trained ResNet18 defenses (PGDAT, IAT).
const std::vector<ZooEntry>& zoo_entries();
const ZooEntry& zoo_entry(std::string_view name);

}  // namespace styleadv
