#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "styleadv/dataset.hpp"
#include "styleadv/model_zoo.hpp"
#include "styleadv/style_selector.hpp"
#include "styleadv/training.hpp"
#include "styleadv/transfer_engine.hpp"

namespace styleadv {

inline constexpr int kReportSchemaVersion = 1;

/// Outcome of attacking one example.
///
/// Untargeted: the example counts (`eligible`) when the model was right before
/// the attack, and succeeds when it is wrong afterwards. Targeted: examples of
/// the target class are never attacked; success means landing on the target.
struct AttackRecord {
  std::uint64_t id = 0;
  int true_label = 0;
  int pred_before = 0;
  int pred_after = 0;
  std::optional<int> target;
  std::optional<std::uint64_t> style_source_id;
  std::optional<int> style_label;  // class of the style source
  bool eligible = false;
  bool success = false;
  bool failed = false;  // stylization raised; never counted as a success
  std::string failure;
  std::optional<double> content_loss, style_loss;
  int iterations = 0;
  int attempts = 0;
  std::optional<std::string> stop_reason;
  double perturbation_linf = 0.0;
  std::string digest;  // sha256 of the adversarial image bytes

  friend bool operator==(const AttackRecord&, const AttackRecord&) = default;
};

io::Json to_json(const AttackRecord& r);
AttackRecord attack_record_from_json(const io::Json& j);

/// Recomputes eligibility and success from the predictions.
bool record_is_consistent(const AttackRecord& r);

struct AttackSummary {
  Index evaluated = 0;    // records
  Index clean_correct = 0;
  Index denominator = 0;  // eligible records
  Index successes = 0;
  Index failures = 0;
  std::optional<double> success_rate;  // null when the denominator is zero
  std::array<Index, kNumClasses> class_denominator{};  // by true label
  std::array<Index, kNumClasses> class_successes{};

  double clean_accuracy() const;
  friend bool operator==(const AttackSummary&, const AttackSummary&) = default;
};

AttackSummary summarize(const std::vector<AttackRecord>& records);
io::Json to_json(const AttackSummary& s);
AttackSummary attack_summary_from_json(const io::Json& j);

/// One attack against one model, with whatever parameters distinguish it
/// within a report (style weight, R:NR ratio, generator model, ...).
struct AttackRun {
  std::string model;
  std::string attack;  // "pgd", "style", or "clean" (no perturbation)
  std::optional<int> target;
  io::Json params = io::Json::object();
  AttackSummary summary;
  std::vector<AttackRecord> records;
  Tensor<float> adversarial;  // aligned with records; not part of the JSON
};

AttackRun make_run(std::string model, std::string attack, std::optional<int> target, io::Json params,
                   std::vector<AttackRecord> records, Tensor<float> adversarial = {});

struct EvalReport {
  int schema_version = kReportSchemaVersion;
  std::string kind;  // untargeted, targeted, weight_sweep, ratio_sweep, defense, transfer
  io::Json config = io::Json::object();
  std::string config_fingerprint;
  std::vector<AttackRun> runs;
};

/// Sets config and its fingerprint.
void set_config(EvalReport& report, io::Json config);

/// Report JSON. With `records_inline` false each run references
/// records/<run-key>.jsonl instead of embedding its records.
io::Json to_json(const EvalReport& r, bool records_inline = true);
EvalReport eval_report_from_json(const io::Json& j);

/// File-safe key of a run, unique within a report.
std::string run_key(const AttackRun& run, std::size_t index);

/// Writes <run_dir>/reports/<name>.json with each run's records in
/// <run_dir>/records/<name>/<run-key>.jsonl.
void write_report(const EvalReport& r, const std::filesystem::path& run_dir, const std::string& name);

/// Reads a report written by write_report, records included.
EvalReport read_report(const std::filesystem::path& run_dir, const std::string& name);

/// Throws FormatError when a stored aggregate differs from the recomputation
/// from its records, or a record contradicts the success definitions.
void verify_report(const EvalReport& r);

// ---------------------------------------------------------------------------
// Attacks

/// L-infinity PGD from the evaluation set, one record per attacked example.
/// Untargeted when `target` is empty; targeted runs skip the target class.
/// epsilon zero is allowed and leaves every image unchanged.
std::vector<AttackRecord> pgd_attack(Classifier& model, const Dataset& ds, const PgdConfig& cfg,
                                     std::optional<int> target, std::uint64_t seed,
                                     Tensor<float>* adversarial = nullptr);

/// Style-transfer settings of an attack.
struct EngineConfig {
  double alpha = 1.0;
  double beta = 8e4;
  ContentMode content_mode = ContentMode::feature_r22;
  double budget_scale = 0.5;  // C_max as a fraction of the noise-image content loss
  int max_iters = 300;
  double step_size = 0.05;
  int patience = 25;
  double plateau_tolerance = 1e-4;
  std::vector<StyleLayer> style_layers = all_style_layers();

  void validate() const;
};

io::Json to_json(const EngineConfig& c);
EngineConfig engine_config_from_json(const io::Json& j);

struct StyleAttackConfig {
  SelectionStrategy selection;
  EngineConfig engine;
  int attempts = 3;  // target classes (untargeted) or style sources (targeted) tried per image

  void validate() const;
};

io::Json to_json(const StyleAttackConfig& c);
StyleAttackConfig style_attack_config_from_json(const io::Json& j);

/// What style attacks draw on: the feature extractor, the pool of candidate
/// style images, and (for confidence-weighted selection) the scorer.
struct StyleResources {
  VggExtractor<float>* vgg = nullptr;
  const Dataset* pool = nullptr;
  StyleScorer* scorer = nullptr;
};

/// Generates style-transfer adversarial examples against one model at a time.
/// The model is only queried for hard labels: for each image, attempts are
/// made with the next candidate style until the model is fooled or attempts
/// run out. Stylizations are cached by (image, style source, engine config),
/// so identical selections across runs cost nothing. Outputs are quantized to
/// 8 bits.
class StyleAttacker {
 public:
  StyleAttacker(StyleResources res, StyleAttackConfig cfg, std::uint64_t seed);

  /// Untargeted when `target` is empty.
  std::vector<AttackRecord> attack(Classifier& model, const Dataset& ds, std::optional<int> target,
                                   Tensor<float>* adversarial = nullptr);

  /// Style sources ranked for `cls` under the current strategy (cached).
  const std::vector<StyleSourceRecord>& ranked_sources(int cls);

  const StyleAttackConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  void set_config(StyleAttackConfig cfg);
  std::size_t cache_size() const { return cache_.size(); }

 private:
  struct Candidate {
    std::uint64_t source_id = 0;
    Index source_row = 0;
    int style_label = 0;
  };
  struct Stylized {
    Tensor<float> image;
    double content = 0.0, style = 0.0;
    int iterations = 0;
    std::string stop_reason;
    std::string error;
  };

  std::vector<Candidate> candidates(std::uint64_t id, int label, std::optional<int> target);
  Stylized run_engine(VggExtractor<float>& vgg, const Tensor<float>& content, std::uint64_t id,
                      const Candidate& c) const;

  StyleResources res_;
  StyleAttackConfig cfg_;
  std::uint64_t seed_;
  std::string engine_key_;
  std::map<int, std::vector<StyleSourceRecord>> ranked_;
  std::map<std::string, Stylized> cache_;
};

/// Untargeted style attack on every model.
EvalReport run_untargeted_style_attack(const std::vector<Classifier*>& models, const Dataset& ds,
                                       StyleAttacker& attacker);

/// Targeted style attack on every model for each target class.
EvalReport run_targeted_style_attack(const std::vector<Classifier*>& models, const Dataset& ds,
                                     const std::vector<int>& targets, StyleAttacker& attacker);

/// Untargeted success per style weight (ascending, positive).
EvalReport sweep_style_weight(Classifier& model, const Dataset& ds, const std::vector<double>& weights,
                              StyleAttacker& attacker);

/// Targeted success per (target, model, w_NR:w_R ratio). The selected style
/// sources of every ratio are recorded in the run parameters.
EvalReport sweep_rnr_proportion(const std::vector<Classifier*>& models, const Dataset& ds,
                                const std::vector<std::pair<double, double>>& nr_r_ratios,
                                const std::vector<int>& targets, StyleAttacker& attacker);

/// PGD and/or style success on each defense model. An empty attack list
/// yields clean accuracy only.
EvalReport run_defense_eval(const std::vector<Classifier*>& defenses, const Dataset& ds,
                            const std::vector<std::string>& attacks, const PgdConfig& pgd,
                            StyleAttacker& attacker, std::uint64_t seed);

/// Adversarial examples are generated once per generator and classified by
/// every victim. Runs are keyed by the victim model with the generator in
/// their parameters.
EvalReport transferability_matrix(const std::vector<Classifier*>& generators,
                                  const std::vector<Classifier*>& victims, const Dataset& ds,
                                  StyleAttacker& attacker);

/// Success rate of the first run on `model` with `attack` whose params
/// contain every entry of `params`.
std::optional<double> find_rate(const EvalReport& r, const std::string& model, const std::string& attack,
                                const io::Json& params = io::Json::object());

// ---------------------------------------------------------------------------
// Grids

inline constexpr int kGridGap = 2;

/// Writes an 8-bit RGB PNG: the clean strip on top, then one row per target
/// class, columns aligned by source example, separated by white gaps.
/// Throws ValidationError when a row length differs from the clean strip.
void render_adversarial_grid(const std::vector<Tensor<float>>& clean,
                             const std::vector<std::vector<Tensor<float>>>& rows,
                             const std::filesystem::path& path);

/// Reads a grid back into cells (row 0 is the clean strip).
std::vector<std::vector<Tensor<float>>> decode_grid(const std::filesystem::path& path, int cell = 32);

/// Rounds every pixel to the nearest multiple of 1/255.
Tensor<float> quantize8(const Tensor<float>& x);

}  // namespace styleadv
