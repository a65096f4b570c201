#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "styleadv/dataset.hpp"
#include "styleadv/model_zoo.hpp"
#include "styleadv/transfer_engine.hpp"

namespace styleadv {

enum class ProbeMode { style_synthesis, raw_image };
enum class SelectionKind { random, random_from_target_class, confidence_weighted };

std::string to_string(ProbeMode m);
std::string to_string(SelectionKind k);
ProbeMode parse_probe_mode(std::string_view s);
SelectionKind parse_selection_kind(std::string_view s);

/// How style sources are chosen. Weights apply to confidence_weighted only
/// and are normalized to sum to one on use.
struct SelectionStrategy {
  SelectionKind kind = SelectionKind::confidence_weighted;
  double w_r = 0.5;
  double w_nr = 0.5;
  ProbeMode probe_mode = ProbeMode::style_synthesis;
  Index pool_size = 200;  // target-class candidates scored per selection

  void validate() const;
};

io::Json to_json(const SelectionStrategy& s);
SelectionStrategy strategy_from_json(const io::Json& j);

/// A candidate style image with its confidences under the robust-feature and
/// non-robust-feature models. Random strategies leave the confidences unset.
struct StyleSourceRecord {
  std::uint64_t id = 0;
  Index row = 0;  // row in the pool dataset
  int label = 0;
  int target = 0;
  ProbeMode probe_mode = ProbeMode::style_synthesis;
  std::optional<double> conf_r, conf_nr;
  double w_r = 0.5, w_nr = 0.5;
  std::optional<double> score;

  friend bool operator==(const StyleSourceRecord&, const StyleSourceRecord&) = default;
};

io::Json to_json(const StyleSourceRecord& r);
StyleSourceRecord style_record_from_json(const io::Json& j);

/// w_r * conf_r + w_nr * conf_nr after normalizing the weights. Throws
/// ValidationError on negative weights or a zero sum.
double selection_score(double conf_r, double conf_nr, double w_r, double w_nr);

/// Settings of the style-only reconstruction used to judge a style.
struct ProbeSettings {
  int max_iters = 300;
  double step_size = 0.05;
  int patience = 25;
};

io::Json to_json(const ProbeSettings& s);

/// Minimizes the style loss against `style_image` from seeded noise with zero
/// content weight: the output carries the style of the image and nothing of
/// its layout.
template <class T>
Tensor<T> synthesize_style_probe(VggExtractor<T>& vgg, const Tensor<T>& style_image, std::uint64_t seed,
                                 const ProbeSettings& settings = {});

/// Scores candidates by how strongly the R and NR models recognize their
/// style. Class probabilities are cached per candidate id, so rescoring under
/// other weights or targets is free. Not thread-safe.
class StyleScorer {
 public:
  /// `vgg` may be null when only raw_image probes are used.
  StyleScorer(Classifier& r_model, Classifier& nr_model, VggExtractor<float>* vgg, ProbeSettings settings = {},
               std::uint64_t seed = 0);

  struct Confidences {
    ProbabilityVector r;
    ProbabilityVector nr;
  };

  /// Class probabilities of the probe image of pool row `row`.
  const Confidences& confidences(const Dataset& pool, Index row, ProbeMode mode);

  /// Probes for several rows at once (parallel over candidates).
  void prefetch(const Dataset& pool, const std::vector<Index>& rows, ProbeMode mode);

  StyleSourceRecord score(const Dataset& pool, Index row, int target, double w_r, double w_nr, ProbeMode mode);

  const ProbeSettings& settings() const { return settings_; }
  std::uint64_t seed() const { return seed_; }

 private:
  Tensor<float> probe_image(VggExtractor<float>& vgg, const Dataset& pool, Index row, ProbeMode mode) const;

  Classifier& r_model_;
  Classifier& nr_model_;
  VggExtractor<float>* vgg_;
  ProbeSettings settings_;
  std::uint64_t seed_;
  std::map<std::pair<std::uint64_t, int>, Confidences> cache_;
};

/// Record for one candidate (see StyleScorer::score).
StyleSourceRecord score_style_candidate(StyleScorer& scorer, const Dataset& pool, Index row, int target,
                                        double w_r, double w_nr, ProbeMode mode);

/// Sorts by score descending, then id ascending.
void rank_records(std::vector<StyleSourceRecord>& records);

/// Recomputes scores under new weights (confidences unchanged) and reranks.
std::vector<StyleSourceRecord> reweight(std::vector<StyleSourceRecord> records, double w_r, double w_nr);

/// Candidate rows for confidence-weighted selection: up to pool_size rows of
/// the target class, chosen by a seeded shuffle and kept in pool order.
std::vector<Index> candidate_rows(const Dataset& pool, int target, Index pool_size, std::uint64_t seed);

/// k style sources for `target`. Random strategies draw without replacement
/// (from the whole pool, or from the target class). confidence_weighted scores
/// the candidate rows and returns the top k. `scorer` is required for
/// confidence_weighted only.
std::vector<StyleSourceRecord> select_style_sources(const Dataset& pool, int target,
                                                    const SelectionStrategy& strategy, Index k, std::uint64_t seed,
                                                    StyleScorer* scorer);

/// Replayable selection manifest.
struct SelectionManifest {
  SelectionStrategy strategy;
  int target = 0;
  Index k = 1;
  std::uint64_t seed = 0;
  std::string pool_fingerprint;
  std::vector<StyleSourceRecord> records;
};

io::Json to_json(const SelectionManifest& m);
SelectionManifest selection_manifest_from_json(const io::Json& j);

}  // namespace styleadv
