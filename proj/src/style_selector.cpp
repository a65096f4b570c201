#include "styleadv/style_selector.hpp"

#include <algorithm>
#include <cmath>

#include "styleadv/runtime.hpp"

namespace styleadv {

std::string to_string(ProbeMode m) { return m == ProbeMode::raw_image ? "raw_image" : "style_synthesis"; }

std::string to_string(SelectionKind k) {
  switch (k) {
    case SelectionKind::random: return "random";
    case SelectionKind::random_from_target_class: return "random_from_target_class";
    case SelectionKind::confidence_weighted: return "confidence_weighted";
  }
  return "?";
}

ProbeMode parse_probe_mode(std::string_view s) {
  if (s == "style_synthesis") return ProbeMode::style_synthesis;
  if (s == "raw_image") return ProbeMode::raw_image;
  throw ValidationError("unknown probe mode '" + std::string(s) + "' (style_synthesis, raw_image)");
}

SelectionKind parse_selection_kind(std::string_view s) {
  for (auto k : {SelectionKind::random, SelectionKind::random_from_target_class, SelectionKind::confidence_weighted}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown selection strategy '" + std::string(s) +
                        "' (random, random_from_target_class, confidence_weighted)");
}

void SelectionStrategy::validate() const {
  if (kind == SelectionKind::confidence_weighted) {
    selection_score(0.0, 0.0, w_r, w_nr);
    if (pool_size < 1) throw ValidationError("selection pool_size must be positive");
  }
}

io::Json to_json(const SelectionStrategy& s) {
  return {{"kind", to_string(s.kind)},
          {"w_r", s.w_r},
          {"w_nr", s.w_nr},
          {"probe_mode", to_string(s.probe_mode)},
          {"pool_size", s.pool_size}};
}

SelectionStrategy strategy_from_json(const io::Json& j) {
  SelectionStrategy s;
  s.kind = parse_selection_kind(j.at("kind").get<std::string>());
  s.w_r = j.at("w_r").get<double>();
  s.w_nr = j.at("w_nr").get<double>();
  s.probe_mode = parse_probe_mode(j.at("probe_mode").get<std::string>());
  s.pool_size = j.at("pool_size").get<Index>();
  return s;
}

namespace {

io::Json opt(const std::optional<double>& v) { return v ? io::Json(*v) : io::Json(nullptr); }
std::optional<double> opt_from(const io::Json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::pair<double, double> normalized(double w_r, double w_nr) {
  if (!(w_r >= 0.0) || !(w_nr >= 0.0)) throw ValidationError("selection weights must be non-negative");
  const double sum = w_r + w_nr;
  if (!(sum > 0.0)) throw ValidationError("selection weights must not both be zero");
  return {w_r / sum, w_nr / sum};
}

}  // namespace

io::Json to_json(const StyleSourceRecord& r) {
  return {{"id", r.id},         {"row", r.row},           {"label", r.label},
          {"target", r.target}, {"probe_mode", to_string(r.probe_mode)},
          {"conf_r", opt(r.conf_r)}, {"conf_nr", opt(r.conf_nr)},
          {"w_r", r.w_r},       {"w_nr", r.w_nr},         {"score", opt(r.score)}};
}

StyleSourceRecord style_record_from_json(const io::Json& j) {
  StyleSourceRecord r;
  r.id = j.at("id").get<std::uint64_t>();
  r.row = j.at("row").get<Index>();
  r.label = j.at("label").get<int>();
  r.target = j.at("target").get<int>();
  r.probe_mode = parse_probe_mode(j.at("probe_mode").get<std::string>());
  r.conf_r = opt_from(j.at("conf_r"));
  r.conf_nr = opt_from(j.at("conf_nr"));
  r.w_r = j.at("w_r").get<double>();
  r.w_nr = j.at("w_nr").get<double>();
  r.score = opt_from(j.at("score"));
  return r;
}

double selection_score(double conf_r, double conf_nr, double w_r, double w_nr) {
  const auto [a, b] = normalized(w_r, w_nr);
  return a * conf_r + b * conf_nr;
}

io::Json to_json(const ProbeSettings& s) {
  return {{"max_iters", s.max_iters}, {"step_size", s.step_size}, {"patience", s.patience}};
}

template <class T>
Tensor<T> synthesize_style_probe(VggExtractor<T>& vgg, const Tensor<T>& style_image, std::uint64_t seed,
                                 const ProbeSettings& settings) {
  StylizationProblem<T> p;
  p.content = noise_image<T>(style_image.shape(), seed);
  p.style = style_image;
  p.alpha = 0.0;
  p.beta = 1.0;
  p.content_mode = ContentMode::pixel;
  p.max_iters = settings.max_iters;
  p.step_size = settings.step_size;
  p.patience = settings.patience;
  p.seed = seed;
  return stylize(vgg, p).image;
}

template Tensor<float> synthesize_style_probe(VggExtractor<float>&, const Tensor<float>&, std::uint64_t,
                                              const ProbeSettings&);
template Tensor<double> synthesize_style_probe(VggExtractor<double>&, const Tensor<double>&, std::uint64_t,
                                               const ProbeSettings&);

StyleScorer::StyleScorer(Classifier& r_model, Classifier& nr_model, VggExtractor<float>* vgg, ProbeSettings settings,
                         std::uint64_t seed)
    : r_model_(r_model), nr_model_(nr_model), vgg_(vgg), settings_(settings), seed_(seed) {}

Tensor<float> StyleScorer::probe_image(VggExtractor<float>& vgg, const Dataset& pool, Index row,
                                       ProbeMode mode) const {
  if (mode == ProbeMode::raw_image) return pool.image(row);
  return synthesize_style_probe(vgg, pool.image(row), derive_seed(seed_, pool.ids[static_cast<std::size_t>(row)]),
                                settings_);
}

void StyleScorer::prefetch(const Dataset& pool, const std::vector<Index>& rows, ProbeMode mode) {
  std::vector<Index> todo;
  for (Index r : rows) {
    if (r < 0 || r >= pool.size()) throw ValidationError("candidate row out of range");
    const auto key = std::pair{pool.ids[static_cast<std::size_t>(r)], static_cast<int>(mode)};
    if (!cache_.count(key) && std::find(todo.begin(), todo.end(), r) == todo.end()) todo.push_back(r);
  }
  if (todo.empty()) return;
  if (mode == ProbeMode::style_synthesis && !vgg_) {
    throw ValidationError("style_synthesis probes need a style feature extractor");
  }
  const Index n = static_cast<Index>(todo.size());
  Tensor<float> probes(Shape{n, kImageChannels, kImageSize, kImageSize});
  if (mode == ProbeMode::raw_image) {
    for (Index i = 0; i < n; ++i) probes.set_item(i, pool.image(todo[static_cast<std::size_t>(i)]));
  } else {
    const int threads = static_cast<int>(std::min<Index>(runtime::num_threads(), n));
    std::exception_ptr failure;
#pragma omp parallel num_threads(threads) if (threads > 1)
    {
      VggExtractor<float> local = *vgg_;
#pragma omp for schedule(dynamic, 1)
      for (Index i = 0; i < n; ++i) {
        try {
          probes.set_item(i, probe_image(local, pool, todo[static_cast<std::size_t>(i)], mode));
        } catch (...) {
#pragma omp critical
          if (!failure) failure = std::current_exception();
        }
      }
    }
    if (failure) std::rethrow_exception(failure);
  }
  const auto pr = r_model_.classify(probes);
  const auto pn = nr_model_.classify(probes);
  for (Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    cache_[{pool.ids[static_cast<std::size_t>(todo[k])], static_cast<int>(mode)}] = {pr[k], pn[k]};
  }
}

const StyleScorer::Confidences& StyleScorer::confidences(const Dataset& pool, Index row, ProbeMode mode) {
  prefetch(pool, {row}, mode);
  return cache_.at({pool.ids[static_cast<std::size_t>(row)], static_cast<int>(mode)});
}

StyleSourceRecord StyleScorer::score(const Dataset& pool, Index row, int target, double w_r, double w_nr,
                                     ProbeMode mode) {
  if (target < 0 || target >= kNumClasses) throw ValidationError("target class out of range");
  const auto [a, b] = normalized(w_r, w_nr);
  const auto& c = confidences(pool, row, mode);
  StyleSourceRecord rec;
  rec.id = pool.ids[static_cast<std::size_t>(row)];
  rec.row = row;
  rec.label = pool.labels[static_cast<std::size_t>(row)];
  rec.target = target;
  rec.probe_mode = mode;
  rec.conf_r = c.r[static_cast<std::size_t>(target)];
  rec.conf_nr = c.nr[static_cast<std::size_t>(target)];
  rec.w_r = a;
  rec.w_nr = b;
  rec.score = a * *rec.conf_r + b * *rec.conf_nr;
  return rec;
}

StyleSourceRecord score_style_candidate(StyleScorer& scorer, const Dataset& pool, Index row, int target,
                                        double w_r, double w_nr, ProbeMode mode) {
  return scorer.score(pool, row, target, w_r, w_nr, mode);
}

void rank_records(std::vector<StyleSourceRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const StyleSourceRecord& x, const StyleSourceRecord& y) {
    const double sx = x.score.value_or(-1.0), sy = y.score.value_or(-1.0);
    if (sx != sy) return sx > sy;
    return x.id < y.id;
  });
}

std::vector<StyleSourceRecord> reweight(std::vector<StyleSourceRecord> records, double w_r, double w_nr) {
  const auto [a, b] = normalized(w_r, w_nr);
  for (auto& r : records) {
    if (!r.conf_r || !r.conf_nr) throw ValidationError("cannot reweight an unscored record");
    r.w_r = a;
    r.w_nr = b;
    r.score = a * *r.conf_r + b * *r.conf_nr;
  }
  rank_records(records);
  return records;
}

std::vector<Index> candidate_rows(const Dataset& pool, int target, Index pool_size, std::uint64_t seed) {
  if (target < 0 || target >= kNumClasses) throw ValidationError("target class out of range");
  auto rows = pool.rows_by_class()[static_cast<std::size_t>(target)];
  if (static_cast<Index>(rows.size()) > pool_size) {
    Rng rng(derive_seed(derive_seed(seed, "style-pool"), static_cast<std::uint64_t>(target)));
    shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<std::size_t>(pool_size));
    std::sort(rows.begin(), rows.end());
  }
  return rows;
}

std::vector<StyleSourceRecord> select_style_sources(const Dataset& pool, int target,
                                                    const SelectionStrategy& strategy, Index k, std::uint64_t seed,
                                                    StyleScorer* scorer) {
  strategy.validate();
  if (k < 1) throw ValidationError("k must be at least 1");
  if (pool.empty()) throw ValidationError("style pool is empty");
  if (target < 0 || target >= kNumClasses) throw ValidationError("target class out of range");

  auto unscored = [&](Index row) {
    StyleSourceRecord r;
    r.id = pool.ids[static_cast<std::size_t>(row)];
    r.row = row;
    r.label = pool.labels[static_cast<std::size_t>(row)];
    r.target = target;
    r.probe_mode = strategy.probe_mode;
    r.w_r = strategy.w_r;
    r.w_nr = strategy.w_nr;
    return r;
  };
  auto draw = [&](std::vector<Index> rows) {
    if (static_cast<Index>(rows.size()) < k) {
      throw ValidationError("pool has " + std::to_string(rows.size()) + " eligible images, fewer than k = " +
                            std::to_string(k));
    }
    Rng rng(derive_seed(derive_seed(seed, "style-draw"), static_cast<std::uint64_t>(target)));
    shuffle(rows.begin(), rows.end(), rng);
    std::vector<StyleSourceRecord> out;
    for (Index i = 0; i < k; ++i) out.push_back(unscored(rows[static_cast<std::size_t>(i)]));
    return out;
  };

  const auto class_rows = pool.rows_by_class()[static_cast<std::size_t>(target)];
  switch (strategy.kind) {
    case SelectionKind::random: {
      std::vector<Index> all(static_cast<std::size_t>(pool.size()));
      for (Index i = 0; i < pool.size(); ++i) all[static_cast<std::size_t>(i)] = i;
      return draw(std::move(all));
    }
    case SelectionKind::random_from_target_class:
      if (class_rows.empty()) throw ValidationError("pool has no images of target class " + class_name(target));
      return draw(class_rows);
    case SelectionKind::confidence_weighted: {
      if (class_rows.empty()) throw ValidationError("pool has no images of target class " + class_name(target));
      if (!scorer) throw ValidationError("confidence_weighted selection needs the R and NR models");
      const auto rows = candidate_rows(pool, target, strategy.pool_size, seed);
      if (static_cast<Index>(rows.size()) < k) {
        throw ValidationError("pool has " + std::to_string(rows.size()) + " candidates of class " +
                              class_name(target) + ", fewer than k = " + std::to_string(k));
      }
      scorer->prefetch(pool, rows, strategy.probe_mode);
      std::vector<StyleSourceRecord> scored;
      for (Index r : rows) scored.push_back(scorer->score(pool, r, target, strategy.w_r, strategy.w_nr, strategy.probe_mode));
      rank_records(scored);
      scored.resize(static_cast<std::size_t>(k));
      return scored;
    }
  }
  return {};
}

io::Json to_json(const SelectionManifest& m) {
  io::Json records = io::Json::array();
  for (const auto& r : m.records) records.push_back(to_json(r));
  return {{"strategy", to_json(m.strategy)},
          {"target", m.target},
          {"target_name", class_name(m.target)},
          {"k", m.k},
          {"seed", m.seed},
          {"pool_fingerprint", m.pool_fingerprint},
          {"records", std::move(records)}};
}

SelectionManifest selection_manifest_from_json(const io::Json& j) {
  SelectionManifest m;
  m.strategy = strategy_from_json(j.at("strategy"));
  m.target = j.at("target").get<int>();
  m.k = j.at("k").get<Index>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.pool_fingerprint = j.at("pool_fingerprint").get<std::string>();
  for (const auto& r : j.at("records")) m.records.push_back(style_record_from_json(r));
  return m;
}

}  // namespace styleadv
