#include "styleadv/attack_harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <sstream>

#include <png.h>

#include "styleadv/rng.hpp"
#include "styleadv/runtime.hpp"

namespace fs = std::filesystem;

namespace styleadv {

namespace {

template <class T>
io::Json opt(const std::optional<T>& v) {
  return v ? io::Json(*v) : io::Json(nullptr);
}

template <class T>
std::optional<T> opt_from(const io::Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

std::string digest(const Tensor<float>& x) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(x.data());
  return io::sha256_hex(std::span<const std::uint8_t>(p, static_cast<std::size_t>(x.numel()) * sizeof(float)));
}

double linf(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0.0;
  for (Index i = 0; i < a.numel(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

void check_class(int c, const char* what) {
  if (c < 0 || c >= kNumClasses) throw ValidationError(std::string(what) + " class out of range");
}

void set_outcome(AttackRecord& r) {
  if (r.target) {
    r.eligible = true;
    r.success = !r.failed && r.pred_after == *r.target;
  } else {
    r.eligible = r.pred_before == r.true_label;
    r.success = r.eligible && !r.failed && r.pred_after != r.true_label;
  }
}

/// Rows of `ds` an attack covers: all, or those outside the target class.
std::vector<Index> attacked_rows(const Dataset& ds, std::optional<int> target) {
  std::vector<Index> rows;
  for (Index i = 0; i < ds.size(); ++i) {
    if (!target || ds.labels[static_cast<std::size_t>(i)] != *target) rows.push_back(i);
  }
  return rows;
}

std::vector<int> predict_all(Classifier& m, const Tensor<float>& x) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(x.dim(0)));
  for_each_batch(x.dim(0), 256, [&](Index b, Index e) {
    const auto p = m.predict(x.slice(b, e));
    out.insert(out.end(), p.begin(), p.end());
  });
  return out;
}

io::Json model_fingerprints(const std::vector<Classifier*>& models) {
  io::Json j = io::Json::object();
  for (Classifier* m : models) j[m->info().name] = m->fingerprint();
  return j;
}

io::Json base_config(const Dataset& ds, const std::vector<Classifier*>& models, const StyleAttacker* attacker) {
  io::Json c = {{"dataset", dataset_fingerprint(ds)}, {"evaluated", ds.size()}, {"models", model_fingerprints(models)}};
  if (attacker) {
    c["style"] = to_json(attacker->config());
    c["seed"] = attacker->seed();
  }
  return c;
}

const char* const kUntargetedRule = "eligible: pred_before == true_label; success: eligible and pred_after != true_label";
const char* const kTargetedRule = "examples of the target class excluded; success: pred_after == target";

}  // namespace

// ---------------------------------------------------------------------------
// Records and reports

io::Json to_json(const AttackRecord& r) {
  return {{"id", r.id},
          {"true_label", r.true_label},
          {"pred_before", r.pred_before},
          {"pred_after", r.pred_after},
          {"target", opt(r.target)},
          {"style_source_id", opt(r.style_source_id)},
          {"style_label", opt(r.style_label)},
          {"eligible", r.eligible},
          {"success", r.success},
          {"failed", r.failed},
          {"failure", r.failure},
          {"content_loss", opt(r.content_loss)},
          {"style_loss", opt(r.style_loss)},
          {"iterations", r.iterations},
          {"attempts", r.attempts},
          {"stop_reason", opt(r.stop_reason)},
          {"perturbation_linf", r.perturbation_linf},
          {"digest", r.digest}};
}

AttackRecord attack_record_from_json(const io::Json& j) {
  try {
    AttackRecord r;
    r.id = j.at("id").get<std::uint64_t>();
    r.true_label = j.at("true_label").get<int>();
    r.pred_before = j.at("pred_before").get<int>();
    r.pred_after = j.at("pred_after").get<int>();
    r.target = opt_from<int>(j, "target");
    r.style_source_id = opt_from<std::uint64_t>(j, "style_source_id");
    r.style_label = opt_from<int>(j, "style_label");
    r.eligible = j.at("eligible").get<bool>();
    r.success = j.at("success").get<bool>();
    r.failed = j.at("failed").get<bool>();
    r.failure = j.at("failure").get<std::string>();
    r.content_loss = opt_from<double>(j, "content_loss");
    r.style_loss = opt_from<double>(j, "style_loss");
    r.iterations = j.at("iterations").get<int>();
    r.attempts = j.at("attempts").get<int>();
    r.stop_reason = opt_from<std::string>(j, "stop_reason");
    r.perturbation_linf = j.at("perturbation_linf").get<double>();
    r.digest = j.at("digest").get<std::string>();
    return r;
  } catch (const io::Json::exception& e) {
    throw FormatError(std::string("malformed attack record: ") + e.what());
  }
}

bool record_is_consistent(const AttackRecord& r) {
  AttackRecord expect = r;
  set_outcome(expect);
  if (r.target && r.true_label == *r.target) return false;
  return expect.eligible == r.eligible && expect.success == r.success;
}

double AttackSummary::clean_accuracy() const {
  return evaluated ? static_cast<double>(clean_correct) / static_cast<double>(evaluated) : 0.0;
}

AttackSummary summarize(const std::vector<AttackRecord>& records) {
  AttackSummary s;
  for (const auto& r : records) {
    ++s.evaluated;
    s.clean_correct += r.pred_before == r.true_label;
    s.failures += r.failed;
    if (!r.eligible) continue;
    const auto c = static_cast<std::size_t>(r.true_label);
    ++s.denominator;
    ++s.class_denominator[c];
    if (r.success) {
      ++s.successes;
      ++s.class_successes[c];
    }
  }
  if (s.denominator > 0) s.success_rate = static_cast<double>(s.successes) / static_cast<double>(s.denominator);
  return s;
}

io::Json to_json(const AttackSummary& s) {
  return {{"evaluated", s.evaluated},
          {"clean_correct", s.clean_correct},
          {"clean_accuracy", s.clean_accuracy()},
          {"denominator", s.denominator},
          {"successes", s.successes},
          {"failures", s.failures},
          {"success_rate", opt(s.success_rate)},
          {"class_denominator", s.class_denominator},
          {"class_successes", s.class_successes}};
}

AttackSummary attack_summary_from_json(const io::Json& j) {
  try {
    AttackSummary s;
    s.evaluated = j.at("evaluated").get<Index>();
    s.clean_correct = j.at("clean_correct").get<Index>();
    s.denominator = j.at("denominator").get<Index>();
    s.successes = j.at("successes").get<Index>();
    s.failures = j.at("failures").get<Index>();
    s.success_rate = opt_from<double>(j, "success_rate");
    s.class_denominator = j.at("class_denominator").get<std::array<Index, kNumClasses>>();
    s.class_successes = j.at("class_successes").get<std::array<Index, kNumClasses>>();
    return s;
  } catch (const io::Json::exception& e) {
    throw FormatError(std::string("malformed attack summary: ") + e.what());
  }
}

AttackRun make_run(std::string model, std::string attack, std::optional<int> target, io::Json params,
                   std::vector<AttackRecord> records, Tensor<float> adversarial) {
  AttackRun run;
  run.model = std::move(model);
  run.attack = std::move(attack);
  run.target = target;
  run.params = std::move(params);
  run.summary = summarize(records);
  run.records = std::move(records);
  run.adversarial = std::move(adversarial);
  return run;
}

void set_config(EvalReport& report, io::Json config) {
  report.config = std::move(config);
  report.config_fingerprint = io::sha256_hex(report.config.dump());
}

std::string run_key(const AttackRun& run, std::size_t index) {
  std::string key = std::to_string(index) + "_" + run.model + "_" + run.attack;
  if (run.target) key += "_" + class_name(*run.target);
  for (char& c : key) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '-';
  }
  return key;
}

io::Json to_json(const EvalReport& r, bool records_inline) {
  io::Json runs = io::Json::array();
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    const auto& run = r.runs[i];
    io::Json j = {{"key", run_key(run, i)},
                  {"model", run.model},
                  {"attack", run.attack},
                  {"target", opt(run.target)},
                  {"params", run.params},
                  {"summary", to_json(run.summary)}};
    if (records_inline) {
      io::Json recs = io::Json::array();
      for (const auto& rec : run.records) recs.push_back(to_json(rec));
      j["records"] = std::move(recs);
    } else {
      j["records_file"] = run_key(run, i) + ".jsonl";
    }
    runs.push_back(std::move(j));
  }
  return {{"schema_version", r.schema_version},
          {"kind", r.kind},
          {"config_fingerprint", r.config_fingerprint},
          {"config", r.config},
          {"success_definition", {{"untargeted", kUntargetedRule}, {"targeted", kTargetedRule}}},
          {"runs", std::move(runs)}};
}

EvalReport eval_report_from_json(const io::Json& j) {
  EvalReport r;
  try {
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version != kReportSchemaVersion) {
      throw FormatError("report schema version " + std::to_string(r.schema_version) + ", expected " +
                        std::to_string(kReportSchemaVersion));
    }
    r.kind = j.at("kind").get<std::string>();
    r.config = j.at("config");
    r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    for (const auto& jr : j.at("runs")) {
      AttackRun run;
      run.model = jr.at("model").get<std::string>();
      run.attack = jr.at("attack").get<std::string>();
      run.target = opt_from<int>(jr, "target");
      run.params = jr.at("params");
      run.summary = attack_summary_from_json(jr.at("summary"));
      if (jr.contains("records")) {
        for (const auto& rec : jr.at("records")) run.records.push_back(attack_record_from_json(rec));
      }
      r.runs.push_back(std::move(run));
    }
  } catch (const io::Json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
  return r;
}

void write_report(const EvalReport& r, const fs::path& run_dir, const std::string& name) {
  const fs::path rec_dir = run_dir / "records" / name;
  fs::create_directories(rec_dir);
  fs::create_directories(run_dir / "reports");
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    std::string lines;
    for (const auto& rec : r.runs[i].records) lines += to_json(rec).dump() + "\n";
    io::write_text_atomic(rec_dir / (run_key(r.runs[i], i) + ".jsonl"), lines);
  }
  io::write_json(run_dir / "reports" / (name + ".json"), to_json(r, false));
}

EvalReport read_report(const fs::path& run_dir, const std::string& name) {
  const io::Json j = io::read_json(run_dir / "reports" / (name + ".json"));
  EvalReport r = eval_report_from_json(j);
  const auto& runs = j.at("runs");
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    if (!runs[i].contains("records_file")) continue;
    std::istringstream in(io::read_text(run_dir / "records" / name / runs[i].at("records_file").get<std::string>()));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        r.runs[i].records.push_back(attack_record_from_json(io::Json::parse(line)));
      } catch (const io::Json::exception& e) {
        throw FormatError(std::string("malformed record line: ") + e.what());
      }
    }
  }
  return r;
}

void verify_report(const EvalReport& r) {
  if (r.config_fingerprint != io::sha256_hex(r.config.dump())) throw FormatError("config fingerprint mismatch");
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    const auto& run = r.runs[i];
    const std::string where = "run " + run_key(run, i);
    for (const auto& rec : run.records) {
      if (!record_is_consistent(rec)) throw FormatError(where + ": record " + std::to_string(rec.id) + " is inconsistent");
      if (rec.target != run.target) throw FormatError(where + ": record target differs from the run target");
    }
    if (!(summarize(run.records) == run.summary)) throw FormatError(where + ": aggregates differ from records");
  }
}

// ---------------------------------------------------------------------------
// PGD

std::vector<AttackRecord> pgd_attack(Classifier& model, const Dataset& ds, const PgdConfig& cfg,
                                     std::optional<int> target, std::uint64_t seed, Tensor<float>* adversarial) {
  if (cfg.epsilon < 0.0) throw ValidationError("PGD epsilon must be non-negative");
  if (cfg.steps < 1) throw ValidationError("PGD needs at least one step");
  if (target) check_class(*target, "target");
  const auto rows = attacked_rows(ds, target);
  const Dataset part = ds.select(rows);
  Tensor<float> adv(part.images.shape());
  std::vector<AttackRecord> out(static_cast<std::size_t>(part.size()));
  for_each_batch(part.size(), 128, [&](Index b, Index e) {
    const Tensor<float> x = part.images.slice(b, e);
    std::vector<int> labels;
    std::vector<std::uint64_t> seeds;
    for (Index i = b; i < e; ++i) {
      const auto u = static_cast<std::size_t>(i);
      labels.push_back(target ? *target : part.labels[u]);
      seeds.push_back(derive_seed(seed, part.ids[u]));
    }
    const Tensor<float> a = pgd_perturb(model, x, labels, cfg, target.has_value(), seeds);
    const auto before = model.predict(x);
    const auto after = model.predict(a);
    for (Index i = b; i < e; ++i) {
      const auto u = static_cast<std::size_t>(i);
      const auto k = static_cast<std::size_t>(i - b);
      const Tensor<float> ai = a.item(i - b);
      adv.set_item(i, ai);
      AttackRecord& r = out[u];
      r.id = part.ids[u];
      r.true_label = part.labels[u];
      r.pred_before = before[k];
      r.pred_after = after[k];
      r.target = target;
      r.iterations = cfg.steps;
      r.attempts = 1;
      r.perturbation_linf = linf(ai, x.item(i - b));
      r.digest = digest(ai);
      set_outcome(r);
    }
  });
  if (adversarial) *adversarial = std::move(adv);
  return out;
}

// ---------------------------------------------------------------------------
// Style attacks

void EngineConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || alpha + beta <= 0.0) {
    throw ValidationError("engine weights must be non-negative and not both zero");
  }
  if (!(budget_scale > 0.0)) throw ValidationError("content budget scale must be positive");
  if (max_iters < 0) throw ValidationError("max_iters must be non-negative");
  if (!(step_size > 0.0)) throw ValidationError("engine step size must be positive");
  if (patience < 1) throw ValidationError("patience must be at least 1");
  if (!(plateau_tolerance >= 0.0)) throw ValidationError("plateau tolerance must be non-negative");
  if (style_layers.empty()) throw ValidationError("at least one style layer is required");
}

io::Json to_json(const EngineConfig& c) {
  io::Json layers = io::Json::array();
  for (StyleLayer l : c.style_layers) layers.push_back(to_string(l));
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"content_mode", to_string(c.content_mode)},
          {"budget_scale", c.budget_scale},
          {"max_iters", c.max_iters},
          {"step_size", c.step_size},
          {"patience", c.patience},
          {"plateau_tolerance", c.plateau_tolerance},
          {"style_layers", layers}};
}

EngineConfig engine_config_from_json(const io::Json& j) {
  EngineConfig c;
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  if (j.contains("content_mode")) c.content_mode = parse_content_mode(j.at("content_mode").get<std::string>());
  c.budget_scale = j.value("budget_scale", c.budget_scale);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.step_size = j.value("step_size", c.step_size);
  c.patience = j.value("patience", c.patience);
  c.plateau_tolerance = j.value("plateau_tolerance", c.plateau_tolerance);
  if (j.contains("style_layers")) {
    c.style_layers.clear();
    for (const auto& l : j.at("style_layers")) c.style_layers.push_back(parse_style_layer(l.get<std::string>()));
  }
  c.validate();
  return c;
}

void StyleAttackConfig::validate() const {
  selection.validate();
  engine.validate();
  if (attempts < 1 || attempts > kNumClasses - 1) throw ValidationError("attempts must be between 1 and 9");
}

io::Json to_json(const StyleAttackConfig& c) {
  return {{"selection", to_json(c.selection)}, {"engine", to_json(c.engine)}, {"attempts", c.attempts}};
}

StyleAttackConfig style_attack_config_from_json(const io::Json& j) {
  StyleAttackConfig c;
  if (j.contains("selection")) c.selection = strategy_from_json(j.at("selection"));
  if (j.contains("engine")) c.engine = engine_config_from_json(j.at("engine"));
  c.attempts = j.value("attempts", c.attempts);
  c.validate();
  return c;
}

StyleAttacker::StyleAttacker(StyleResources res, StyleAttackConfig cfg, std::uint64_t seed)
    : res_(res), seed_(seed) {
  if (!res_.vgg) throw ValidationError("style attacks need a style feature extractor");
  if (!res_.pool || res_.pool->empty()) throw ValidationError("style attacks need a non-empty style pool");
  set_config(std::move(cfg));
}

void StyleAttacker::set_config(StyleAttackConfig cfg) {
  cfg.validate();
  if (cfg.selection.kind == SelectionKind::confidence_weighted && !res_.scorer) {
    throw ValidationError("confidence_weighted selection needs the R and NR models");
  }
  if (to_json(cfg.selection) != to_json(cfg_.selection) || cfg.attempts != cfg_.attempts) ranked_.clear();
  cfg_ = std::move(cfg);
  engine_key_ = to_json(cfg_.engine).dump();
}

const std::vector<StyleSourceRecord>& StyleAttacker::ranked_sources(int cls) {
  check_class(cls, "style");
  auto it = ranked_.find(cls);
  if (it != ranked_.end()) return it->second;
  const Index available = static_cast<Index>(
      cfg_.selection.kind == SelectionKind::confidence_weighted
          ? candidate_rows(*res_.pool, cls, cfg_.selection.pool_size, derive_seed(seed_, "selection")).size()
          : res_.pool->rows_by_class()[static_cast<std::size_t>(cls)].size());
  std::vector<StyleSourceRecord> recs;
  if (available > 0) {
    recs = select_style_sources(*res_.pool, cls, cfg_.selection, std::min<Index>(cfg_.attempts, available),
                                derive_seed(seed_, "selection"), res_.scorer);
  }
  return ranked_.emplace(cls, std::move(recs)).first->second;
}

std::vector<StyleAttacker::Candidate> StyleAttacker::candidates(std::uint64_t id, int label,
                                                                std::optional<int> target) {
  const Dataset& pool = *res_.pool;
  auto from = [&](const StyleSourceRecord& r) { return Candidate{r.id, r.row, r.label}; };
  std::vector<Candidate> out;
  const std::uint64_t image_seed = derive_seed(derive_seed(seed_, "style-draw"), id);
  switch (cfg_.selection.kind) {
    case SelectionKind::confidence_weighted: {
      if (target) {
        for (const auto& r : ranked_sources(*target)) out.push_back(from(r));
        break;
      }
      std::vector<std::pair<double, int>> classes;
      for (int c = 0; c < kNumClasses; ++c) {
        if (c == label || ranked_sources(c).empty()) continue;
        classes.push_back({-*ranked_sources(c).front().score, c});
      }
      std::sort(classes.begin(), classes.end());
      for (const auto& [neg, c] : classes) out.push_back(from(ranked_sources(c).front()));
      break;
    }
    case SelectionKind::random: {
      const Index k = std::min<Index>(cfg_.attempts, pool.size());
      for (const auto& r : select_style_sources(pool, target.value_or(label), cfg_.selection, k, image_seed, nullptr)) {
        out.push_back(from(r));
      }
      break;
    }
    case SelectionKind::random_from_target_class: {
      std::vector<int> classes;
      if (target) {
        classes.assign(static_cast<std::size_t>(cfg_.attempts), *target);
      } else {
        for (int c = 0; c < kNumClasses; ++c) {
          if (c != label) classes.push_back(c);
        }
        Rng rng(image_seed);
        shuffle(classes.begin(), classes.end(), rng);
      }
      const auto by_class = pool.rows_by_class();
      std::vector<std::uint64_t> used;
      for (std::size_t a = 0; a < classes.size() && out.size() < static_cast<std::size_t>(cfg_.attempts); ++a) {
        const auto& rows = by_class[static_cast<std::size_t>(classes[a])];
        if (rows.empty()) continue;
        Rng rng(derive_seed(image_seed, a));
        const Index row = rows[uniform_index(rng, rows.size())];
        const std::uint64_t sid = pool.ids[static_cast<std::size_t>(row)];
        if (std::find(used.begin(), used.end(), sid) != used.end()) continue;
        used.push_back(sid);
        out.push_back({sid, row, classes[a]});
      }
      break;
    }
  }
  if (out.size() > static_cast<std::size_t>(cfg_.attempts)) out.resize(static_cast<std::size_t>(cfg_.attempts));
  if (out.empty()) throw ValidationError("style pool offers no usable style source");
  return out;
}

StyleAttacker::Stylized StyleAttacker::run_engine(VggExtractor<float>& vgg, const Tensor<float>& content,
                                                  std::uint64_t id, const Candidate& c) const {
  Stylized s;
  try {
    const EngineConfig& e = cfg_.engine;
    StylizationProblem<float> p;
    p.content = content;
    p.style = res_.pool->image(c.source_row);
    p.alpha = e.alpha;
    p.beta = e.beta;
    p.style_layers = e.style_layers;
    p.content_mode = e.content_mode;
    p.content_budget = content_budget_for(vgg, content, e.content_mode, e.budget_scale, derive_seed(seed_, id));
    p.patience = e.patience;
    p.plateau_tolerance = e.plateau_tolerance;
    p.max_iters = e.max_iters;
    p.step_size = e.step_size;
    p.seed = derive_seed(seed_, id);
    const auto res = stylize(vgg, p);
    s.image = quantize8(res.image);
    s.content = res.final_losses.content;
    s.style = res.final_losses.style;
    s.iterations = static_cast<int>(res.trace.size());
    s.stop_reason = to_string(res.stop_reason);
  } catch (const std::exception& ex) {
    s.image = content;
    s.error = ex.what();
  }
  return s;
}

std::vector<AttackRecord> StyleAttacker::attack(Classifier& model, const Dataset& ds, std::optional<int> target,
                                                Tensor<float>* adversarial) {
  if (target) check_class(*target, "target");
  const auto rows = attacked_rows(ds, target);
  const Dataset part = ds.select(rows);
  const Index n = part.size();
  const auto before = predict_all(model, part.images);

  std::vector<std::vector<Candidate>> cands(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    cands[u] = candidates(part.ids[u], part.labels[u], target);
  }

  std::vector<AttackRecord> out(static_cast<std::size_t>(n));
  std::vector<const Stylized*> chosen(static_cast<std::size_t>(n), nullptr);
  std::vector<char> done(static_cast<std::size_t>(n), 0);
  for (Index i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    out[u].id = part.ids[u];
    out[u].true_label = part.labels[u];
    out[u].pred_before = before[u];
    out[u].target = target;
  }

  for (int a = 0; a < cfg_.attempts; ++a) {
    std::vector<Index> todo;
    for (Index i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      if (!done[u] && static_cast<std::size_t>(a) < cands[u].size()) todo.push_back(i);
    }
    if (todo.empty()) break;

    std::vector<std::string> keys(todo.size());
    std::vector<std::size_t> missing;
    for (std::size_t t = 0; t < todo.size(); ++t) {
      const auto u = static_cast<std::size_t>(todo[t]);
      keys[t] = engine_key_ + "|" + std::to_string(part.ids[u]) + "|" + std::to_string(cands[u][static_cast<std::size_t>(a)].source_id);
      if (!cache_.count(keys[t]) &&
          std::none_of(missing.begin(), missing.end(), [&](std::size_t m) { return keys[m] == keys[t]; })) {
        missing.push_back(t);
      }
    }
    std::vector<Stylized> fresh(missing.size());
    const auto jobs = static_cast<Index>(missing.size());
    const int threads = static_cast<int>(std::max<Index>(1, std::min<Index>(runtime::num_threads(), jobs)));
#pragma omp parallel num_threads(threads) if (threads > 1)
    {
      VggExtractor<float> local = *res_.vgg;
#pragma omp for schedule(dynamic, 1)
      for (Index m = 0; m < jobs; ++m) {
        const std::size_t t = missing[static_cast<std::size_t>(m)];
        const auto u = static_cast<std::size_t>(todo[t]);
        fresh[static_cast<std::size_t>(m)] =
            run_engine(local, part.image(todo[t]), part.ids[u], cands[u][static_cast<std::size_t>(a)]);
      }
    }
    for (std::size_t m = 0; m < missing.size(); ++m) cache_[keys[missing[m]]] = std::move(fresh[m]);

    Tensor<float> batch(Shape{static_cast<Index>(todo.size()), kImageChannels, kImageSize, kImageSize});
    for (std::size_t t = 0; t < todo.size(); ++t) batch.set_item(static_cast<Index>(t), cache_.at(keys[t]).image);
    const auto after = predict_all(model, batch);
    for (std::size_t t = 0; t < todo.size(); ++t) {
      const auto u = static_cast<std::size_t>(todo[t]);
      const Stylized& s = cache_.at(keys[t]);
      const Candidate& c = cands[u][static_cast<std::size_t>(a)];
      AttackRecord& r = out[u];
      chosen[u] = &s;
      r.attempts = a + 1;
      r.style_source_id = c.source_id;
      r.style_label = c.style_label;
      r.failed = !s.error.empty();
      r.failure = s.error;
      r.pred_after = after[t];
      set_outcome(r);
      if (r.success || !r.eligible) done[u] = 1;
    }
  }

  Tensor<float> adv(part.images.shape());
  for (Index i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    const Stylized& s = *chosen[u];
    AttackRecord& r = out[u];
    if (!r.failed) {
      r.content_loss = s.content;
      r.style_loss = s.style;
      r.stop_reason = s.stop_reason;
    }
    r.iterations = s.iterations;
    r.perturbation_linf = linf(s.image, part.image(i));
    r.digest = digest(s.image);
    adv.set_item(i, s.image);
  }
  if (adversarial) *adversarial = std::move(adv);
  return out;
}

EvalReport run_untargeted_style_attack(const std::vector<Classifier*>& models, const Dataset& ds,
                                       StyleAttacker& attacker) {
  EvalReport rep;
  rep.kind = "untargeted";
  set_config(rep, base_config(ds, models, &attacker));
  for (Classifier* m : models) {
    Tensor<float> adv;
    auto recs = attacker.attack(*m, ds, std::nullopt, &adv);
    rep.runs.push_back(make_run(m->info().name, "style", std::nullopt, io::Json::object(), std::move(recs), std::move(adv)));
  }
  return rep;
}

EvalReport run_targeted_style_attack(const std::vector<Classifier*>& models, const Dataset& ds,
                                     const std::vector<int>& targets, StyleAttacker& attacker) {
  if (targets.empty()) throw ValidationError("no target classes given");
  for (int t : targets) check_class(t, "target");
  EvalReport rep;
  rep.kind = "targeted";
  io::Json cfg = base_config(ds, models, &attacker);
  cfg["targets"] = targets;
  set_config(rep, std::move(cfg));
  for (int t : targets) {
    for (Classifier* m : models) {
      Tensor<float> adv;
      auto recs = attacker.attack(*m, ds, t, &adv);
      rep.runs.push_back(make_run(m->info().name, "style", t, io::Json::object(), std::move(recs), std::move(adv)));
    }
  }
  return rep;
}

EvalReport sweep_style_weight(Classifier& model, const Dataset& ds, const std::vector<double>& weights,
                              StyleAttacker& attacker) {
  if (weights.empty()) throw ValidationError("no style weights given");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] > 0.0)) throw ValidationError("style weights must be positive");
    if (i > 0 && !(weights[i] > weights[i - 1])) throw ValidationError("style weights must be ascending");
  }
  EvalReport rep;
  rep.kind = "weight_sweep";
  io::Json cfg = base_config(ds, {&model}, &attacker);
  cfg["weights"] = weights;
  set_config(rep, std::move(cfg));
  const StyleAttackConfig original = attacker.config();
  try {
    for (double w : weights) {
      StyleAttackConfig c = original;
      c.engine.beta = w;
      attacker.set_config(c);
      Tensor<float> adv;
      auto recs = attacker.attack(model, ds, std::nullopt, &adv);
      rep.runs.push_back(make_run(model.info().name, "style", std::nullopt, {{"beta", w}}, std::move(recs), std::move(adv)));
    }
  } catch (...) {
    attacker.set_config(original);
    throw;
  }
  attacker.set_config(original);
  return rep;
}

EvalReport sweep_rnr_proportion(const std::vector<Classifier*>& models, const Dataset& ds,
                                const std::vector<std::pair<double, double>>& nr_r_ratios,
                                const std::vector<int>& targets, StyleAttacker& attacker) {
  if (nr_r_ratios.empty()) throw ValidationError("no R:NR ratios given");
  if (targets.empty()) throw ValidationError("no target classes given");
  for (const auto& [nr, r] : nr_r_ratios) {
    if (!(nr >= 0.0) || !(r >= 0.0) || nr + r <= 0.0) throw ValidationError("ratio weights must be non-negative");
  }
  for (int t : targets) check_class(t, "target");
  EvalReport rep;
  rep.kind = "ratio_sweep";
  io::Json cfg = base_config(ds, models, &attacker);
  io::Json ratios = io::Json::array();
  for (const auto& [nr, r] : nr_r_ratios) ratios.push_back({nr, r});
  cfg["ratios_nr_r"] = ratios;
  cfg["targets"] = targets;
  set_config(rep, std::move(cfg));
  const StyleAttackConfig original = attacker.config();
  try {
    for (int t : targets) {
      for (const auto& [nr, r] : nr_r_ratios) {
        StyleAttackConfig c = original;
        c.selection.w_nr = nr;
        c.selection.w_r = r;
        attacker.set_config(c);
        io::Json sources = io::Json::array();
        for (const auto& s : attacker.ranked_sources(t)) sources.push_back(s.id);
        const double sum = nr + r;
        for (Classifier* m : models) {
          Tensor<float> adv;
          auto recs = attacker.attack(*m, ds, t, &adv);
          rep.runs.push_back(make_run(m->info().name, "style", t,
                                      {{"w_nr", nr / sum}, {"w_r", r / sum}, {"sources", sources}},
                                      std::move(recs), std::move(adv)));
        }
      }
    }
  } catch (...) {
    attacker.set_config(original);
    throw;
  }
  attacker.set_config(original);
  return rep;
}

EvalReport run_defense_eval(const std::vector<Classifier*>& defenses, const Dataset& ds,
                            const std::vector<std::string>& attacks, const PgdConfig& pgd,
                            StyleAttacker& attacker, std::uint64_t seed) {
  for (const auto& a : attacks) {
    if (a != "pgd" && a != "style") throw ValidationError("unknown attack '" + a + "' (expected pgd or style)");
  }
  EvalReport rep;
  rep.kind = "defense";
  io::Json cfg = base_config(ds, defenses, &attacker);
  cfg["attacks"] = attacks;
  cfg["pgd"] = to_json(pgd);
  cfg["pgd_seed"] = seed;
  set_config(rep, std::move(cfg));
  for (Classifier* m : defenses) {
    const auto before = predict_all(*m, ds.images);
    std::vector<AttackRecord> clean(static_cast<std::size_t>(ds.size()));
    for (std::size_t i = 0; i < clean.size(); ++i) {
      clean[i].id = ds.ids[i];
      clean[i].true_label = ds.labels[i];
      clean[i].pred_before = clean[i].pred_after = before[i];
      clean[i].digest = digest(ds.image(static_cast<Index>(i)));
      set_outcome(clean[i]);
    }
    rep.runs.push_back(make_run(m->info().name, "clean", std::nullopt, io::Json::object(), std::move(clean), ds.images));
    for (const auto& a : attacks) {
      Tensor<float> adv;
      auto recs = a == "pgd" ? pgd_attack(*m, ds, pgd, std::nullopt, seed, &adv)
                             : attacker.attack(*m, ds, std::nullopt, &adv);
      rep.runs.push_back(make_run(m->info().name, a, std::nullopt, io::Json::object(), std::move(recs), std::move(adv)));
    }
  }
  return rep;
}

EvalReport transferability_matrix(const std::vector<Classifier*>& generators,
                                  const std::vector<Classifier*>& victims, const Dataset& ds,
                                  StyleAttacker& attacker) {
  if (generators.empty() || victims.empty()) throw ValidationError("transfer matrix needs generators and victims");
  EvalReport rep;
  rep.kind = "transfer";
  std::vector<Classifier*> all = generators;
  all.insert(all.end(), victims.begin(), victims.end());
  io::Json cfg = base_config(ds, all, &attacker);
  io::Json g = io::Json::array(), v = io::Json::array();
  for (Classifier* m : generators) g.push_back(m->info().name);
  for (Classifier* m : victims) v.push_back(m->info().name);
  cfg["generators"] = g;
  cfg["victims"] = v;
  set_config(rep, std::move(cfg));
  for (Classifier* gen : generators) {
    Tensor<float> adv;
    const auto base = attacker.attack(*gen, ds, std::nullopt, &adv);
    for (Classifier* vic : victims) {
      const auto before = predict_all(*vic, ds.images);
      const auto after = predict_all(*vic, adv);
      std::vector<AttackRecord> recs = base;
      for (std::size_t i = 0; i < recs.size(); ++i) {
        recs[i].pred_before = before[i];
        recs[i].pred_after = after[i];
        set_outcome(recs[i]);
      }
      rep.runs.push_back(make_run(vic->info().name, "style", std::nullopt, {{"generator", gen->info().name}},
                                  std::move(recs), adv));
    }
  }
  return rep;
}

std::optional<double> find_rate(const EvalReport& r, const std::string& model, const std::string& attack,
                                const io::Json& params) {
  for (const auto& run : r.runs) {
    if (run.model != model || run.attack != attack) continue;
    bool match = true;
    for (const auto& [k, v] : params.items()) match &= run.params.contains(k) && run.params.at(k) == v;
    if (match) return run.summary.success_rate;
  }
  throw ValidationError("report has no " + attack + " run on " + model + " matching " + params.dump());
}

// ---------------------------------------------------------------------------
// Grids

Tensor<float> quantize8(const Tensor<float>& x) {
  Tensor<float> q = x;
  for (Index i = 0; i < q.numel(); ++i) {
    q[i] = static_cast<float>(std::lround(std::clamp(q[i], 0.0f, 1.0f) * 255.0f)) / 255.0f;
  }
  return q;
}

void render_adversarial_grid(const std::vector<Tensor<float>>& clean,
                             const std::vector<std::vector<Tensor<float>>>& rows, const fs::path& path) {
  if (clean.empty()) throw ValidationError("grid needs at least one column");
  const Shape cell = clean.front().shape();
  if (cell.rank() != 3 || cell[0] != 3) throw ShapeError("grid cells must be 3 x H x W");
  for (const auto& row : rows) {
    if (row.size() != clean.size()) {
      throw ValidationError("grid row has " + std::to_string(row.size()) + " cells, clean strip has " +
                            std::to_string(clean.size()));
    }
  }
  std::vector<const std::vector<Tensor<float>>*> all{&clean};
  for (const auto& row : rows) all.push_back(&row);
  const auto h = static_cast<std::size_t>(cell[1]), w = static_cast<std::size_t>(cell[2]);
  const std::size_t cols = clean.size(), nrows = all.size();
  const std::size_t width = cols * (w + kGridGap) + kGridGap, height = nrows * (h + kGridGap) + kGridGap;
  std::vector<std::uint8_t> pixels(width * height * 3, 255);
  for (std::size_t r = 0; r < nrows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const Tensor<float>& t = (*all[r])[c];
      if (t.shape() != cell) throw ShapeError("grid cells differ in shape");
      for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const float v = t[static_cast<Index>((ch * h + y) * w + x)];
            const std::size_t py = kGridGap + r * (h + kGridGap) + y, px = kGridGap + c * (w + kGridGap) + x;
            pixels[(py * width + px) * 3 + ch] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
          }
        }
      }
    }
  }

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) throw Error("cannot write " + tmp.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
    throw Error("PNG encoding failed for " + path.string());
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) png_write_row(png, pixels.data() + y * width * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
  fs::rename(tmp, path);
}

std::vector<std::vector<Tensor<float>>> decode_grid(const fs::path& path, int cell) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw MissingPrerequisiteError("grid not found: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(f);
    throw FormatError("cannot decode PNG " + path.string());
  }
  png_init_io(png, f);
  png_read_info(png, info);
  const std::size_t width = png_get_image_width(png, info), height = png_get_image_height(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(f);
    throw FormatError("grid must be 8-bit RGB: " + path.string());
  }
  std::vector<std::uint8_t> pixels(width * height * 3);
  for (std::size_t y = 0; y < height; ++y) png_read_row(png, pixels.data() + y * width * 3, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(f);

  const auto step = static_cast<std::size_t>(cell + kGridGap);
  if (width < kGridGap || height < kGridGap || (width - kGridGap) % step || (height - kGridGap) % step) {
    throw FormatError("grid size does not match the cell layout");
  }
  const std::size_t cols = (width - kGridGap) / step, nrows = (height - kGridGap) / step;
  const auto c = static_cast<std::size_t>(cell);
  std::vector<std::vector<Tensor<float>>> out(nrows);
  for (std::size_t r = 0; r < nrows; ++r) {
    for (std::size_t k = 0; k < cols; ++k) {
      Tensor<float> t(Shape{3, cell, cell});
      for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t y = 0; y < c; ++y) {
          for (std::size_t x = 0; x < c; ++x) {
            const std::size_t py = kGridGap + r * step + y, px = kGridGap + k * step + x;
            t[static_cast<Index>((ch * c + y) * c + x)] = static_cast<float>(pixels[(py * width + px) * 3 + ch]) / 255.0f;
          }
        }
      }
      out[r].push_back(std::move(t));
    }
  }
  return out;
}

}  // namespace styleadv
