#include "styleadv/workbench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "styleadv/rng.hpp"
#include "styleadv/runtime.hpp"

namespace fs = std::filesystem;

namespace styleadv::workbench {

// ---------------------------------------------------------------------------
// Configuration

io::Json default_config() {
  const double eps8 = 8.0 / 255.0, step2 = 2.0 / 255.0;
  io::Json layers = io::Json::array();
  for (StyleLayer l : all_style_layers()) layers.push_back(to_string(l));
  return {
      {"format_version", kConfigFormatVersion},
      {"seed", 0},
      {"output_dir", "runs/default"},
      {"strict_determinism", true},
      {"threads", 0},
      {"data",
       {{"root", ""},
        {"train_subset", nullptr},
        {"test_subset", nullptr},
        {"build_robust", true},
        {"build_nonrobust", true},
        {"robust",
         {{"source_model", "PGDAT"},
          {"steps", 1000},
          {"step_size", 0.1},
          {"init", "other_image"},
          {"subset", nullptr},
          {"import_images", ""},
          {"import_labels", ""}}},
        {"nonrobust",
         {{"source_model", "RNB"},
          {"epsilon", 0.5},
          {"steps", 100},
          {"step_size", 0.1},
          {"rule", "rotate"},
          {"subset", nullptr},
          {"import_images", ""},
          {"import_labels", ""}}}}},
      {"zoo",
       {{"models", {"RNB", "RB", "NRB", "VGG19B", "PGDAT", "IAT"}},
        {"width", 1.0},
        {"train",
         {{"epochs", 20},
          {"batch_size", 128},
          {"lr", 0.1},
          {"momentum", 0.9},
          {"weight_decay", 5e-4},
          {"lr_gamma", 0.1},
          {"augment", true}}},
        {"pgd", {{"epsilon", eps8}, {"steps", 7}, {"step_size", step2}}},
        {"mix", {{"alpha", 1.0}, {"beta", 1.0}}},
        {"robust_probe_size", 200}}},
      {"selector",
       {{"kind", "confidence_weighted"},
        {"w_r", 0.5},
        {"w_nr", 0.5},
        {"probe_mode", "style_synthesis"},
        {"pool_size", 200},
        {"r_model", "RB"},
        {"nr_model", "NRB"},
        {"probe", {{"max_iters", 300}, {"step_size", 0.05}, {"patience", 25}}}}},
      {"engine",
       {{"extractor", "pretrained"},
        {"alpha", 1.0},
        {"beta", 8e4},
        {"content_mode", "feature_r22"},
        {"budget_scale", 0.5},
        {"max_iters", 300},
        {"step_size", 0.05},
        {"patience", 25},
        {"plateau_tolerance", 1e-4},
        {"style_layers", layers}}},
      {"harness",
       {{"attempts", 3},
        {"eval_size", 200},
        {"models", {"RNB", "VGG19B", "PGDAT", "IAT"}},
        {"targets", {"frog", "deer", "truck", "cat", "dog"}},
        {"generator", "RNB"},
        {"weights", {1e4, 4e4, 8e4, 1e5}},
        {"ratios", {{1.0, 9.0}, {3.0, 7.0}, {5.0, 5.0}, {7.0, 3.0}, {9.0, 1.0}}},
        {"ratio_targets", {"ship", "airplane", "deer"}},
        {"ratio_models", {"RNB", "PGDAT"}},
        {"defenses", {"PGDAT", "IAT"}},
        {"defense_attacks", {"pgd", "style"}},
        {"generators", {"RNB"}},
        {"victims", {"RNB", "VGG19B"}},
        {"pgd", {{"epsilon", eps8}, {"steps", 20}, {"step_size", step2}}},
        {"grid_columns", 10}}},
      {"probe",
       {{"r_model", "RB"},
        {"nr_model", "NRB"},
        {"judges", {"RNB", "IAT", "PGDAT"}},
        {"summary_models", {"RB", "NRB", "RNB", "IAT", "PGDAT"}},
        {"epsilon", eps8},
        {"steps", 20},
        {"step_size", step2},
        {"r_target", "ship"},
        {"nr_target", "airplane"},
        {"want", 200}}},
  };
}

namespace {

std::string join_path(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

const char* type_name(const io::Json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

/// Checks `value` against the type of the default `ref`. A null default
/// marks an optional non-negative integer.
void check_type(const io::Json& ref, const io::Json& value, const std::string& path) {
  auto fail = [&](const char* want) {
    throw ValidationError(path + ": expected " + want + ", got " + type_name(value));
  };
  if (ref.is_null()) {
    if (!value.is_null() && !(value.is_number_integer() && value.get<std::int64_t>() >= 0)) {
      fail("null or a non-negative integer");
    }
  } else if (ref.is_boolean()) {
    if (!value.is_boolean()) fail("boolean");
  } else if (ref.is_number_integer()) {
    if (!value.is_number_integer()) fail("integer");
  } else if (ref.is_number()) {
    if (!value.is_number()) fail("number");
  } else if (ref.is_string()) {
    if (!value.is_string()) fail("string");
  } else if (ref.is_array()) {
    if (!value.is_array()) fail("array");
    if (!ref.empty()) {
      for (std::size_t i = 0; i < value.size(); ++i) check_type(ref[0], value[i], path + "[" + std::to_string(i) + "]");
    }
  } else if (ref.is_object()) {
    if (!value.is_object()) fail("object");
  }
}

void overlay(io::Json& base, const io::Json& user, const std::string& path) {
  if (!user.is_object()) throw ValidationError((path.empty() ? "config" : path) + ": expected object");
  for (const auto& [key, value] : user.items()) {
    const std::string here = join_path(path, key);
    if (!base.contains(key)) throw ValidationError(here + ": unknown key");
    io::Json& slot = base[key];
    check_type(slot, value, here);
    if (slot.is_object()) {
      overlay(slot, value, here);
    } else {
      slot = value;
    }
  }
}

template <class F>
void at_path(const std::string& path, F&& check) {
  try {
    check();
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  } catch (const io::Json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ValidationError(path + ": " + what);
}

void check_model(const io::Json& cfg, const std::string& path) {
  at_path(path, [&] { zoo_entry(cfg.get<std::string>()); });
}

void check_models(const io::Json& arr, const std::string& path, bool non_empty = true) {
  require(!non_empty || !arr.empty(), path, "must not be empty");
  for (std::size_t i = 0; i < arr.size(); ++i) check_model(arr[i], path + "[" + std::to_string(i) + "]");
}

void check_class_name(const io::Json& v, const std::string& path) {
  at_path(path, [&] { class_index(v.get<std::string>()); });
}

void check_pgd(const io::Json& p, const std::string& path) {
  require(p.at("epsilon").get<double>() >= 0.0, path + ".epsilon", "must be non-negative");
  require(p.at("steps").get<int>() >= 1, path + ".steps", "must be at least 1");
  require(p.at("step_size").get<double>() >= 0.0, path + ".step_size", "must be non-negative");
}

PgdConfig pgd_from(const io::Json& p, bool random_start = true) {
  PgdConfig c;
  c.epsilon = p.at("epsilon").get<double>();
  c.steps = p.at("steps").get<int>();
  c.step_size = p.at("step_size").get<double>();
  c.random_start = random_start;
  return c;
}

SelectionStrategy selection_from(const io::Json& s) {
  SelectionStrategy st;
  st.kind = parse_selection_kind(s.at("kind").get<std::string>());
  st.w_r = s.at("w_r").get<double>();
  st.w_nr = s.at("w_nr").get<double>();
  st.probe_mode = parse_probe_mode(s.at("probe_mode").get<std::string>());
  st.pool_size = s.at("pool_size").get<Index>();
  return st;
}

EngineConfig engine_from(const io::Json& e) {
  io::Json copy = e;
  copy.erase("extractor");
  return engine_config_from_json(copy);
}

std::string canonical(const std::string& name) { return zoo_entry(name).name; }

std::vector<std::string> names(const io::Json& arr) {
  std::vector<std::string> out;
  for (const auto& v : arr) out.push_back(canonical(v.get<std::string>()));
  return out;
}

std::vector<int> classes(const io::Json& arr) {
  std::vector<int> out;
  for (const auto& v : arr) out.push_back(class_index(v.get<std::string>()));
  return out;
}

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

io::Json opt_json(const std::optional<double>& v) { return v ? io::Json(*v) : io::Json(nullptr); }

std::string short_hash(const io::Json& key) { return io::sha256_hex(key.dump()).substr(0, 16); }

/// Config without the fields that do not affect results.
io::Json science_config(const io::Json& cfg) {
  io::Json c = cfg;
  c.erase("output_dir");
  c.erase("threads");
  return c;
}

}  // namespace

void apply_override(io::Json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ValidationError("override '" + std::string(assignment) + "' is not of the form key.path=value");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  io::Json value;
  try {
    value = io::Json::parse(text);
  } catch (const io::Json::exception&) {
    value = text;
  }
  io::Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ValidationError("override path '" + path + "' has an empty component");
    if (!node->is_object()) throw ValidationError(path + ": cannot descend into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = io::Json::object();
    start = dot + 1;
  }
}

void validate_config(const io::Json& c) {
  require(c.at("format_version").get<int>() == kConfigFormatVersion, "format_version",
          "unsupported version (expected " + std::to_string(kConfigFormatVersion) + ")");
  require(c.at("seed").get<std::int64_t>() >= 0, "seed", "must be non-negative");
  require(c.at("threads").get<int>() >= 0, "threads", "must be non-negative");
  require(!c.at("output_dir").get<std::string>().empty(), "output_dir", "must not be empty");

  const auto& d = c.at("data");
  const auto& r = d.at("robust");
  check_model(r.at("source_model"), "data.robust.source_model");
  require(zoo_entry(r.at("source_model").get<std::string>()).train_set == DatasetKind::cifar10,
          "data.robust.source_model", "must be trained on CIFAR-10");
  require(r.at("steps").get<int>() >= 0, "data.robust.steps", "must be non-negative");
  require(r.at("step_size").get<double>() > 0.0, "data.robust.step_size", "must be positive");
  at_path("data.robust.init", [&] { parse_robust_init(r.at("init").get<std::string>()); });
  require(r.at("import_images").get<std::string>().empty() == r.at("import_labels").get<std::string>().empty(),
          "data.robust.import_labels", "import_images and import_labels go together");
  const auto& n = d.at("nonrobust");
  check_model(n.at("source_model"), "data.nonrobust.source_model");
  require(zoo_entry(n.at("source_model").get<std::string>()).train_set == DatasetKind::cifar10,
          "data.nonrobust.source_model", "must be trained on CIFAR-10");
  require(n.at("epsilon").get<double>() > 0.0, "data.nonrobust.epsilon", "must be positive");
  require(n.at("steps").get<int>() >= 1, "data.nonrobust.steps", "must be at least 1");
  require(n.at("step_size").get<double>() > 0.0, "data.nonrobust.step_size", "must be positive");
  at_path("data.nonrobust.rule", [&] { parse_target_rule(n.at("rule").get<std::string>()); });
  require(n.at("import_images").get<std::string>().empty() == n.at("import_labels").get<std::string>().empty(),
          "data.nonrobust.import_labels", "import_images and import_labels go together");

  const auto& z = c.at("zoo");
  check_models(z.at("models"), "zoo.models");
  require(z.at("width").get<double>() > 0.0, "zoo.width", "must be positive");
  const auto& t = z.at("train");
  require(t.at("epochs").get<int>() >= 0, "zoo.train.epochs", "must be non-negative");
  require(t.at("batch_size").get<int>() >= 1, "zoo.train.batch_size", "must be at least 1");
  require(t.at("lr").get<double>() > 0.0, "zoo.train.lr", "must be positive");
  require(t.at("momentum").get<double>() >= 0.0 && t.at("momentum").get<double>() < 1.0, "zoo.train.momentum",
          "must be in [0, 1)");
  require(t.at("weight_decay").get<double>() >= 0.0, "zoo.train.weight_decay", "must be non-negative");
  require(t.at("lr_gamma").get<double>() > 0.0, "zoo.train.lr_gamma", "must be positive");
  check_pgd(z.at("pgd"), "zoo.pgd");
  require(z.at("mix").at("alpha").get<double>() > 0.0, "zoo.mix.alpha", "must be positive");
  require(z.at("mix").at("beta").get<double>() > 0.0, "zoo.mix.beta", "must be positive");
  require(z.at("robust_probe_size").get<int>() >= 0, "zoo.robust_probe_size", "must be non-negative");

  const auto& s = c.at("selector");
  at_path("selector", [&] { selection_from(s).validate(); });
  check_model(s.at("r_model"), "selector.r_model");
  check_model(s.at("nr_model"), "selector.nr_model");
  require(s.at("probe").at("max_iters").get<int>() >= 0, "selector.probe.max_iters", "must be non-negative");
  require(s.at("probe").at("step_size").get<double>() > 0.0, "selector.probe.step_size", "must be positive");
  require(s.at("probe").at("patience").get<int>() >= 1, "selector.probe.patience", "must be at least 1");

  const auto& e = c.at("engine");
  const std::string ex = e.at("extractor").get<std::string>();
  require(ex == "pretrained" || ex == "random", "engine.extractor", "must be 'pretrained' or 'random'");
  at_path("engine", [&] { engine_from(e); });

  const auto& h = c.at("harness");
  require(h.at("attempts").get<int>() >= 1 && h.at("attempts").get<int>() <= kNumClasses - 1, "harness.attempts",
          "must be between 1 and 9");
  require(h.at("eval_size").get<int>() >= 1, "harness.eval_size", "must be at least 1");
  check_models(h.at("models"), "harness.models");
  for (std::size_t i = 0; i < h.at("targets").size(); ++i) check_class_name(h.at("targets")[i], "harness.targets[" + std::to_string(i) + "]");
  check_model(h.at("generator"), "harness.generator");
  const auto& w = h.at("weights");
  require(!w.empty(), "harness.weights", "must not be empty");
  for (std::size_t i = 0; i < w.size(); ++i) {
    require(w[i].get<double>() > 0.0, "harness.weights[" + std::to_string(i) + "]", "must be positive");
    if (i > 0) require(w[i].get<double>() > w[i - 1].get<double>(), "harness.weights", "must be ascending");
  }
  for (std::size_t i = 0; i < h.at("ratios").size(); ++i) {
    const auto& ratio = h.at("ratios")[i];
    const std::string p = "harness.ratios[" + std::to_string(i) + "]";
    require(ratio.size() == 2, p, "must be a [w_nr, w_r] pair");
    require(ratio[0].get<double>() >= 0.0 && ratio[1].get<double>() >= 0.0 &&
                ratio[0].get<double>() + ratio[1].get<double>() > 0.0,
            p, "weights must be non-negative and not both zero");
  }
  for (std::size_t i = 0; i < h.at("ratio_targets").size(); ++i) {
    check_class_name(h.at("ratio_targets")[i], "harness.ratio_targets[" + std::to_string(i) + "]");
  }
  check_models(h.at("ratio_models"), "harness.ratio_models");
  check_models(h.at("defenses"), "harness.defenses");
  for (const auto& a : h.at("defense_attacks")) {
    require(a == "pgd" || a == "style", "harness.defense_attacks", "entries must be 'pgd' or 'style'");
  }
  check_models(h.at("generators"), "harness.generators");
  check_models(h.at("victims"), "harness.victims");
  check_pgd(h.at("pgd"), "harness.pgd");
  require(h.at("grid_columns").get<int>() >= 1, "harness.grid_columns", "must be at least 1");

  const auto& p = c.at("probe");
  check_model(p.at("r_model"), "probe.r_model");
  check_model(p.at("nr_model"), "probe.nr_model");
  check_models(p.at("judges"), "probe.judges");
  check_models(p.at("summary_models"), "probe.summary_models", false);
  require(p.at("epsilon").get<double>() > 0.0, "probe.epsilon", "must be positive");
  require(p.at("steps").get<int>() >= 1, "probe.steps", "must be at least 1");
  require(p.at("step_size").get<double>() > 0.0, "probe.step_size", "must be positive");
  check_class_name(p.at("r_target"), "probe.r_target");
  check_class_name(p.at("nr_target"), "probe.nr_target");
  require(p.at("r_target") != p.at("nr_target"), "probe.nr_target", "must differ from probe.r_target");
  require(p.at("want").get<int>() >= 0, "probe.want", "must be non-negative");
}

io::Json resolve_config(const io::Json& user, const std::vector<std::string>& overrides) {
  io::Json doc = user.is_null() ? io::Json::object() : user;
  for (const auto& o : overrides) apply_override(doc, o);
  io::Json cfg = default_config();
  overlay(cfg, doc, "");
  validate_config(cfg);
  return cfg;
}

io::Json read_config_file(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("config file not found: " + path.string());
  io::Json j;
  try {
    j = io::Json::parse(io::read_text(path));
  } catch (const io::Json::exception& e) {
    throw ValidationError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (j.is_object() && j.contains("command") && j.contains("config") && j.contains("status")) return j.at("config");
  return j;
}

// ---------------------------------------------------------------------------
// Run directory and manifest

void RunDir::create() const {
  for (const auto& d : {config(), checkpoints(), records(), reports(), grids()}) fs::create_directories(d);
}

RunManifest::RunManifest(const RunDir& dir, std::string command, io::Json config)
    : dir_(dir), path_(dir.config() / ("manifest-" + command + ".json")) {
  dir_.create();
  doc_ = {{"command", command},
          {"status", "running"},
          {"format_version", kConfigFormatVersion},
          {"config", std::move(config)},
          {"started_at", now_utc()},
          {"finished_at", nullptr},
          {"inputs", io::Json::object()},
          {"outputs", io::Json::array()},
          {"notes", io::Json::object()}};
  io::write_json(dir_.config() / "run_config.json", doc_.at("config"));
  write();
}

void RunManifest::add_input(const std::string& name, const std::string& fingerprint) {
  doc_["inputs"][name] = fingerprint;
}

void RunManifest::add_output(const fs::path& path) {
  doc_["outputs"].push_back(fs::relative(path, dir_.root()).generic_string());
}

void RunManifest::note(const std::string& key, io::Json value) { doc_["notes"][key] = std::move(value); }

void RunManifest::complete() {
  doc_["status"] = "complete";
  doc_["finished_at"] = now_utc();
  write();
}

void RunManifest::write() const { io::write_json(path_, doc_); }

// ---------------------------------------------------------------------------
// Workbench

struct Workbench::State {
  std::map<std::string, Dataset> datasets;
  std::map<std::string, std::unique_ptr<Classifier>> models;
  std::unique_ptr<VggExtractor<float>> vgg;
  std::unique_ptr<StyleScorer> scorer;
  std::unique_ptr<StyleAttacker> attacker;
  std::optional<Dataset> pool;
  std::optional<Dataset> eval;
  io::Json cache_log = io::Json::array();
};

Workbench::Workbench(io::Json config)
    : cfg_(std::move(config)), dir_(cfg_.at("output_dir").get<std::string>()), state_(std::make_unique<State>()) {
  runtime::set_strict_determinism(cfg_.at("strict_determinism").get<bool>());
  runtime::set_num_threads(cfg_.at("threads").get<int>());
}

Workbench::~Workbench() = default;

fs::path Workbench::dataset_cache(const std::string& stem, const io::Json& key) const {
  return cache_root() / "datasets" / (stem + "-" + short_hash(key) + ".bin");
}

Dataset Workbench::cifar(Split split) {
  const std::string name = "cifar10-" + to_string(split);
  if (auto it = state_->datasets.find(name); it != state_->datasets.end()) return it->second;
  const auto& d = cfg_.at("data");
  const std::string root_s = d.at("root").get<std::string>();
  const fs::path root = root_s.empty() ? cache_root() / "cifar10" : fs::absolute(root_s);
  const io::Json& sub = d.at(split == Split::train ? "train_subset" : "test_subset");
  const std::optional<Index> subset = sub.is_null() ? std::nullopt : std::optional<Index>(sub.get<Index>());
  const std::uint64_t seed = derive_seed(cfg_.at("seed").get<std::uint64_t>(), name);
  const io::Json key = {{"root", root.string()}, {"split", to_string(split)}, {"subset", sub}, {"seed", seed}};
  const fs::path cache = dataset_cache(name, key);
  Dataset ds;
  if (fs::exists(cache)) {
    ds = load_dataset(cache);
    state_->cache_log.push_back({{"dataset", name}, {"hit", true}, {"path", cache.string()}});
  } else {
    ds = load_cifar10(root, split, subset, seed);
    save_dataset(ds, cache);
    state_->cache_log.push_back({{"dataset", name}, {"hit", false}, {"path", cache.string()}});
  }
  return state_->datasets[name] = std::move(ds);
}

Dataset Workbench::feature_dataset(DatasetKind kind) {
  if (kind == DatasetKind::cifar10) return cifar(Split::train);
  const std::string name = to_string(kind) + "-train";
  if (auto it = state_->datasets.find(name); it != state_->datasets.end()) return it->second;
  const bool robust = kind == DatasetKind::cifar10r;
  const io::Json& c = cfg_.at("data").at(robust ? "robust" : "nonrobust");
  Dataset ds;
  if (!c.at("import_images").get<std::string>().empty()) {
    ds = import_feature_dataset(kind, Split::train, c.at("import_images").get<std::string>(),
                                c.at("import_labels").get<std::string>());
    state_->cache_log.push_back({{"dataset", name}, {"imported", c.at("import_images")}});
    return state_->datasets[name] = std::move(ds);
  }
  Dataset base = cifar(Split::train);
  const std::uint64_t seed = derive_seed(cfg_.at("seed").get<std::uint64_t>(), name);
  if (!c.at("subset").is_null()) base = base.select(stratified_rows(base, c.at("subset").get<Index>(), seed));
  Classifier& source = ensure_model(c.at("source_model").get<std::string>());
  const io::Json key = {{"base", dataset_fingerprint(base)}, {"source", source.fingerprint()}, {"config", c}, {"seed", seed}};
  const fs::path cache = dataset_cache(name, key);
  if (fs::exists(cache)) {
    ds = load_dataset(cache);
    state_->cache_log.push_back({{"dataset", name}, {"hit", true}, {"path", cache.string()}});
  } else {
    if (robust) {
      RobustConfig rc;
      rc.steps = c.at("steps").get<int>();
      rc.step_size = c.at("step_size").get<double>();
      rc.init = parse_robust_init(c.at("init").get<std::string>());
      ds = construct_robust_dataset(base, source, rc, seed);
    } else {
      NonRobustConfig nc;
      nc.epsilon = c.at("epsilon").get<double>();
      nc.steps = c.at("steps").get<int>();
      nc.step_size = c.at("step_size").get<double>();
      nc.rule = parse_target_rule(c.at("rule").get<std::string>());
      ds = construct_nonrobust_dataset(base, source, nc, seed);
    }
    save_dataset(ds, cache);
    state_->cache_log.push_back({{"dataset", name}, {"hit", false}, {"path", cache.string()}});
  }
  return state_->datasets[name] = std::move(ds);
}

Dataset Workbench::eval_set() {
  if (state_->eval) return *state_->eval;
  const Dataset test = cifar(Split::test);
  const Index n = std::min<Index>(cfg_.at("harness").at("eval_size").get<Index>(), test.size());
  state_->eval = test.select(stratified_rows(test, n, derive_seed(cfg_.at("seed").get<std::uint64_t>(), "eval")));
  return *state_->eval;
}

bool Workbench::has_model(const std::string& name) const {
  const std::string c = canonical(name);
  return state_->models.count(c) || fs::exists(dir_.checkpoint(c));
}

Classifier& Workbench::model(const std::string& name) {
  const std::string c = canonical(name);
  if (auto it = state_->models.find(c); it != state_->models.end()) return *it->second;
  const fs::path p = dir_.checkpoint(c);
  if (!fs::exists(p)) {
    throw MissingPrerequisiteError("checkpoint for " + c + " not found in " + dir_.checkpoints().string() +
                                   "; run `styleadv train --models " + c + "` first");
  }
  return *(state_->models[c] = std::make_unique<Classifier>(load_checkpoint(p)));
}

Classifier& Workbench::ensure_model(const std::string& name) {
  const std::string c = canonical(name);
  if (has_model(c)) return model(c);
  dir_.create();
  Classifier m = train_model(c);
  save_checkpoint(m, dir_.checkpoint(c));
  return *(state_->models[c] = std::make_unique<Classifier>(std::move(m)));
}

Classifier Workbench::train_model(const std::string& name) {
  const ZooEntry& entry = zoo_entry(name);
  const auto& z = cfg_.at("zoo");
  const auto& t = z.at("train");
  const std::uint64_t seed = derive_seed(cfg_.at("seed").get<std::uint64_t>(), entry.name);
  ClassifierInfo info;
  info.name = entry.name;
  info.arch = {entry.arch, z.at("width").get<double>(), kNumClasses};
  info.regime = entry.regime;
  info.train_set = entry.train_set;
  info.seed = seed;
  Classifier m(info);

  TrainConfig tc;
  tc.epochs = t.at("epochs").get<int>();
  tc.batch_size = t.at("batch_size").get<Index>();
  tc.lr = t.at("lr").get<double>();
  tc.momentum = t.at("momentum").get<double>();
  tc.weight_decay = t.at("weight_decay").get<double>();
  tc.lr_gamma = t.at("lr_gamma").get<double>();
  tc.augment = t.at("augment").get<bool>();
  tc.seed = seed;
  const Dataset train = feature_dataset(entry.train_set);
  const Dataset test = cifar(Split::test);
  EvalOptions eval;
  eval.test = &test;
  const PgdConfig pgd = pgd_from(z.at("pgd"));
  if (entry.regime != Regime::standard) {
    eval.robust_probe = pgd_from(cfg_.at("harness").at("pgd"));
    eval.robust_probe_size = z.at("robust_probe_size").get<Index>();
  }
  switch (entry.regime) {
    case Regime::standard:
      train_standard(m, train, tc, eval);
      break;
    case Regime::pgd_at:
      train_pgd_adversarial(m, train, pgd, tc, eval);
      break;
    case Regime::iat: {
      MixConfig mix;
      mix.alpha = z.at("mix").at("alpha").get<double>();
      mix.beta = z.at("mix").at("beta").get<double>();
      train_interpolated_adversarial(m, train, pgd, mix, tc, eval);
      break;
    }
  }
  return m;
}

StyleAttacker& Workbench::attacker() {
  if (state_->attacker) return *state_->attacker;
  const auto& e = cfg_.at("engine");
  const std::uint64_t seed = cfg_.at("seed").get<std::uint64_t>();
  state_->vgg = std::make_unique<VggExtractor<float>>(e.at("extractor") == "random"
                                                         ? VggExtractor<float>::random(derive_seed(seed, "extractor"))
                                                         : VggExtractor<float>::load_default());
  state_->pool = cifar(Split::train);
  StyleAttackConfig sc;
  const auto& s = cfg_.at("selector");
  sc.selection = selection_from(s);
  sc.engine = engine_from(e);
  sc.attempts = cfg_.at("harness").at("attempts").get<int>();
  if (sc.selection.kind == SelectionKind::confidence_weighted) {
    ProbeSettings ps;
    ps.max_iters = s.at("probe").at("max_iters").get<int>();
    ps.step_size = s.at("probe").at("step_size").get<double>();
    ps.patience = s.at("probe").at("patience").get<int>();
    state_->scorer = std::make_unique<StyleScorer>(model(s.at("r_model").get<std::string>()),
                                                   model(s.at("nr_model").get<std::string>()), state_->vgg.get(), ps,
                                                   derive_seed(seed, "probe"));
  }
  state_->attacker = std::make_unique<StyleAttacker>(
      StyleResources{state_->vgg.get(), &*state_->pool, state_->scorer.get()}, sc, derive_seed(seed, "attack"));
  return *state_->attacker;
}

void Workbench::save_report(RunManifest& m, const EvalReport& r, const std::string& name) {
  EvalReport copy = r;
  io::Json c = copy.config;
  c["run_config"] = io::sha256_hex(science_config(cfg_).dump());
  c["extractor"] = state_->vgg ? state_->vgg->source() : "none";
  set_config(copy, std::move(c));
  verify_report(copy);
  write_report(copy, dir_.root(), name);
  m.add_output(dir_.reports() / (name + ".json"));
  for (std::size_t i = 0; i < copy.runs.size(); ++i) {
    m.add_output(dir_.records() / name / (run_key(copy.runs[i], i) + ".jsonl"));
  }
}

void Workbench::save_grids(RunManifest& m, const EvalReport& r, const std::string& name) {
  const auto cols = static_cast<std::size_t>(cfg_.at("harness").at("grid_columns").get<int>());
  const Dataset eval = eval_set();
  std::map<std::uint64_t, Index> row_of;
  for (Index i = 0; i < eval.size(); ++i) row_of[eval.ids[static_cast<std::size_t>(i)]] = i;
  auto emit = [&](const std::string& file, const std::vector<std::uint64_t>& ids,
                  const std::vector<const AttackRun*>& runs) {
    if (ids.empty()) return;
    std::vector<Tensor<float>> clean;
    for (auto id : ids) clean.push_back(eval.image(row_of.at(id)));
    std::vector<std::vector<Tensor<float>>> rows;
    for (const AttackRun* run : runs) {
      std::vector<Tensor<float>> row;
      for (auto id : ids) {
        for (std::size_t k = 0; k < run->records.size(); ++k) {
          if (run->records[k].id == id) row.push_back(run->adversarial.item(static_cast<Index>(k)));
        }
      }
      rows.push_back(std::move(row));
    }
    const fs::path p = dir_.grids() / file;
    render_adversarial_grid(clean, rows, p);
    m.add_output(p);
  };

  if (r.kind == "targeted") {
    std::set<int> targets;
    for (const auto& run : r.runs) targets.insert(*run.target);
    std::vector<std::uint64_t> ids;
    for (Index i = 0; i < eval.size() && ids.size() < cols; ++i) {
      if (!targets.count(eval.labels[static_cast<std::size_t>(i)])) ids.push_back(eval.ids[static_cast<std::size_t>(i)]);
    }
    std::vector<std::string> models;
    for (const auto& run : r.runs) {
      if (std::find(models.begin(), models.end(), run.model) == models.end()) models.push_back(run.model);
    }
    for (const auto& model_name : models) {
      std::vector<const AttackRun*> runs;
      for (const auto& run : r.runs) {
        if (run.model == model_name) runs.push_back(&run);
      }
      emit(name + "_" + model_name + ".png", ids, runs);
    }
    return;
  }
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    const auto& run = r.runs[i];
    if (run.attack == "clean" || run.records.empty()) continue;
    if (r.kind == "transfer" && run.params.at("generator") != run.model) continue;
    if (r.kind == "ratio_sweep") continue;
    std::vector<std::uint64_t> ids;
    for (std::size_t k = 0; k < run.records.size() && ids.size() < cols; ++k) ids.push_back(run.records[k].id);
    emit(name + "_" + run_key(run, i) + ".png", ids, {&run});
  }
}

void Workbench::prepare_data() {
  RunManifest m(dir_, "prepare-data", cfg_);
  for (Split s : {Split::train, Split::test}) {
    const Dataset ds = cifar(s);
    m.add_input("cifar10-" + to_string(s), dataset_fingerprint(ds));
  }
  const auto& d = cfg_.at("data");
  if (d.at("build_robust").get<bool>()) m.add_input("cifar10r-train", dataset_fingerprint(feature_dataset(DatasetKind::cifar10r)));
  if (d.at("build_nonrobust").get<bool>()) {
    const Dataset nr = feature_dataset(DatasetKind::cifar10nr);
    m.add_input("cifar10nr-train", dataset_fingerprint(nr));
    if (nr.provenance.contains("dropped_count")) m.note("nonrobust_dropped", nr.provenance.at("dropped_count"));
  }
  for (const auto& [name, model] : state_->models) m.add_input("checkpoint:" + name, model->fingerprint());
  m.note("datasets", state_->cache_log);
  m.complete();
}

void Workbench::train(const std::vector<std::string>& models) {
  std::vector<std::string> list = names(cfg_.at("zoo").at("models"));
  if (!models.empty()) {
    list.clear();
    for (const auto& n : models) list.push_back(canonical(n));
  }
  RunManifest m(dir_, "train", cfg_);
  io::Json trained = io::Json::array();
  for (const auto& raw : list) {
    const std::string name = canonical(raw);
    const bool existed = has_model(name);
    Classifier& c = ensure_model(name);
    trained.push_back({{"model", name},
                       {"reused", existed},
                       {"clean_accuracy", opt_json(c.info().clean_accuracy)},
                       {"robust_accuracy", opt_json(c.info().robust_accuracy)}});
    m.add_input("checkpoint:" + name, c.fingerprint());
    m.add_output(dir_.checkpoint(name));
  }
  m.note("models", trained);
  m.note("datasets", state_->cache_log);
  m.complete();
}

void Workbench::probe_features() {
  RunManifest m(dir_, "probe-features", cfg_);
  const auto& p = cfg_.at("probe");
  Classifier& r = model(p.at("r_model").get<std::string>());
  Classifier& nr = model(p.at("nr_model").get<std::string>());
  MiningConfig mc;
  mc.epsilon = p.at("epsilon").get<double>();
  mc.steps = p.at("steps").get<int>();
  mc.step_size = p.at("step_size").get<double>();
  mc.r_target = class_index(p.at("r_target").get<std::string>());
  mc.nr_target = class_index(p.at("nr_target").get<std::string>());
  mc.want = p.at("want").get<Index>();
  const std::uint64_t seed = cfg_.at("seed").get<std::uint64_t>();
  const Dataset test = cifar(Split::test);
  const MiningResult mined = mine_disagreements(r, nr, test, mc, derive_seed(seed, "mining"));

  io::Json doc = {{"kind", "feature_probe"},
                  {"schema_version", kReportSchemaVersion},
                  {"mining", to_json(mc)},
                  {"found", mined.examples.size()},
                  {"attempted", mined.attempted},
                  {"shortfall", mined.shortfall},
                  {"judgments", nullptr}};
  std::vector<Classifier*> judges;
  for (const auto& n : names(p.at("judges"))) judges.push_back(&model(n));
  if (!mined.examples.empty()) doc["judgments"] = to_json(tabulate_judgments(mined.examples, judges));
  std::vector<Classifier*> summary;
  for (const auto& n : names(p.at("summary_models"))) summary.push_back(&model(n));
  doc["generalization"] = to_json(robustness_generalization_summary(
      summary, eval_set(), pgd_from(cfg_.at("harness").at("pgd")), derive_seed(seed, "pgd")));
  doc["generalization_evaluated"] = eval_set().size();
  const fs::path out = dir_.reports() / "feature_probe.json";
  io::write_json(out, doc);
  m.add_output(out);
  m.complete();
}

void Workbench::select_styles() {
  RunManifest m(dir_, "select-styles", cfg_);
  StyleAttacker& a = attacker();
  const fs::path out_dir = dir_.records() / "selection";
  fs::create_directories(out_dir);
  for (int c = 0; c < kNumClasses; ++c) {
    SelectionManifest man{a.config().selection, c, static_cast<Index>(a.config().attempts), a.seed(),
                          dataset_fingerprint(*state_->pool), a.ranked_sources(c)};
    const fs::path p = out_dir / (class_name(c) + ".json");
    io::write_json(p, to_json(man));
    m.add_output(p);
  }
  m.complete();
}

void Workbench::attack(const std::string& mode) {
  if (mode != "all" && mode != "untargeted" && mode != "targeted" && mode != "defense") {
    throw ValidationError("attack mode must be all, untargeted, targeted or defense");
  }
  RunManifest m(dir_, "attack", cfg_);
  m.note("mode", mode);
  const auto& h = cfg_.at("harness");
  const Dataset eval = eval_set();
  const std::uint64_t seed = cfg_.at("seed").get<std::uint64_t>();
  const PgdConfig pgd = pgd_from(h.at("pgd"));
  StyleAttacker& a = attacker();
  auto model_list = [&](const io::Json& arr) {
    std::vector<Classifier*> out;
    for (const auto& n : names(arr)) out.push_back(&model(n));
    return out;
  };
  if (mode == "all" || mode == "untargeted") {
    const auto models = model_list(h.at("models"));
    EvalReport rep = run_untargeted_style_attack(models, eval, a);
    for (Classifier* c : models) {
      Tensor<float> adv;
      auto recs = pgd_attack(*c, eval, pgd, std::nullopt, derive_seed(seed, "pgd"), &adv);
      rep.runs.push_back(make_run(c->info().name, "pgd", std::nullopt, io::Json::object(), std::move(recs), std::move(adv)));
    }
    io::Json c = rep.config;
    c["pgd"] = to_json(pgd);
    set_config(rep, std::move(c));
    save_report(m, rep, "untargeted");
    save_grids(m, rep, "untargeted");
  }
  if ((mode == "all" || mode == "targeted") && !h.at("targets").empty()) {
    const EvalReport rep = run_targeted_style_attack(model_list(h.at("models")), eval, classes(h.at("targets")), a);
    save_report(m, rep, "targeted");
    save_grids(m, rep, "targeted");
  }
  if (mode == "all" || mode == "defense") {
    std::vector<std::string> attacks;
    for (const auto& v : h.at("defense_attacks")) attacks.push_back(v.get<std::string>());
    const EvalReport rep = run_defense_eval(model_list(h.at("defenses")), eval, attacks, pgd, a, derive_seed(seed, "pgd"));
    save_report(m, rep, "defense");
  }
  m.complete();
}

void Workbench::sweep(const std::string& kind) {
  if (kind != "all" && kind != "weight" && kind != "ratio") throw ValidationError("sweep kind must be all, weight or ratio");
  RunManifest m(dir_, "sweep", cfg_);
  m.note("kind", kind);
  const auto& h = cfg_.at("harness");
  const Dataset eval = eval_set();
  StyleAttacker& a = attacker();
  if (kind == "all" || kind == "weight") {
    const EvalReport rep =
        sweep_style_weight(model(h.at("generator").get<std::string>()), eval, h.at("weights").get<std::vector<double>>(), a);
    save_report(m, rep, "weight_sweep");
    save_grids(m, rep, "weight_sweep");
  }
  if ((kind == "all" || kind == "ratio") && !h.at("ratios").empty() && !h.at("ratio_targets").empty()) {
    std::vector<std::pair<double, double>> ratios;
    for (const auto& r : h.at("ratios")) ratios.emplace_back(r[0].get<double>(), r[1].get<double>());
    std::vector<Classifier*> models;
    for (const auto& n : names(h.at("ratio_models"))) models.push_back(&model(n));
    const EvalReport rep = sweep_rnr_proportion(models, eval, ratios, classes(h.at("ratio_targets")), a);
    save_report(m, rep, "ratio_sweep");
  }
  m.complete();
}

void Workbench::transfer_matrix() {
  RunManifest m(dir_, "transfer-matrix", cfg_);
  const auto& h = cfg_.at("harness");
  std::vector<Classifier*> gens, vics;
  for (const auto& n : names(h.at("generators"))) gens.push_back(&model(n));
  for (const auto& n : names(h.at("victims"))) vics.push_back(&model(n));
  const EvalReport rep = transferability_matrix(gens, vics, eval_set(), attacker());
  save_report(m, rep, "transfer");
  save_grids(m, rep, "transfer");
  m.complete();
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::string pct(std::optional<double> v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
  return buf;
}

std::string fmt_number(const io::Json& v) {
  if (!v.is_number_float()) return v.dump();
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v.get<double>());
  return buf;
}

std::string row_label(const AttackRun& run) {
  std::string s = run.attack;
  if (run.target) s += " -> " + class_name(*run.target);
  for (const auto& [k, v] : run.params.items()) {
    if (k == "sources") continue;
    s += " " + k + "=" + (v.is_string() ? v.get<std::string>() : fmt_number(v));
  }
  return s;
}

std::string table(const std::vector<std::string>& cols, const std::vector<std::pair<std::string, std::vector<std::string>>>& rows) {
  std::size_t first = 0;
  for (const auto& [label, cells] : rows) first = std::max(first, label.size());
  std::vector<std::size_t> width(cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) {
    width[c] = cols[c].size();
    for (const auto& [label, cells] : rows) width[c] = std::max(width[c], cells[c].size());
  }
  std::ostringstream os;
  os << std::string(first, ' ');
  for (std::size_t c = 0; c < cols.size(); ++c) os << "  " << std::setw(static_cast<int>(width[c])) << cols[c];
  os << '\n';
  for (const auto& [label, cells] : rows) {
    os << std::left << std::setw(static_cast<int>(first)) << label << std::right;
    for (std::size_t c = 0; c < cols.size(); ++c) os << "  " << std::setw(static_cast<int>(width[c])) << cells[c];
    os << '\n';
  }
  return os.str();
}

std::string render_feature_probe(const io::Json& j) {
  std::ostringstream os;
  os << "== feature_probe ==\n";
  const auto& mining = j.at("mining");
  os << "mined " << j.at("found") << " of " << mining.at("want") << " wanted (" << j.at("attempted")
     << " seed images; R target " << mining.at("r_target").get<std::string>() << ", NR target "
     << mining.at("nr_target").get<std::string>() << ")" << (j.at("shortfall").get<bool>() ? " SHORTFALL" : "") << "\n\n";
  if (!j.at("judgments").is_null()) {
    std::vector<std::string> cols;
    for (int c = 0; c < kNumClasses; ++c) cols.push_back(class_name(c));
    std::vector<std::pair<std::string, std::vector<std::string>>> rows;
    for (const auto& r : j.at("judgments").at("rows")) {
      std::vector<std::string> cells;
      for (int c = 0; c < kNumClasses; ++c) cells.push_back(r.at("counts").at(class_name(c)).dump());
      rows.push_back({r.at("model").get<std::string>(), cells});
    }
    os << "class judgments over " << j.at("judgments").at("probe_size") << " probe images\n" << table(cols, rows) << '\n';
  }
  std::vector<std::string> cols;
  std::vector<std::string> acc, pgd;
  for (const auto& r : j.at("generalization")) {
    cols.push_back(r.at("model").get<std::string>());
    acc.push_back(pct(r.at("clean_accuracy").get<double>()));
    pgd.push_back(r.at("pgd_success").is_null() ? "n/a" : pct(r.at("pgd_success").get<double>()));
  }
  os << "accuracy and PGD success (%) over " << j.at("generalization_evaluated") << " test images\n"
     << table(cols, {{"clean accuracy", acc}, {"pgd success", pgd}});
  return os.str();
}

}  // namespace

std::string render_report(const EvalReport& r) {
  std::vector<std::string> models;
  for (const auto& run : r.runs) {
    if (std::find(models.begin(), models.end(), run.model) == models.end()) models.push_back(run.model);
  }
  std::vector<std::string> labels;
  for (const auto& run : r.runs) {
    if (run.attack == "clean") continue;
    const std::string l = row_label(run);
    if (std::find(labels.begin(), labels.end(), l) == labels.end()) labels.push_back(l);
  }
  std::vector<std::pair<std::string, std::vector<std::string>>> rows;
  std::vector<std::string> acc(models.size(), "");
  for (std::size_t c = 0; c < models.size(); ++c) {
    for (const auto& run : r.runs) {
      if (run.model == models[c] && !run.target && run.summary.evaluated > 0) {
        acc[c] = pct(run.summary.clean_accuracy());
        break;
      }
    }
  }
  if (std::any_of(acc.begin(), acc.end(), [](const std::string& s) { return !s.empty(); })) {
    for (auto& s : acc) {
      if (s.empty()) s = "-";
    }
    rows.push_back({"clean accuracy", acc});
  }
  for (const auto& l : labels) {
    std::vector<std::string> cells(models.size(), "-");
    for (const auto& run : r.runs) {
      if (run.attack == "clean" || row_label(run) != l) continue;
      const auto c = static_cast<std::size_t>(std::find(models.begin(), models.end(), run.model) - models.begin());
      cells[c] = pct(run.summary.success_rate) + " (" + std::to_string(run.summary.successes) + "/" +
                 std::to_string(run.summary.denominator) + ")";
    }
    rows.push_back({l + " success", cells});
  }
  if (r.kind == "targeted") {
    std::vector<std::string> cells;
    for (const auto& model_name : models) {
      Index s = 0, d = 0;
      for (const auto& run : r.runs) {
        if (run.model != model_name) continue;
        s += run.summary.successes;
        d += run.summary.denominator;
      }
      cells.push_back(pct(d ? std::optional<double>(static_cast<double>(s) / static_cast<double>(d)) : std::nullopt) +
                      " (" + std::to_string(s) + "/" + std::to_string(d) + ")");
    }
    rows.push_back({"total success", cells});
  }
  std::ostringstream os;
  os << "== " << r.kind << " ==\n";
  os << "config " << r.config_fingerprint.substr(0, 16) << "; success % (successes/denominator)\n";
  os << table(models, rows);
  return os.str();
}

std::string render_reports(const fs::path& run_dir) {
  const fs::path dir = run_dir / "reports";
  std::vector<fs::path> files;
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
  }
  if (files.empty()) {
    throw MissingPrerequisiteError("no reports found in " + dir.string() +
                                   "; run `styleadv attack`, `sweep`, `transfer-matrix` or `probe-features` first");
  }
  std::sort(files.begin(), files.end());
  std::string all;
  const fs::path rendered = dir / "rendered";
  fs::create_directories(rendered);
  for (const auto& f : files) {
    const std::string name = f.stem().string();
    const io::Json j = io::read_json(f);
    std::string text;
    if (j.value("kind", "") == "feature_probe") {
      text = render_feature_probe(j);
    } else {
      const EvalReport r = read_report(run_dir, name);
      verify_report(r);
      text = render_report(r);
    }
    io::write_text_atomic(rendered / (name + ".txt"), text);
    all += text + "\n";
  }
  return all;
}

// ---------------------------------------------------------------------------
// Command line

int run_cli(int argc, char** argv) {
  CLI::App app{"Style-transfer adversarial attack workbench"};
  app.require_subcommand(1);
  std::string config_path, run_dir;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "JSON config (or a run manifest to replay)");
  app.add_option("-s,--set", overrides, "Override a config value: dotted.path=value")->take_all();
  app.add_option("-o,--run-dir", run_dir, "Run directory (same as --set output_dir=...)");

  auto* prepare = app.add_subcommand("prepare-data", "Load CIFAR-10 and build the robust / non-robust datasets");
  auto* train = app.add_subcommand("train", "Train zoo models");
  std::vector<std::string> train_models;
  train->add_option("-m,--models", train_models, "Models to train (default: zoo.models)")->delimiter(',');
  auto* probe = app.add_subcommand("probe-features", "Mine R/NR disagreements and tabulate judgments");
  auto* select = app.add_subcommand("select-styles", "Rank style sources for every class");
  auto* attack = app.add_subcommand("attack", "Run style and PGD attacks");
  std::string mode = "all";
  attack->add_option("--mode", mode, "all, untargeted, targeted or defense");
  auto* sweep = app.add_subcommand("sweep", "Style-weight and R:NR ratio sweeps");
  std::string kind = "all";
  sweep->add_option("--kind", kind, "all, weight or ratio");
  auto* transfer = app.add_subcommand("transfer-matrix", "Transferability across models");
  auto* report = app.add_subcommand("report", "Render persisted reports as text tables");
  std::string report_dir;
  report->add_option("dir", report_dir, "Run directory (default: output_dir of the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const io::Json user = config_path.empty() ? io::Json::object() : read_config_file(config_path);
    if (!run_dir.empty()) overrides.push_back("output_dir=\"" + run_dir + "\"");
    const io::Json cfg = resolve_config(user, overrides);
    if (report->parsed()) {
      std::cout << render_reports(report_dir.empty() ? fs::path(cfg.at("output_dir").get<std::string>()) : fs::path(report_dir));
      return 0;
    }
    Workbench wb(cfg);
    if (prepare->parsed()) wb.prepare_data();
    if (train->parsed()) wb.train(train_models);
    if (probe->parsed()) wb.probe_features();
    if (select->parsed()) wb.select_styles();
    if (attack->parsed()) wb.attack(mode);
    if (sweep->parsed()) wb.sweep(kind);
    if (transfer->parsed()) wb.transfer_matrix();
    std::cout << "done: " << wb.run_dir().root().string() << '\n';
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace styleadv::workbench
