// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Criteria that need CIFAR-10 or the
// pretrained extractor weights fail with the missing prerequisite named.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fixtures.hpp"
#include "styleadv/rng.hpp"
#include "styleadv/runtime.hpp"
#include "styleadv/style_selector.hpp"
#include "styleadv/transfer_engine.hpp"
#include "styleadv/workbench.hpp"

namespace fs = std::filesystem;
using namespace styleadv;

namespace {

constexpr double kProbeReductionThreshold = 0.05;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

template <class T>
Tensor<T> random_tensor(const Shape& s, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<T> t(s);
  for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(lo + (hi - lo) * uniform01(rng));
  return t;
}

// ---------------------------------------------------------------------------
// 1. Loss oracles

long double oracle_l2(const Tensor<double>& a, const Tensor<double>& b) {
  long double s = 0;
  for (Index i = 0; i < a.numel(); ++i) {
    const long double d = static_cast<long double>(a[i]) - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

/// Style loss straight from activation maps: per-channel population mean and
/// floored standard deviation, then the sum of two L2 norms per layer.
long double oracle_style(const std::vector<Tensor<double>>& gen, const std::vector<Tensor<double>>& sty) {
  long double total = 0;
  for (std::size_t l = 0; l < gen.size(); ++l) {
    auto moments = [](const Tensor<double>& a, Index c) {
      const Index hw = a.dim(1) * a.dim(2);
      long double m = 0;
      for (Index k = 0; k < hw; ++k) m += a[c * hw + k];
      m /= hw;
      long double v = 0;
      for (Index k = 0; k < hw; ++k) v += (a[c * hw + k] - m) * (a[c * hw + k] - m);
      v /= hw;
      return std::pair{m, std::sqrt(std::max(v, static_cast<long double>(kVarianceFloor)))};
    };
    long double dm = 0, ds = 0;
    for (Index c = 0; c < gen[l].dim(0); ++c) {
      const auto [mg, sg] = moments(gen[l], c);
      const auto [ms, ss] = moments(sty[l], c);
      dm += (mg - ms) * (mg - ms);
      ds += (sg - ss) * (sg - ss);
    }
    total += std::sqrt(dm) + std::sqrt(ds);
  }
  return total;
}

Outcome loss_oracles() {
  Rng rng(20240101);
  auto vgg = VggExtractor<double>::random(5);
  double worst = 0.0, worst_arith = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    // Style loss over random activation maps for all five layers.
    std::vector<Tensor<double>> gen, sty;
    FeatureStats<double> fg, fs_;
    for (StyleLayer l : all_style_layers()) {
      const Index c = 1 + static_cast<Index>(uniform_index(rng, 8));
      const Index h = 1 + static_cast<Index>(uniform_index(rng, 6));
      const Index w = 1 + static_cast<Index>(uniform_index(rng, 6));
      gen.push_back(random_tensor<double>(Shape{c, h, w}, rng, -1.0, 3.0));
      sty.push_back(random_tensor<double>(Shape{c, h, w}, rng, -1.0, 3.0));
      fg.layers.push_back(channel_stats(l, gen.back()));
      fs_.layers.push_back(channel_stats(l, sty.back()));
    }
    const double ls = style_loss(fg, fs_);
    worst = std::max(worst, rel_err(ls, static_cast<double>(oracle_style(gen, sty))));

    // Content loss in pixel space and on the R22 map.
    const Index h = 4 + static_cast<Index>(uniform_index(rng, 6)), w = 4 + static_cast<Index>(uniform_index(rng, 6));
    const auto a = random_tensor<double>(Shape{3, h, w}, rng);
    const auto b = random_tensor<double>(Shape{3, h, w}, rng);
    const double lp = content_loss(vgg, a, b, ContentMode::pixel);
    worst = std::max(worst, rel_err(lp, static_cast<double>(oracle_l2(a, b))));
    const auto ma = vgg.extract(a, {}, true).content;
    const auto mb = vgg.extract(b, {}, true).content;
    const double lf = content_loss(vgg, a, b, ContentMode::feature_r22);
    worst = std::max(worst, rel_err(lf, static_cast<double>(oracle_l2(ma, mb))));

    // Weighted total is pure arithmetic.
    const double alpha = uniform01(rng) * 10, beta = uniform01(rng) * 1e5;
    worst_arith = std::max(worst_arith, rel_err(total_loss(lf, ls, alpha, beta), alpha * lf + beta * ls));
  }
  const bool ok = worst < 1e-6 && worst_arith < 1e-9;
  return {ok, fmt("200 trials; worst rel. error %.3g (tol 1e-6), arithmetic %.3g (tol 1e-9)", worst, worst_arith)};
}

// ---------------------------------------------------------------------------
// 2. Gradient check against central differences

Outcome gradient_correctness() {
  auto vgg = VggExtractor<double>::random(7);
  Rng rng(77);
  double worst = 0.0;
  for (ContentMode mode : {ContentMode::feature_r22, ContentMode::pixel}) {
    StylizationProblem<double> p;
    p.content = random_tensor<double>(Shape{3, 8, 8}, rng, 0.05, 0.95);
    p.style = random_tensor<double>(Shape{3, 8, 8}, rng, 0.05, 0.95);
    p.alpha = 1.0;
    p.beta = 2.0;
    p.content_mode = mode;
    const auto x = random_tensor<double>(Shape{3, 8, 8}, rng, 0.1, 0.9);
    StyleObjective<double> obj(vgg, p);
    Tensor<double> grad;
    obj.evaluate(x, &grad);
    const double h = 1e-6;
    for (int k = 0; k < 64; ++k) {
      const Index i = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(x.numel())));
      Tensor<double> xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double fd = (obj.evaluate(xp, nullptr).total - obj.evaluate(xm, nullptr).total) / (2 * h);
      const double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
      worst = std::max(worst, std::abs(fd - grad[i]) / scale);
    }
  }
  return {worst < 1e-3, fmt("3x8x8 double, 64 coordinates per content mode; worst rel. error %.3g (tol 1e-3)", worst)};
}

// ---------------------------------------------------------------------------
// 3. Fixed point and style-probe synthesis

Outcome stylization_fixed_point() {
  auto vgg = VggExtractor<float>::random(1);
  int plateau = 0, within = 0;
  const int n = 5;
  for (int k = 0; k < n; ++k) {
    StylizationProblem<float> p;
    p.content = testing::textured_image(100 + static_cast<std::uint64_t>(k));
    p.style = p.content;
    p.beta = 8e4;
    p.content_budget = content_budget_for(vgg, p.content, p.content_mode, 0.5, 100 + static_cast<std::uint64_t>(k));
    const auto r = stylize(vgg, p);
    plateau += r.stop_reason == StopReason::style_plateau;
    within += r.final_losses.content <= p.content_budget;
  }
  double worst = 0.0;
  for (int k = 0; k < n; ++k) {
    const auto style = testing::textured_image(200 + static_cast<std::uint64_t>(k));
    const std::uint64_t seed = 300 + static_cast<std::uint64_t>(k);
    const auto probe = synthesize_style_probe(vgg, style, seed);
    const auto target = vgg.extract(style, all_style_layers(), false).stats;
    const double start = style_loss(vgg.extract(noise_image<float>(style.shape(), seed), all_style_layers(), false).stats, target);
    const double end = style_loss(vgg.extract(probe, all_style_layers(), false).stats, target);
    worst = std::max(worst, end / start);
  }
  const bool ok = plateau == n && within == n && worst < kProbeReductionThreshold;
  std::ostringstream os;
  os << "I_S = I_C: " << plateau << "/" << n << " style_plateau, " << within << "/" << n
     << " within budget; probe worst ratio " << fmt("%.4f", worst) << " (< " << kProbeReductionThreshold
     << "); random extractor weights";
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 4-9. Desk-scale experiments

struct DeskScale {
  fs::path run_dir;
  fs::path data_root;
  int eval_size = 50;
  std::string missing;  // non-empty when a prerequisite is absent
  std::unique_ptr<workbench::Workbench> wb;

  io::Json config() const {
    return {{"output_dir", run_dir.string()},
            {"data", {{"root", data_root.string()}}},
            {"zoo", {{"models", {"RNB", "NRB", "VGG19B", "PGDAT", "IAT"}}}},
            {"selector", {{"kind", "confidence_weighted"}, {"w_r", 0.5}, {"w_nr", 0.5}}},
            {"harness",
             {{"eval_size", eval_size},
              {"models", {"RNB"}},
              {"weights", {1e4, 4e4, 8e4}},
              {"defenses", {"PGDAT"}},
              {"generators", {"RNB"}},
              {"victims", {"VGG19B"}}}},
            {"probe", {{"judges", {"RNB", "IAT", "PGDAT"}}, {"summary_models", {"RNB", "IAT", "PGDAT"}}}}};
  }

  bool cifar_present() const {
    return fs::is_directory(data_root / kCifarDirName) || fs::exists(data_root / kCifarArchiveName);
  }

  static bool weights_present() {
    try {
      VggExtractor<float>::load_default();
      return true;
    } catch (const std::exception&) {
      return false;
    }
  }

  /// Names what is missing for a criterion, or returns empty.
  std::string prerequisites(bool needs_weights) const {
    std::string m;
    if (!cifar_present()) m = "CIFAR-10 not found under " + data_root.string();
    if (needs_weights && !weights_present()) {
      m += std::string(m.empty() ? "" : "; ") + "pretrained VGG19 weights not found (set " + kVggWeightsEnv + ")";
    }
    return m;
  }

  workbench::Workbench& bench() {
    if (!wb) wb = std::make_unique<workbench::Workbench>(workbench::resolve_config(config()));
    return *wb;
  }
};

Outcome missing(const std::string& why) { return {false, "prerequisite missing: " + why}; }

Outcome desk_untargeted(DeskScale& d) {
  if (auto m = d.prerequisites(true); !m.empty()) return missing(m);
  auto& wb = d.bench();
  const double acc = evaluate_accuracy(wb.ensure_model("RNB"), wb.cifar(Split::test));
  wb.attack("untargeted");
  const auto rate = find_rate(read_report(d.run_dir, "untargeted"), "RNB", "style");
  const bool ok = acc >= 0.85 && rate && *rate >= 0.60;
  return {ok, fmt("RNB clean accuracy %.2f%% (>= 85), style success %.2f%% (>= 60)", 100 * acc, 100 * rate.value_or(0))};
}

Outcome desk_defense(DeskScale& d) {
  if (auto m = d.prerequisites(true); !m.empty()) return missing(m);
  auto& wb = d.bench();
  wb.ensure_model("PGDAT");
  wb.attack("defense");
  const EvalReport r = read_report(d.run_dir, "defense");
  const auto style = find_rate(r, "PGDAT", "style"), pgd = find_rate(r, "PGDAT", "pgd");
  const bool ok = style && pgd && *style >= *pgd + 0.05;
  return {ok, fmt("PGDAT style %.2f%% vs PGD %.2f%% (margin >= 5 points)", 100 * style.value_or(0), 100 * pgd.value_or(0))};
}

Outcome desk_weight_trend(DeskScale& d) {
  if (auto m = d.prerequisites(true); !m.empty()) return missing(m);
  auto& wb = d.bench();
  wb.ensure_model("RNB");
  wb.sweep("weight");
  const EvalReport r = read_report(d.run_dir, "weight_sweep");
  std::vector<double> s;
  for (double b : {1e4, 4e4, 8e4}) s.push_back(find_rate(r, "RNB", "style", io::Json{{"beta", b}}).value_or(0.0));
  int inversions = 0;
  for (std::size_t i = 1; i < s.size(); ++i) inversions += s[i] < s[i - 1];
  const bool ok = s[2] >= s[0] + 0.10 && inversions <= 1;
  return {ok, fmt("success at 1e4/4e4/8e4: %.2f / %.2f / %.2f %%", 100 * s[0], 100 * s[1], 100 * s[2]) +
                  ", inversions " + std::to_string(inversions)};
}

Outcome desk_transfer(DeskScale& d) {
  if (auto m = d.prerequisites(true); !m.empty()) return missing(m);
  auto& wb = d.bench();
  wb.ensure_model("RNB");
  wb.ensure_model("VGG19B");
  wb.transfer_matrix();
  const auto rate = find_rate(read_report(d.run_dir, "transfer"), "VGG19B", "style", io::Json{{"generator", "RNB"}});
  return {rate && *rate >= 0.50, fmt("RNB -> VGG19B style success %.2f%% (>= 50)", 100 * rate.value_or(0))};
}

Outcome desk_nonrobust(DeskScale& d) {
  if (auto m = d.prerequisites(false); !m.empty()) return missing(m);
  auto& wb = d.bench();
  const double acc = evaluate_accuracy(wb.ensure_model("NRB"), wb.cifar(Split::test));
  return {acc >= 0.55, fmt("NRB accuracy on the clean test split %.2f%% (>= 55)", 100 * acc)};
}

Outcome desk_probe_orderings(DeskScale& d) {
  if (auto m = d.prerequisites(false); !m.empty()) return missing(m);
  auto& wb = d.bench();
  for (const char* n : {"RB", "NRB", "RNB", "IAT", "PGDAT"}) wb.ensure_model(n);
  wb.probe_features();
  const io::Json j = io::read_json(d.run_dir / "reports" / "feature_probe.json");
  if (j.at("judgments").is_null()) return {false, "no disagreement images were mined"};
  const std::string r_target = j.at("mining").at("r_target").get<std::string>();
  std::map<std::string, double> frac, pgd;
  const double n = j.at("judgments").at("probe_size").get<double>();
  for (const auto& row : j.at("judgments").at("rows")) {
    frac[row.at("model").get<std::string>()] = row.at("counts").at(r_target).get<double>() / n;
  }
  for (const auto& row : j.at("generalization")) {
    pgd[row.at("model").get<std::string>()] = row.at("pgd_success").is_null() ? 0.0 : row.at("pgd_success").get<double>();
  }
  const bool ok = frac["PGDAT"] > frac["RNB"] && frac["IAT"] > frac["RNB"] && pgd["RNB"] > pgd["IAT"] &&
                  pgd["RNB"] > pgd["PGDAT"];
  std::ostringstream os;
  os << r_target << " share RNB/IAT/PGDAT " << fmt("%.3f/%.3f/%.3f", frac["RNB"], frac["IAT"], frac["PGDAT"])
     << "; PGD success " << fmt("%.3f/%.3f/%.3f", pgd["RNB"], pgd["IAT"], pgd["PGDAT"]);
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 10. Accounting and determinism on a synthetic CIFAR-10 layout

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Outcome accounting_and_determinism() {
  const fs::path root = fs::temp_directory_path() / "styleadv_acceptance_determinism";
  fs::remove_all(root);
  testing::write_synthetic_cifar(root / "data");
  const char* prev = std::getenv("STYLEADV_CACHE");
  const std::string saved = prev ? prev : "";
  setenv("STYLEADV_CACHE", (root / "cache").c_str(), 1);
  Outcome out;
  try {
    const io::Json cfg = {
        {"output_dir", (root / "a").string()},
        {"data",
         {{"root", (root / "data").string()},
          {"train_subset", 300},
          {"test_subset", 100},
          {"robust", {{"subset", 20}, {"steps", 5}}},
          {"nonrobust", {{"subset", 20}, {"steps", 5}, {"epsilon", 0.3}}}}},
        {"zoo",
         {{"models", {"RNB", "RB", "NRB"}},
          {"width", 0.0625},
          {"train", {{"epochs", 1}, {"batch_size", 50}}},
          {"pgd", {{"steps", 1}}},
          {"robust_probe_size", 10}}},
        {"selector", {{"pool_size", 8}, {"probe", {{"max_iters", 5}}}}},
        {"engine", {{"extractor", "random"}, {"max_iters", 5}}},
        {"harness",
         {{"attempts", 2},
          {"eval_size", 10},
          {"models", {"RNB", "NRB"}},
          {"targets", {"cat"}},
          {"weights", {1e4, 8e4}},
          {"ratios", {{5, 5}}},
          {"ratio_targets", {"ship"}},
          {"ratio_models", {"RNB"}},
          {"defenses", {"RB"}},
          {"generators", {"RNB"}},
          {"victims", {"RNB", "NRB"}},
          {"pgd", {{"steps", 3}}}}}};
    {
      workbench::Workbench a(workbench::resolve_config(cfg));
      a.train({"RNB", "RB", "NRB"});
      a.attack();
      a.sweep();
      a.transfer_matrix();
    }
    int reports = 0, runs = 0;
    for (const char* name : {"untargeted", "targeted", "defense", "weight_sweep", "ratio_sweep", "transfer"}) {
      const EvalReport r = read_report(root / "a", name);
      verify_report(r);
      for (const auto& run : r.runs) {
        if (summarize(run.records) != run.summary) throw FormatError(std::string(name) + ": aggregate mismatch");
      }
      ++reports;
      runs += static_cast<int>(r.runs.size());
    }
    const io::Json manifest = workbench::read_config_file(root / "a" / "config" / "manifest-attack.json");
    fs::create_directories(root / "b");
    fs::copy(root / "a" / "checkpoints", root / "b" / "checkpoints");
    {
      workbench::Workbench b(workbench::resolve_config(manifest, {"output_dir=\"" + (root / "b").string() + "\""}));
      b.attack();
    }
    int files = 0, differing = 0;
    for (const char* name : {"untargeted", "targeted", "defense"}) {
      for (const auto& e : fs::directory_iterator(root / "a" / "records" / name)) {
        ++files;
        differing += slurp(e.path()) != slurp(root / "b" / "records" / name / e.path().filename());
      }
    }
    std::ostringstream os;
    os << reports << " reports / " << runs << " runs recomputed exactly; replay from manifest: " << files - differing
       << "/" << files << " record files identical (synthetic CIFAR layout, random extractor)";
    out = {differing == 0 && files > 0, os.str()};
  } catch (const std::exception& e) {
    out = {false, std::string("error: ") + e.what()};
  }
  if (saved.empty()) {
    unsetenv("STYLEADV_CACHE");
  } else {
    setenv("STYLEADV_CACHE", saved.c_str(), 1);
  }
  fs::remove_all(root);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  DeskScale desk;
  desk.run_dir = cache_root() / "acceptance";
  desk.data_root = cache_root() / "cifar10";
  app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 10));
  app.add_option("--run-dir", desk.run_dir, "Run directory for the desk-scale criteria");
  app.add_option("--data-root", desk.data_root, "Directory holding CIFAR-10");
  app.add_option("--eval-size", desk.eval_size, "Evaluation images for the desk-scale criteria")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  runtime::set_strict_determinism(true);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"loss oracle equivalence", loss_oracles},
      {"gradient correctness", gradient_correctness},
      {"stylization fixed point and style probe", stylization_fixed_point},
      {"desk-scale untargeted attack", [&] { return desk_untargeted(desk); }},
      {"defense ordering", [&] { return desk_defense(desk); }},
      {"style-weight trend", [&] { return desk_weight_trend(desk); }},
      {"transferability floor", [&] { return desk_transfer(desk); }},
      {"non-robust features phenomenon", [&] { return desk_nonrobust(desk); }},
      {"feature-probe orderings", [&] { return desk_probe_orderings(desk); }},
      {"accounting and determinism", accounting_and_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("[%s] %2d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
