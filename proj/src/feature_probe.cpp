#include "styleadv/feature_probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "styleadv/nn/loss.hpp"
#include "styleadv/rng.hpp"

namespace styleadv {

namespace {

void validate(const MiningConfig& c) {
  if (!(c.epsilon > 0.0)) throw ValidationError("mining epsilon must be positive");
  if (c.steps < 1) throw ValidationError("mining needs at least one step");
  if (!(c.step_size > 0.0)) throw ValidationError("mining step size must be positive");
  if (c.want < 0) throw ValidationError("mining count must be non-negative");
  if (c.batch_size < 1) throw ValidationError("mining batch size must be positive");
  class_name(c.r_target);
  class_name(c.nr_target);
  if (c.r_target == c.nr_target) throw ValidationError("mining needs two different target classes");
}

double linf(const float* a, const float* b, Index n) {
  double m = 0.0;
  for (Index i = 0; i < n; ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

std::string pad(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : std::string(w - s.size(), ' ') + s;
}

}  // namespace

io::Json to_json(const MiningConfig& c) {
  return {{"epsilon", c.epsilon},
          {"steps", c.steps},
          {"step_size", c.step_size},
          {"r_target", class_name(c.r_target)},
          {"nr_target", class_name(c.nr_target)},
          {"want", c.want}};
}

MiningResult mine_disagreements(Classifier& r_model, Classifier& nr_model, const Dataset& seed_ds,
                                const MiningConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  MiningResult out;
  out.want = cfg.want;
  if (cfg.want == 0) return out;

  std::vector<Index> rows = seed_ds.rows_by_class()[static_cast<std::size_t>(cfg.r_target)];
  Rng rng(derive_seed(seed, "mining-order"));
  shuffle(rows.begin(), rows.end(), rng);

  const Index per = 3 * 32 * 32;
  const auto eps = static_cast<float>(cfg.epsilon);
  const auto step = static_cast<float>(cfg.step_size);
  std::size_t next = 0;
  while (static_cast<Index>(out.examples.size()) < cfg.want && next < rows.size()) {
    const std::size_t take = std::min(rows.size() - next, static_cast<std::size_t>(cfg.batch_size));
    std::vector<Index> batch_rows(rows.begin() + static_cast<std::ptrdiff_t>(next),
                                  rows.begin() + static_cast<std::ptrdiff_t>(next + take));
    next += take;
    out.attempted += static_cast<Index>(take);
    const Dataset part = seed_ds.select(batch_rows);
    const Index n = part.size();
    const Tensor<float>& x = part.images;
    Tensor<float> adv = x;
    const std::vector<int> nr_labels(static_cast<std::size_t>(n), cfg.nr_target);

    auto r_pred = r_model.predict(adv);
    auto nr_pred = nr_model.predict(adv);
    std::vector<char> active(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < active.size(); ++i) active[i] = r_pred[i] == cfg.r_target && nr_pred[i] != cfg.nr_target;

    for (int s = 0; s < cfg.steps; ++s) {
      if (std::none_of(active.begin(), active.end(), [](char a) { return a != 0; })) break;
      const Tensor<float> g = nr_model.input_gradient(
          adv, [&](const Tensor<float>& l) { return nn::cross_entropy(l, nr_labels).grad; });
      Tensor<float> trial = adv;
      for (Index i = 0; i < n; ++i) {
        if (!active[static_cast<std::size_t>(i)]) continue;
        for (Index k = i * per; k < (i + 1) * per; ++k) {
          const float sg = g[k] > 0.0f ? 1.0f : (g[k] < 0.0f ? -1.0f : 0.0f);
          const float v = trial[k] - step * sg;
          trial[k] = std::clamp(v, std::max(0.0f, x[k] - eps), std::min(1.0f, x[k] + eps));
        }
      }
      r_pred = r_model.predict(trial);
      nr_pred = nr_model.predict(trial);
      for (Index i = 0; i < n; ++i) {
        const auto u = static_cast<std::size_t>(i);
        if (!active[u]) continue;
        if (r_pred[u] != cfg.r_target) {
          active[u] = 0;
          continue;
        }
        std::copy(trial.data() + i * per, trial.data() + (i + 1) * per, adv.data() + i * per);
        if (nr_pred[u] == cfg.nr_target) active[u] = 0;
      }
    }

    r_pred = r_model.predict(adv);
    nr_pred = nr_model.predict(adv);
    for (Index i = 0; i < n && static_cast<Index>(out.examples.size()) < cfg.want; ++i) {
      const auto u = static_cast<std::size_t>(i);
      if (r_pred[u] != cfg.r_target || nr_pred[u] != cfg.nr_target) continue;
      out.examples.push_back({adv.item(i), part.ids[u], r_pred[u], nr_pred[u],
                              linf(adv.data() + i * per, x.data() + i * per, per)});
    }
  }
  out.shortfall = static_cast<Index>(out.examples.size()) < cfg.want;
  return out;
}

Tensor<float> probe_images(const std::vector<DisagreementExample>& probe) {
  std::vector<Tensor<float>> items;
  items.reserve(probe.size());
  for (const auto& e : probe) items.push_back(e.image);
  return stack(items);
}

double JudgmentTable::fraction(std::size_t model, int cls) const {
  if (probe_size == 0) throw ValidationError("empty judgment table");
  return static_cast<double>(counts.at(model).at(static_cast<std::size_t>(cls))) / static_cast<double>(probe_size);
}

JudgmentTable tabulate_judgments(const std::vector<DisagreementExample>& probe,
                                 const std::vector<Classifier*>& models) {
  if (probe.empty()) throw ValidationError("cannot tabulate an empty probe set");
  if (models.empty()) throw ValidationError("no models to tabulate");
  const Tensor<float> images = probe_images(probe);
  JudgmentTable t;
  t.probe_size = static_cast<Index>(probe.size());
  for (Classifier* m : models) {
    std::array<Index, kNumClasses> row{};
    for_each_batch(images.dim(0), 256, [&](Index b, Index e) {
      for (int p : m->predict(images.slice(b, e))) ++row[static_cast<std::size_t>(p)];
    });
    t.models.push_back(m->info().name);
    t.counts.push_back(row);
  }
  return t;
}

io::Json to_json(const JudgmentTable& t) {
  io::Json rows = io::Json::array();
  for (std::size_t m = 0; m < t.models.size(); ++m) {
    io::Json counts = io::Json::object();
    for (int c = 0; c < kNumClasses; ++c) counts[std::string(class_name(c))] = t.counts[m][static_cast<std::size_t>(c)];
    rows.push_back({{"model", t.models[m]}, {"counts", counts}});
  }
  return {{"probe_size", t.probe_size}, {"rows", rows}};
}

std::string render_text(const JudgmentTable& t) {
  std::ostringstream os;
  os << pad("model", 8);
  for (int c = 0; c < kNumClasses; ++c) os << pad(std::string(class_name(c)), 11);
  os << '\n';
  for (std::size_t m = 0; m < t.models.size(); ++m) {
    os << pad(t.models[m], 8);
    for (Index v : t.counts[m]) os << pad(std::to_string(v), 11);
    os << '\n';
  }
  os << "probe size " << t.probe_size << '\n';
  return os.str();
}

std::vector<GeneralizationRow> robustness_generalization_summary(const std::vector<Classifier*>& models,
                                                                 const Dataset& clean_ds, const PgdConfig& pgd,
                                                                 std::uint64_t seed) {
  if (clean_ds.split != Split::test) throw ValidationError("generalization summary needs a test split");
  std::vector<std::uint64_t> seeds(clean_ds.ids.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = derive_seed(seed, clean_ds.ids[i]);

  std::vector<GeneralizationRow> rows;
  for (Classifier* m : models) {
    GeneralizationRow row;
    row.model = m->info().name;
    row.evaluated = clean_ds.size();
    for_each_batch(clean_ds.size(), 128, [&](Index b, Index e) {
      const Tensor<float> x = clean_ds.images.slice(b, e);
      const std::vector<int> y(clean_ds.labels.begin() + b, clean_ds.labels.begin() + e);
      const auto pred = m->predict(x);
      std::vector<Index> hit;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == y[i]) hit.push_back(static_cast<Index>(i));
      }
      row.correct += static_cast<Index>(hit.size());
      if (hit.empty()) return;
      std::vector<Tensor<float>> xs;
      std::vector<int> ys;
      std::vector<std::uint64_t> ss;
      for (Index i : hit) {
        xs.push_back(x.item(i));
        ys.push_back(y[static_cast<std::size_t>(i)]);
        ss.push_back(seeds[static_cast<std::size_t>(b + i)]);
      }
      const auto after = m->predict(pgd_perturb(*m, stack(xs), ys, pgd, false, ss));
      for (std::size_t i = 0; i < after.size(); ++i) row.pgd_successes += after[i] != ys[i];
    });
    row.clean_accuracy = row.evaluated ? static_cast<double>(row.correct) / static_cast<double>(row.evaluated) : 0.0;
    row.zero_denominator = row.correct == 0;
    if (!row.zero_denominator) {
      row.pgd_success = static_cast<double>(row.pgd_successes) / static_cast<double>(row.correct);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

io::Json to_json(const std::vector<GeneralizationRow>& rows) {
  io::Json out = io::Json::array();
  for (const auto& r : rows) {
    out.push_back({{"model", r.model},
                   {"clean_accuracy", r.clean_accuracy},
                   {"evaluated", r.evaluated},
                   {"correct", r.correct},
                   {"pgd_successes", r.pgd_successes},
                   {"pgd_success", r.pgd_success ? io::Json(*r.pgd_success) : io::Json(nullptr)},
                   {"zero_denominator", r.zero_denominator}});
  }
  return out;
}

std::string render_text(const std::vector<GeneralizationRow>& rows) {
  std::ostringstream os;
  os << pad("", 16);
  for (const auto& r : rows) os << pad(r.model, 9);
  os << '\n' << pad("clean accuracy", 16);
  char buf[32];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * r.clean_accuracy);
    os << pad(buf, 9);
  }
  os << '\n' << pad("pgd success", 16);
  for (const auto& r : rows) {
    if (r.pgd_success) {
      std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *r.pgd_success);
      os << pad(buf, 9);
    } else {
      os << pad("n/a", 9);
    }
  }
  os << '\n';
  return os.str();
}

}  // namespace styleadv
