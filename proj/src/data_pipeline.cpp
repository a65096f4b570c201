#include "styleadv/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <regex>

#include "styleadv/nn/loss.hpp"
#include "styleadv/training.hpp"

namespace styleadv {
namespace {

double row_norm(const float* p, Index n) {
  double s = 0.0;
  for (Index k = 0; k < n; ++k) s += static_cast<double>(p[k]) * p[k];
  return std::sqrt(s);
}

std::vector<double> row_distances(const Tensor<float>& ra, const Tensor<float>& rb) {
  const Index n = ra.dim(0), f = ra.dim(1);
  std::vector<double> d(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Index k = 0; k < f; ++k) {
      const double diff = static_cast<double>(ra[i * f + k]) - rb[i * f + k];
      s += diff * diff;
    }
    d[static_cast<std::size_t>(i)] = std::sqrt(s);
  }
  return d;
}

Tensor<float> initial_images(const Dataset& base, RobustInit init, std::uint64_t seed) {
  Tensor<float> x = base.images;
  if (init == RobustInit::self) return x;
  const Index n = base.size(), per = x.shape().tail().numel();
  for (Index i = 0; i < n; ++i) {
    Rng rng(derive_seed(derive_seed(seed, "robust-init"), base.ids[static_cast<std::size_t>(i)]));
    if (init == RobustInit::noise) {
      for (Index k = 0; k < per; ++k) x[i * per + k] = static_cast<float>(uniform01(rng));
    } else if (n > 1) {
      auto j = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(n - 1)));
      if (j >= i) ++j;
      x.set_item(i, base.image(j));
    }
  }
  return x;
}

}  // namespace

std::string to_string(RobustInit i) {
  switch (i) {
    case RobustInit::other_image: return "other_image";
    case RobustInit::noise: return "noise";
    case RobustInit::self: return "self";
  }
  return "?";
}

RobustInit parse_robust_init(std::string_view s) {
  for (auto i : {RobustInit::other_image, RobustInit::noise, RobustInit::self}) {
    if (to_string(i) == s) return i;
  }
  throw ValidationError("unknown robust initialization '" + std::string(s) + "' (other_image, noise, self)");
}

std::string to_string(TargetRule r) { return r == TargetRule::rotate ? "rotate" : "uniform"; }

TargetRule parse_target_rule(std::string_view s) {
  if (s == "rotate") return TargetRule::rotate;
  if (s == "uniform") return TargetRule::uniform;
  throw ValidationError("unknown target rule '" + std::string(s) + "' (rotate, uniform)");
}

std::vector<double> representation_distances(Classifier& model, const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) throw ShapeError("representation_distances: batches differ in shape");
  if (a.dim(0) == 0) return {};
  return row_distances(model.representation(a), model.representation(b));
}

Dataset construct_robust_dataset(const Dataset& base, Classifier& robust_model, const RobustConfig& cfg,
                                 std::uint64_t seed) {
  if (cfg.steps < 0) throw ValidationError("robust construction steps must be non-negative");
  if (!(cfg.step_size > 0.0)) throw ValidationError("robust construction step size must be positive");
  base.validate();

  Dataset out = base;
  out.kind = DatasetKind::cifar10r;
  out.images = initial_images(base, cfg.init, seed);
  const Index n = base.size(), per = base.images.shape().tail().numel();
  std::vector<double> start(static_cast<std::size_t>(n)), best(static_cast<std::size_t>(n));
  const auto step = static_cast<float>(cfg.step_size);

  for_each_batch(n, cfg.batch_size, [&](Index lo, Index hi) {
    const Index m = hi - lo;
    const Tensor<float> target = robust_model.representation(base.images.slice(lo, hi));
    Tensor<float> x = out.images.slice(lo, hi);
    Tensor<float> best_x = x;
    auto d0 = row_distances(robust_model.representation(x), target);
    std::copy(d0.begin(), d0.end(), start.begin() + lo);
    std::vector<double> best_d = d0;
    for (int s = 0; s < cfg.steps; ++s) {
      std::vector<double> cur(static_cast<std::size_t>(m));
      Tensor<float> g = robust_model.representation_gradient(x, [&](const Tensor<float>& r) {
        Tensor<float> d(r.shape());
        for (Index k = 0; k < r.numel(); ++k) d[k] = 2.0f * (r[k] - target[k]);
        cur = row_distances(r, target);
        return d;
      });
      for (Index i = 0; i < m; ++i) {
        if (cur[static_cast<std::size_t>(i)] < best_d[static_cast<std::size_t>(i)]) {
          best_d[static_cast<std::size_t>(i)] = cur[static_cast<std::size_t>(i)];
          std::copy(x.data() + i * per, x.data() + (i + 1) * per, best_x.data() + i * per);
        }
        const double norm = row_norm(g.data() + i * per, per);
        if (norm == 0.0) continue;
        const float scale = step / static_cast<float>(norm);
        float* xi = x.data() + i * per;
        const float* gi = g.data() + i * per;
        for (Index k = 0; k < per; ++k) xi[k] = std::clamp(xi[k] - scale * gi[k], 0.0f, 1.0f);
      }
    }
    if (cfg.steps > 0) {
      const auto last = row_distances(robust_model.representation(x), target);
      for (Index i = 0; i < m; ++i) {
        if (last[static_cast<std::size_t>(i)] < best_d[static_cast<std::size_t>(i)]) {
          best_d[static_cast<std::size_t>(i)] = last[static_cast<std::size_t>(i)];
          std::copy(x.data() + i * per, x.data() + (i + 1) * per, best_x.data() + i * per);
        }
      }
    }
    std::copy(best_d.begin(), best_d.end(), best.begin() + lo);
    std::copy(best_x.span().begin(), best_x.span().end(), out.images.data() + lo * per);
  });

  Index decreased = 0;
  double mean_start = 0.0, mean_final = 0.0;
  for (Index i = 0; i < n; ++i) {
    decreased += best[static_cast<std::size_t>(i)] < start[static_cast<std::size_t>(i)];
    mean_start += start[static_cast<std::size_t>(i)];
    mean_final += best[static_cast<std::size_t>(i)];
  }
  if (n > 0) {
    mean_start /= static_cast<double>(n);
    mean_final /= static_cast<double>(n);
  }
  io::Json warnings = io::Json::array();
  if (robust_model.info().regime == Regime::standard) {
    warnings.push_back("source model '" + robust_model.info().name +
                       "' was trained with the standard regime; the result is not restricted to robust features");
  }
  out.provenance = {{"source", "constructed"},
                    {"construction", "robust"},
                    {"seed", seed},
                    {"steps", cfg.steps},
                    {"step_size", cfg.step_size},
                    {"init", to_string(cfg.init)},
                    {"representation", "penultimate"},
                    {"source_model", robust_model.info().name},
                    {"source_model_regime", to_string(robust_model.info().regime)},
                    {"source_model_fingerprint", robust_model.fingerprint()},
                    {"base_fingerprint", dataset_fingerprint(base)},
                    {"base_provenance", base.provenance},
                    {"mean_initial_distance", mean_start},
                    {"mean_final_distance", mean_final},
                    {"fraction_decreased", n ? static_cast<double>(decreased) / static_cast<double>(n) : 0.0},
                    {"warnings", std::move(warnings)}};
  out.validate();
  return out;
}

std::vector<int> nonrobust_targets(const Dataset& base, const NonRobustConfig& cfg, std::uint64_t seed) {
  if (cfg.targets) {
    if (static_cast<Index>(cfg.targets->size()) != base.size()) {
      throw ValidationError("explicit target list has " + std::to_string(cfg.targets->size()) +
                            " entries for " + std::to_string(base.size()) + " examples");
    }
    for (int t : *cfg.targets) {
      if (t < 0 || t >= kNumClasses) throw ValidationError("explicit target class out of range");
    }
    return *cfg.targets;
  }
  std::vector<int> t(base.labels.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (cfg.rule == TargetRule::rotate) {
      t[i] = (base.labels[i] + 1) % kNumClasses;
    } else {
      Rng rng(derive_seed(derive_seed(seed, "nr-target"), base.ids[i]));
      t[i] = static_cast<int>(uniform_index(rng, kNumClasses));
    }
  }
  return t;
}

Dataset construct_nonrobust_dataset(const Dataset& base, Classifier& standard_model, const NonRobustConfig& cfg,
                                    std::uint64_t seed) {
  if (!(cfg.epsilon > 0.0)) {
    throw ValidationError("non-robust construction needs epsilon > 0; epsilon " + std::to_string(cfg.epsilon) +
                          " would relabel unperturbed images");
  }
  if (cfg.steps < 1) throw ValidationError("non-robust construction needs at least one attack step");
  if (!(cfg.step_size > 0.0)) throw ValidationError("non-robust construction step size must be positive");
  base.validate();

  const auto targets = nonrobust_targets(base, cfg, seed);
  PgdConfig pgd{cfg.epsilon, cfg.steps, cfg.step_size, true};
  Tensor<float> adv(base.images.shape());
  std::vector<int> pred(static_cast<std::size_t>(base.size()));
  for_each_batch(base.size(), cfg.batch_size, [&](Index lo, Index hi) {
    std::vector<int> t(targets.begin() + lo, targets.begin() + hi);
    std::vector<std::uint64_t> seeds;
    for (Index i = lo; i < hi; ++i) {
      seeds.push_back(derive_seed(derive_seed(seed, "nr-start"), base.ids[static_cast<std::size_t>(i)]));
    }
    const Tensor<float> a = pgd_perturb(standard_model, base.images.slice(lo, hi), t, pgd, true, seeds);
    const auto p = standard_model.predict(a);
    std::copy(a.span().begin(), a.span().end(), adv.data() + lo * adv.shape().tail().numel());
    std::copy(p.begin(), p.end(), pred.begin() + lo);
  });

  std::vector<LabeledExample> kept;
  io::Json dropped = io::Json::array();
  for (Index i = 0; i < base.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (pred[k] != targets[k]) {
      dropped.push_back(base.ids[k]);
      continue;
    }
    kept.push_back({adv.item(i), targets[k], base.ids[k]});
  }
  io::Json prov = {{"source", "constructed"},
                   {"construction", "nonrobust"},
                   {"seed", seed},
                   {"epsilon", cfg.epsilon},
                   {"steps", cfg.steps},
                   {"step_size", cfg.step_size},
                   {"target_rule", cfg.targets ? std::string("explicit") : to_string(cfg.rule)},
                   {"source_model", standard_model.info().name},
                   {"source_model_regime", to_string(standard_model.info().regime)},
                   {"source_model_fingerprint", standard_model.fingerprint()},
                   {"base_fingerprint", dataset_fingerprint(base)},
                   {"base_provenance", base.provenance},
                   {"attempted", base.size()},
                   {"dropped_count", dropped.size()},
                   {"dropped_ids", std::move(dropped)}};
  return make_dataset(DatasetKind::cifar10nr, base.split, kept, std::move(prov));
}

namespace {

struct NpyArray {
  std::string descr;
  std::vector<Index> shape;
  std::vector<std::uint8_t> data;
};

NpyArray read_npy(const std::filesystem::path& path) {
  const auto bytes = io::read_bytes(path);
  if (bytes.size() < 10 || std::memcmp(bytes.data(), "\x93NUMPY", 6) != 0) {
    throw FormatError(path.string() + " is not a NumPy .npy file");
  }
  const int major = bytes[6];
  std::size_t header_len = 0, offset = 0;
  if (major == 1) {
    header_len = bytes[8] | (static_cast<std::size_t>(bytes[9]) << 8);
    offset = 10;
  } else {
    if (bytes.size() < 12) throw FormatError(path.string() + " has a truncated header");
    header_len = bytes[8] | (static_cast<std::size_t>(bytes[9]) << 8) | (static_cast<std::size_t>(bytes[10]) << 16) |
                 (static_cast<std::size_t>(bytes[11]) << 24);
    offset = 12;
  }
  if (offset + header_len > bytes.size()) throw FormatError(path.string() + " has a truncated header");
  const std::string header(reinterpret_cast<const char*>(bytes.data() + offset), header_len);
  std::smatch m;
  NpyArray a;
  if (!std::regex_search(header, m, std::regex(R"('descr'\s*:\s*'([^']+)')"))) {
    throw FormatError(path.string() + ": missing dtype");
  }
  a.descr = m[1];
  if (std::regex_search(header, m, std::regex(R"('fortran_order'\s*:\s*True)"))) {
    throw FormatError(path.string() + ": Fortran-ordered arrays are not supported");
  }
  if (!std::regex_search(header, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))"))) {
    throw FormatError(path.string() + ": missing shape");
  }
  const std::string dims = m[1];
  const std::regex number(R"(\d+)");
  for (std::sregex_iterator it(dims.begin(), dims.end(), number), end; it != end; ++it) {
    a.shape.push_back(std::stoll(it->str()));
  }
  a.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset + header_len), bytes.end());
  return a;
}

Index numel(const std::vector<Index>& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

}  // namespace

Dataset import_feature_dataset(DatasetKind kind, Split split, const std::filesystem::path& images_npy,
                               const std::filesystem::path& labels_npy) {
  const auto im = read_npy(images_npy);
  const auto lb = read_npy(labels_npy);
  if (im.shape.size() != 4) throw FormatError(images_npy.string() + ": expected a 4-d image array");
  const Index n = im.shape[0];
  const bool chw = im.shape[1] == 3 && im.shape[2] == 32 && im.shape[3] == 32;
  const bool hwc = im.shape[1] == 32 && im.shape[2] == 32 && im.shape[3] == 3;
  if (!chw && !hwc) throw FormatError(images_npy.string() + ": expected N x 3 x 32 x 32 or N x 32 x 32 x 3");
  const Index count = numel(im.shape);
  Dataset ds;
  ds.kind = kind;
  ds.split = split;
  ds.images = Tensor<float>(Shape{n, 3, 32, 32});
  auto pixel = [&](Index flat) -> float {
    if (im.descr == "<f4") {
      float v;
      std::memcpy(&v, im.data.data() + flat * 4, 4);
      return v;
    }
    return static_cast<float>(im.data[static_cast<std::size_t>(flat)]) / 255.0f;
  };
  if (im.descr != "<f4" && im.descr != "|u1") {
    throw FormatError(images_npy.string() + ": image dtype must be float32 or uint8, got " + im.descr);
  }
  const Index width = im.descr == "<f4" ? 4 : 1;
  if (static_cast<Index>(im.data.size()) < count * width) throw FormatError(images_npy.string() + " is truncated");
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < 3; ++c) {
      for (Index h = 0; h < 32; ++h) {
        for (Index w = 0; w < 32; ++w) {
          const Index src = chw ? ((i * 3 + c) * 32 + h) * 32 + w : ((i * 32 + h) * 32 + w) * 3 + c;
          ds.images.at(i, c, h, w) = pixel(src);
        }
      }
    }
  }
  if (lb.shape.size() != 1 || lb.shape[0] != n) throw FormatError(labels_npy.string() + ": expected N labels");
  Index lw = 0;
  if (lb.descr == "<i8") lw = 8;
  else if (lb.descr == "<i4") lw = 4;
  else if (lb.descr == "|u1" || lb.descr == "|i1") lw = 1;
  else throw FormatError(labels_npy.string() + ": unsupported label dtype " + lb.descr);
  if (static_cast<Index>(lb.data.size()) < n * lw) throw FormatError(labels_npy.string() + " is truncated");
  for (Index i = 0; i < n; ++i) {
    std::int64_t v = 0;
    if (lw == 8) std::memcpy(&v, lb.data.data() + i * 8, 8);
    else if (lw == 4) {
      std::int32_t t;
      std::memcpy(&t, lb.data.data() + i * 4, 4);
      v = t;
    } else {
      v = lb.data[static_cast<std::size_t>(i)];
    }
    ds.labels.push_back(static_cast<int>(v));
    ds.ids.push_back(static_cast<std::uint64_t>(i));
  }
  ds.provenance = {{"source", "external"},
                   {"images", images_npy.string()},
                   {"labels", labels_npy.string()},
                   {"images_sha256", io::sha256_file(images_npy)},
                   {"labels_sha256", io::sha256_file(labels_npy)}};
  ds.validate();
  return ds;
}

}  // namespace styleadv
