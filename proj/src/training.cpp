#include "styleadv/training.hpp"

#include <cmath>
#include <numeric>

#include "styleadv/nn/loss.hpp"
#include "styleadv/nn/optim.hpp"

namespace styleadv {
namespace {

Tensor<float> ce_grad(const Tensor<float>& logits, const std::vector<int>& labels) {
  return nn::cross_entropy(logits, labels).grad;
}

void validate_train_inputs(const Dataset& train, const TrainConfig& cfg) {
  if (train.split != Split::train) throw ValidationError("training requires a train split");
  if (cfg.epochs < 0) throw ValidationError("epochs must be non-negative");
  if (cfg.batch_size < 1) throw ValidationError("batch size must be positive");
  if (!(cfg.lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (cfg.epochs > 0 && train.empty()) throw ValidationError("cannot train on an empty dataset");
}

void validate_attack(const PgdConfig& a) {
  if (a.epsilon < 0.0 || a.steps < 0 || a.step_size < 0.0) {
    throw ValidationError("PGD epsilon, steps and step size must be non-negative");
  }
}

std::vector<int> milestones_for(const TrainConfig& cfg) {
  if (!cfg.milestones.empty()) return cfg.milestones;
  return {cfg.epochs / 2, (3 * cfg.epochs) / 4};
}

// Callback computing loss and parameter gradients for one batch; returns
// {loss, number of correct clean predictions}.
using BatchStep = std::function<std::pair<double, Index>(Tensor<float>&, const std::vector<int>&,
                                                         const std::vector<std::uint64_t>&, Rng&)>;

void run_training(Classifier& model, const Dataset& train, const TrainConfig& cfg, const BatchStep& step,
                  Regime regime, io::Json hparams, const EvalOptions& eval) {
  validate_train_inputs(train, cfg);
  if (cfg.epochs == 0) return;
  auto& net = model.network();
  nn::Sgd<float> sgd({cfg.lr, cfg.momentum, cfg.weight_decay});
  const auto milestones = milestones_for(cfg);
  io::Json curve = io::Json::array();

  std::vector<Index> order(static_cast<std::size_t>(train.size()));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    shuffle(order.begin(), order.end(), rng);
    sgd.set_lr(nn::step_lr(cfg.lr, epoch, milestones, cfg.lr_gamma));
    double loss_sum = 0.0;
    Index correct = 0, batches = 0;
    for (Index lo = 0; lo < train.size(); lo += cfg.batch_size) {
      const Index hi = std::min(train.size(), lo + cfg.batch_size);
      std::vector<Index> rows(order.begin() + lo, order.begin() + hi);
      Dataset b = train.select(rows);
      if (cfg.augment) augment_batch(b.images, rng);
      nn::zero_grads(net);
      auto [loss, ok] = step(b.images, b.labels, b.ids, rng);
      if (!std::isfinite(loss)) {
        throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(batches) + " (lr " + std::to_string(sgd.lr()) +
                              ", last mean loss " +
                              std::to_string(batches ? loss_sum / static_cast<double>(batches) : 0.0) + ")");
      }
      sgd.step(net);
      loss_sum += loss;
      correct += ok;
      ++batches;
    }
    curve.push_back({{"epoch", epoch},
                     {"lr", sgd.lr()},
                     {"loss", loss_sum / static_cast<double>(batches)},
                     {"train_accuracy", static_cast<double>(correct) / static_cast<double>(train.size())}});
  }

  auto& info = model.info();
  info.regime = regime;
  info.train_set = train.kind;
  info.epochs += cfg.epochs;
  info.training = {{"hyperparameters", to_json(cfg)},
                   {"regime", std::move(hparams)},
                   {"train_set_fingerprint", dataset_fingerprint(train)},
                   {"train_size", train.size()},
                   {"curve", std::move(curve)},
                   {"warnings", io::Json::array()}};
  if (eval.test) {
    info.clean_accuracy = evaluate_accuracy(model, *eval.test);
    if (eval.robust_probe) {
      const Index n = std::min(eval.robust_probe_size, eval.test->size());
      const Dataset probe = eval.test->select(stratified_rows(*eval.test, n, cfg.seed));
      info.robust_accuracy = robust_accuracy(model, probe, *eval.robust_probe, cfg.seed);
      info.training["robust_probe"] = to_json(*eval.robust_probe);
      info.training["robust_probe_size"] = n;
    }
  }
}

Index count_correct(const Tensor<float>& logits, const std::vector<int>& labels) {
  const auto pred = nn::argmax_rows(logits);
  Index c = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) c += pred[i] == labels[i];
  return c;
}

// Per-image random-start seeds, drawn from the attack's own stream.
std::vector<std::uint64_t> attack_seeds(std::uint64_t seed, const std::vector<std::uint64_t>& ids, Rng& rng) {
  const std::uint64_t salt = rng();
  std::vector<std::uint64_t> s(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) s[i] = derive_seed(seed ^ salt, ids[i]);
  return s;
}

}  // namespace

io::Json to_json(const PgdConfig& c) {
  return {{"epsilon", c.epsilon}, {"steps", c.steps}, {"step_size", c.step_size}, {"random_start", c.random_start}};
}

io::Json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},         {"batch_size", c.batch_size}, {"lr", c.lr},
          {"momentum", c.momentum},     {"weight_decay", c.weight_decay},
          {"milestones", milestones_for(c)}, {"lr_gamma", c.lr_gamma}, {"augment", c.augment},
          {"seed", c.seed}};
}

Tensor<float> pgd_perturb(Classifier& model, const Tensor<float>& x, const std::vector<int>& labels,
                          const PgdConfig& cfg, bool targeted, const std::vector<std::uint64_t>& seeds) {
  validate_attack(cfg);
  if (x.rank() != 4 || static_cast<Index>(labels.size()) != x.dim(0) || seeds.size() != labels.size()) {
    throw ShapeError("pgd_perturb: batch, labels and seeds disagree");
  }
  const auto eps = static_cast<float>(cfg.epsilon);
  const auto step = static_cast<float>(cfg.step_size);
  const Index per = x.shape().tail().numel();
  Tensor<float> adv = x;
  auto project = [&](Tensor<float>& a) {
    for (Index i = 0; i < a.numel(); ++i) {
      a[i] = std::clamp(a[i], std::max(0.0f, x[i] - eps), std::min(1.0f, x[i] + eps));
    }
  };
  if (cfg.random_start && eps > 0.0f) {
    for (std::size_t n = 0; n < seeds.size(); ++n) {
      Rng rng(seeds[n]);
      float* p = adv.data() + static_cast<Index>(n) * per;
      for (Index i = 0; i < per; ++i) p[i] += static_cast<float>((2.0 * uniform01(rng) - 1.0) * cfg.epsilon);
    }
    project(adv);
  }
  if (eps == 0.0f) return adv;
  const float dir = targeted ? -1.0f : 1.0f;
  for (int s = 0; s < cfg.steps; ++s) {
    Tensor<float> g = model.input_gradient(adv, [&](const Tensor<float>& l) { return ce_grad(l, labels); });
    for (Index i = 0; i < adv.numel(); ++i) {
      const float sg = g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
      adv[i] += dir * step * sg;
    }
    project(adv);
  }
  return adv;
}

MixedBatch interpolate_batch(const Tensor<float>& x, const std::vector<int>& labels, double lambda,
                             const std::vector<Index>& partner) {
  const Index n = x.dim(0), per = x.shape().tail().numel();
  if (static_cast<Index>(labels.size()) != n || static_cast<Index>(partner.size()) != n) {
    throw ShapeError("interpolate_batch: batch, labels and partners disagree");
  }
  MixedBatch out{Tensor<float>(x.shape()), Tensor<float>(Shape{n, kNumClasses})};
  for (Index i = 0; i < n; ++i) {
    const auto j = partner[static_cast<std::size_t>(i)];
    out.targets[i * kNumClasses + labels[static_cast<std::size_t>(i)]] += static_cast<float>(lambda);
    out.targets[i * kNumClasses + labels[static_cast<std::size_t>(j)]] += static_cast<float>(1.0 - lambda);
    const float* a = x.data() + i * per;
    const float* b = x.data() + j * per;
    float* o = out.images.data() + i * per;
    for (Index k = 0; k < per; ++k) o[k] = static_cast<float>(lambda * a[k] + (1.0 - lambda) * b[k]);
  }
  return out;
}

void augment_batch(Tensor<float>& x, Rng& rng) {
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<float> tmp(static_cast<std::size_t>(c * h * w));
  for (Index b = 0; b < n; ++b) {
    const auto dy = static_cast<Index>(uniform_index(rng, 9)) - 4;
    const auto dx = static_cast<Index>(uniform_index(rng, 9)) - 4;
    const bool flip = uniform_index(rng, 2) == 1;
    float* img = x.data() + b * c * h * w;
    for (Index ch = 0; ch < c; ++ch) {
      for (Index i = 0; i < h; ++i) {
        for (Index j = 0; j < w; ++j) {
          const Index si = i + dy;
          const Index sj = (flip ? w - 1 - j : j) + dx;
          tmp[static_cast<std::size_t>((ch * h + i) * w + j)] =
              (si >= 0 && si < h && sj >= 0 && sj < w) ? img[(ch * h + si) * w + sj] : 0.0f;
        }
      }
    }
    std::copy(tmp.begin(), tmp.end(), img);
  }
}

double robust_accuracy(Classifier& model, const Dataset& ds, const PgdConfig& cfg, std::uint64_t seed) {
  if (ds.empty()) throw ValidationError("cannot evaluate robust accuracy on an empty dataset");
  Index correct = 0;
  for_each_batch(ds.size(), 64, [&](Index lo, Index hi) {
    std::vector<int> y(ds.labels.begin() + lo, ds.labels.begin() + hi);
    std::vector<std::uint64_t> seeds;
    for (Index i = lo; i < hi; ++i) seeds.push_back(derive_seed(seed, ds.ids[static_cast<std::size_t>(i)]));
    const auto pred = model.predict(pgd_perturb(model, ds.images.slice(lo, hi), y, cfg, false, seeds));
    for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
  });
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

Classifier& train_standard(Classifier& model, const Dataset& train, const TrainConfig& cfg,
                           const EvalOptions& eval) {
  auto& net = model.network();
  BatchStep step = [&](Tensor<float>& x, const std::vector<int>& y, const std::vector<std::uint64_t>&, Rng&) {
    Tensor<float> logits = net.forward(x, nn::Mode::train);
    auto l = nn::cross_entropy(logits, y);
    net.backward(l.grad, true);
    return std::pair{l.loss, count_correct(logits, y)};
  };
  run_training(model, train, cfg, step, Regime::standard, io::Json::object(), eval);
  return model;
}

Classifier& train_pgd_adversarial(Classifier& model, const Dataset& train, const PgdConfig& attack,
                                  const TrainConfig& cfg, const EvalOptions& eval) {
  validate_attack(attack);
  auto& net = model.network();
  Rng attack_rng(derive_seed(cfg.seed, "pgd-start"));
  BatchStep step = [&](Tensor<float>& x, const std::vector<int>& y, const std::vector<std::uint64_t>& ids, Rng&) {
    Tensor<float> adv = pgd_perturb(model, x, y, attack, false, attack_seeds(cfg.seed, ids, attack_rng));
    Tensor<float> logits = net.forward(adv, nn::Mode::train);
    auto l = nn::cross_entropy(logits, y);
    net.backward(l.grad, true);
    return std::pair{l.loss, count_correct(logits, y)};
  };
  run_training(model, train, cfg, step, Regime::pgd_at,
               {{"attack", to_json(attack)}, {"degenerate", !(attack.epsilon > 0.0)}}, eval);
  return model;
}

Classifier& train_interpolated_adversarial(Classifier& model, const Dataset& train, const PgdConfig& attack,
                                           const MixConfig& mix, const TrainConfig& cfg,
                                           const EvalOptions& eval) {
  validate_attack(attack);
  if (mix.fixed_lambda) {
    if (*mix.fixed_lambda < 0.0 || *mix.fixed_lambda > 1.0) throw ValidationError("fixed lambda must lie in [0,1]");
  } else if (!(mix.alpha > 0.0 && mix.beta > 0.0)) {
    throw ValidationError("interpolation Beta parameters must be positive");
  }
  auto& net = model.network();
  Rng attack_rng(derive_seed(cfg.seed, "pgd-start"));
  BatchStep step = [&](Tensor<float>& x, const std::vector<int>& y, const std::vector<std::uint64_t>& ids,
                       Rng& rng) {
    Tensor<float> adv = pgd_perturb(model, x, y, attack, false, attack_seeds(cfg.seed, ids, attack_rng));
    const double lambda = mix.fixed_lambda ? *mix.fixed_lambda : beta_sample(rng, mix.alpha, mix.beta);
    std::vector<Index> perm(static_cast<std::size_t>(x.dim(0)));
    std::iota(perm.begin(), perm.end(), Index{0});
    shuffle(perm.begin(), perm.end(), rng);
    double loss = 0.0;
    Index correct = 0;
    for (const Tensor<float>* src : {&x, &adv}) {
      MixedBatch m = interpolate_batch(*src, y, lambda, perm);
      Tensor<float> logits = net.forward(m.images, nn::Mode::train);
      auto l = nn::soft_cross_entropy(logits, m.targets);
      for (auto& g : l.grad.span()) g *= 0.5f;
      net.backward(l.grad, true);
      loss += 0.5 * l.loss;
      if (src == &x) correct = count_correct(logits, y);
    }
    return std::pair{loss, correct};
  };
  io::Json hp = {{"attack", to_json(attack)},
                 {"mix_alpha", mix.alpha},
                 {"mix_beta", mix.beta},
                 {"fixed_lambda", mix.fixed_lambda ? io::Json(*mix.fixed_lambda) : io::Json(nullptr)}};
  run_training(model, train, cfg, step, Regime::iat, std::move(hp), eval);
  return model;
}

}  // namespace styleadv
