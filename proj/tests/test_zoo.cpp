#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "styleadv/model_zoo.hpp"
#include "styleadv/nn/loss.hpp"
#include "styleadv/training.hpp"

namespace fs = std::filesystem;
using namespace styleadv;

namespace {

ClassifierInfo tiny(nn::Arch arch = nn::Arch::resnet18, std::uint64_t seed = 3) {
  ClassifierInfo info;
  info.name = "tiny";
  info.arch = {arch, 0.0625, 10};
  info.seed = seed;
  return info;
}

Dataset toy_dataset(Index n, Split split, std::uint64_t seed) {
  std::vector<LabeledExample> ex;
  Rng rng(seed);
  for (Index i = 0; i < n; ++i) {
    LabeledExample e;
    e.label = static_cast<int>(i % 10);
    e.image = Tensor<float>(Shape{3, 32, 32});
    // Class-dependent brightness plus noise, so a few steps can learn something.
    for (Index k = 0; k < e.image.numel(); ++k) {
      e.image[k] = static_cast<float>(std::clamp(0.05 + 0.09 * e.label + 0.1 * uniform01(rng), 0.0, 1.0));
    }
    e.id = static_cast<std::uint64_t>(i);
    ex.push_back(std::move(e));
  }
  return make_dataset(DatasetKind::cifar10, split, ex);
}

void force_constant_prediction(Classifier& model, int cls) {
  model.network().visit_parameters([&](nn::Parameter<float>& p) {
    if (p.name == "classifier.weight") p.value.fill(0.0f);
    if (p.name == "classifier.bias") {
      p.value.fill(0.0f);
      p.value[cls] = 1.0f;
    }
  });
}

TrainConfig quick_train(int epochs = 1) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 10;
  cfg.lr = 0.05;
  cfg.seed = 17;
  return cfg;
}

}  // namespace

TEST(Classifier, ProbabilitiesAreNormalizedAndRowsIndependent) {
  Classifier m(tiny());
  const Dataset ds = toy_dataset(4, Split::test, 1);
  Tensor<float> batch(Shape{5, 3, 32, 32});
  for (Index i = 0; i < 4; ++i) batch.set_item(i, ds.image(i));
  batch.set_item(4, ds.image(1));
  const auto probs = m.classify(batch);
  ASSERT_EQ(probs.size(), 5u);
  for (const auto& p : probs) {
    const double s = std::accumulate(p.begin(), p.end(), 0.0);
    EXPECT_NEAR(s, 1.0, 1e-6);
    for (double v : p) EXPECT_GE(v, 0.0);
  }
  EXPECT_EQ(probs[1], probs[4]);
  EXPECT_EQ(m.classify(ds.image(1)).front(), probs[1]);
}

TEST(Classifier, RejectsWrongShape) {
  Classifier m(tiny());
  EXPECT_THROW(m.classify(Tensor<float>(Shape{1, 1, 32, 32})), ShapeError);
}

TEST(Classifier, SameSeedSameParameters) {
  Classifier a(tiny(nn::Arch::googlenet, 9)), b(tiny(nn::Arch::googlenet, 9)), c(tiny(nn::Arch::googlenet, 10));
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_NE(a.fingerprint(), c.fingerprint());
}

TEST(Classifier, ArgmaxPrefersLowestIndex) {
  ProbabilityVector p{};
  p[3] = 0.4;
  p[7] = 0.4;
  p[1] = 0.2;
  EXPECT_EQ(argmax(p), 3);
}

TEST(Classifier, CheckpointRoundTripIsBitIdentical) {
  const auto dir = fs::temp_directory_path() / "styleadv_ckpt_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Classifier m(tiny(nn::Arch::densenet121));
  const Dataset train = toy_dataset(20, Split::train, 2);
  train_standard(m, train, quick_train());  // moves batch-norm running statistics off their defaults
  m.info().clean_accuracy = 0.25;
  save_checkpoint(m, dir / "m.ckpt");
  Classifier back = load_checkpoint(dir / "m.ckpt");
  const Dataset probe = toy_dataset(6, Split::test, 4);
  EXPECT_EQ(back.logits(probe.images), m.logits(probe.images));
  EXPECT_EQ(back.fingerprint(), m.fingerprint());
  EXPECT_EQ(back.info().clean_accuracy, 0.25);
  EXPECT_EQ(back.info().regime, Regime::standard);
  EXPECT_EQ(to_json(back.info()), to_json(m.info()));

  auto bytes = io::read_bytes(dir / "m.ckpt");
  bytes.resize(bytes.size() - 9);
  io::write_bytes_atomic(dir / "m.ckpt", bytes);
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), FormatError);
  fs::remove_all(dir);
}

TEST(Accuracy, ConstantPredictorOnBalancedSet) {
  Classifier m(tiny());
  force_constant_prediction(m, 0);
  const Dataset ds = toy_dataset(50, Split::test, 5);
  EXPECT_DOUBLE_EQ(evaluate_accuracy(m, ds), 0.10);
  const Dataset one = ds.select({0});
  EXPECT_DOUBLE_EQ(evaluate_accuracy(m, one), 1.0);
  EXPECT_THROW(evaluate_accuracy(m, ds.select({})), ValidationError);
}

TEST(Zoo, FourteenEntriesWithAlias) {
  EXPECT_EQ(zoo_entries().size(), 14u);
  EXPECT_EQ(zoo_entry("VGGB").name, "VGG19B");
  EXPECT_EQ(zoo_entry("PGDAT").regime, Regime::pgd_at);
  EXPECT_EQ(zoo_entry("IAT").arch, nn::Arch::resnet18);
  EXPECT_EQ(zoo_entry("D121NR").train_set, DatasetKind::cifar10nr);
  EXPECT_THROW(zoo_entry("RNX"), ValidationError);
}

TEST(Training, ZeroEpochsIsNoOp) {
  Classifier m(tiny());
  const auto before = m.fingerprint();
  const auto info_before = to_json(m.info());
  TrainConfig cfg = quick_train(0);
  train_standard(m, toy_dataset(10, Split::train, 6), cfg);
  EXPECT_EQ(m.fingerprint(), before);
  EXPECT_EQ(to_json(m.info()), info_before);
}

TEST(Training, RequiresTrainSplit) {
  Classifier m(tiny());
  EXPECT_THROW(train_standard(m, toy_dataset(10, Split::test, 6), quick_train()), ValidationError);
}

TEST(Training, DeterministicUnderSeed) {
  const Dataset train = toy_dataset(30, Split::train, 7);
  const Dataset test = toy_dataset(20, Split::test, 8);
  Classifier a(tiny()), b(tiny());
  train_standard(a, train, quick_train(2), {&test});
  train_standard(b, train, quick_train(2), {&test});
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  ASSERT_TRUE(a.info().clean_accuracy.has_value());
  EXPECT_EQ(a.info().clean_accuracy, b.info().clean_accuracy);
  EXPECT_EQ(a.info().training.at("curve").size(), 2u);
  EXPECT_EQ(a.info().epochs, 2);
}

TEST(Training, DivergenceAborts) {
  Classifier m(tiny());
  TrainConfig cfg = quick_train(3);
  cfg.lr = 1e30;
  try {
    train_standard(m, toy_dataset(30, Split::train, 9), cfg);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Pgd, StaysInsideBallAndUnitBox) {
  Classifier m(tiny());
  const Dataset ds = toy_dataset(6, Split::test, 10);
  PgdConfig cfg;
  cfg.steps = 5;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6};
  const auto adv = pgd_perturb(m, ds.images, ds.labels, cfg, false, seeds);
  double worst = 0.0;
  for (Index i = 0; i < adv.numel(); ++i) {
    worst = std::max(worst, static_cast<double>(std::abs(adv[i] - ds.images[i])));
    ASSERT_GE(adv[i], 0.0f);
    ASSERT_LE(adv[i], 1.0f);
  }
  EXPECT_LE(worst, cfg.epsilon + 1e-7);
  EXPECT_GT(worst, 0.0);
  EXPECT_EQ(pgd_perturb(m, ds.images, ds.labels, cfg, false, seeds), adv);
}

TEST(Pgd, ZeroEpsilonChangesNothing) {
  Classifier m(tiny());
  const Dataset ds = toy_dataset(3, Split::test, 11);
  PgdConfig cfg;
  cfg.epsilon = 0.0;
  EXPECT_EQ(pgd_perturb(m, ds.images, ds.labels, cfg, false, {1, 2, 3}), ds.images);
  cfg.epsilon = -0.1;
  EXPECT_THROW(pgd_perturb(m, ds.images, ds.labels, cfg, false, {1, 2, 3}), ValidationError);
}

TEST(Pgd, UntargetedStepIncreasesLoss) {
  Classifier m(tiny(nn::Arch::vgg19));
  const Dataset ds = toy_dataset(10, Split::test, 12);
  PgdConfig cfg;
  cfg.random_start = false;
  cfg.steps = 3;
  cfg.epsilon = 16.0 / 255.0;
  std::vector<std::uint64_t> seeds(10, 0);
  auto loss = [&](const Tensor<float>& x) {
    return nn::cross_entropy(m.logits(x), ds.labels).loss;
  };
  EXPECT_GT(loss(pgd_perturb(m, ds.images, ds.labels, cfg, false, seeds)), loss(ds.images));
  EXPECT_LT(loss(pgd_perturb(m, ds.images, ds.labels, cfg, true, seeds)), loss(ds.images));
}

TEST(AdversarialTraining, EpsilonZeroMatchesStandardTraining) {
  const Dataset train = toy_dataset(20, Split::train, 13);
  Classifier a(tiny()), b(tiny());
  PgdConfig none;
  none.epsilon = 0.0;
  train_standard(a, train, quick_train());
  train_pgd_adversarial(b, train, none, quick_train());
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_EQ(b.info().regime, Regime::pgd_at);
  EXPECT_TRUE(b.info().training.at("regime").at("degenerate").get<bool>());
}

TEST(AdversarialTraining, RecordsRobustAccuracy) {
  const Dataset train = toy_dataset(20, Split::train, 14);
  const Dataset test = toy_dataset(10, Split::test, 15);
  Classifier m(tiny());
  PgdConfig attack;
  attack.steps = 2;
  EvalOptions eval{&test, attack, 10};
  train_pgd_adversarial(m, train, attack, quick_train(), eval);
  ASSERT_TRUE(m.info().robust_accuracy.has_value());
  EXPECT_GE(*m.info().robust_accuracy, 0.0);
  EXPECT_LE(*m.info().robust_accuracy, *m.info().clean_accuracy + 1e-12);
}

TEST(Interpolation, LambdaOneIsTheUnmixedBatch) {
  const Dataset ds = toy_dataset(6, Split::train, 16);
  const std::vector<Index> partner{5, 4, 3, 2, 1, 0};
  const auto m = interpolate_batch(ds.images, ds.labels, 1.0, partner);
  EXPECT_EQ(m.images, ds.images);
  for (Index i = 0; i < 6; ++i) {
    for (int c = 0; c < kNumClasses; ++c) {
      EXPECT_EQ(m.targets[i * kNumClasses + c], c == ds.labels[static_cast<std::size_t>(i)] ? 1.0f : 0.0f);
    }
  }
  const auto half = interpolate_batch(ds.images, ds.labels, 0.5, partner);
  EXPECT_FLOAT_EQ(half.images[7], 0.5f * (ds.images[7] + ds.images[5 * 3072 + 7]));
  EXPECT_FLOAT_EQ(half.targets[0 * kNumClasses + ds.labels[5]], 0.5f);
}

TEST(Interpolation, TrainingRunsAndValidatesMix) {
  const Dataset train = toy_dataset(20, Split::train, 17);
  Classifier m(tiny());
  PgdConfig attack;
  attack.steps = 1;
  MixConfig mix;
  mix.fixed_lambda = 1.0;
  train_interpolated_adversarial(m, train, attack, mix, quick_train());
  EXPECT_EQ(m.info().regime, Regime::iat);
  MixConfig bad;
  bad.alpha = 0.0;
  EXPECT_THROW(train_interpolated_adversarial(m, train, attack, bad, quick_train()), ValidationError);
}

TEST(Sampling, BetaOneOneIsUniform) {
  Rng rng(21);
  const int n = 20000;
  double sum = 0.0, sq = 0.0;
  std::array<int, 4> quart{};
  for (int i = 0; i < n; ++i) {
    const double v = beta_sample(rng, 1.0, 1.0);
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
    sum += v;
    sq += v * v;
    ++quart[static_cast<std::size_t>(std::min(3, static_cast<int>(v * 4)))];
  }
  EXPECT_NEAR(sum / n, 0.5, 0.01);
  EXPECT_NEAR(sq / n - (sum / n) * (sum / n), 1.0 / 12.0, 0.005);
  for (int q : quart) EXPECT_NEAR(q, n / 4, 300);
}
