#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "styleadv/data_pipeline.hpp"

namespace fs = std::filesystem;
using namespace styleadv;

namespace {

Classifier tiny_model(Regime regime, std::uint64_t seed = 5) {
  ClassifierInfo info;
  info.name = regime == Regime::standard ? "tinyB" : "tinyR";
  info.arch = {nn::Arch::resnet18, 0.0625, 10};
  info.seed = seed;
  info.regime = regime;
  return Classifier(info);
}

Dataset noise_dataset(Index n, std::uint64_t seed, Split split = Split::train) {
  std::vector<LabeledExample> ex;
  Rng rng(seed);
  for (Index i = 0; i < n; ++i) {
    LabeledExample e;
    e.image = Tensor<float>(Shape{3, 32, 32});
    for (Index k = 0; k < e.image.numel(); ++k) e.image[k] = static_cast<float>(uniform01(rng));
    e.label = static_cast<int>(i % 10);
    e.id = static_cast<std::uint64_t>(1000 + i);
    ex.push_back(std::move(e));
  }
  return make_dataset(DatasetKind::cifar10, split, ex, {{"seed", seed}});
}

double linf(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0.0;
  for (Index i = 0; i < a.numel(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

}  // namespace

TEST(RobustConstruction, ZeroStepsReturnsInitialization) {
  Classifier m = tiny_model(Regime::pgd_at);
  const Dataset base = noise_dataset(6, 1);
  RobustConfig cfg;
  cfg.steps = 0;
  const Dataset out = construct_robust_dataset(base, m, cfg, 3);
  // Each output is some other base image.
  for (Index i = 0; i < out.size(); ++i) {
    bool found = false;
    for (Index j = 0; j < base.size(); ++j) found |= (j != i && out.image(i) == base.image(j));
    EXPECT_TRUE(found) << "row " << i;
  }
  EXPECT_DOUBLE_EQ(out.provenance.at("mean_initial_distance").get<double>(),
                   out.provenance.at("mean_final_distance").get<double>());
  EXPECT_EQ(out.labels, base.labels);
  EXPECT_EQ(out.ids, base.ids);
  EXPECT_EQ(out.kind, DatasetKind::cifar10r);
}

TEST(RobustConstruction, SelfInitializationIsAFixedPoint) {
  Classifier m = tiny_model(Regime::pgd_at);
  const Dataset base = noise_dataset(4, 2);
  RobustConfig cfg;
  cfg.steps = 5;
  cfg.init = RobustInit::self;
  const Dataset out = construct_robust_dataset(base, m, cfg, 0);
  EXPECT_EQ(out.provenance.at("mean_initial_distance").get<double>(), 0.0);
  EXPECT_EQ(out.images, base.images);
}

TEST(RobustConstruction, DistanceShrinks) {
  // Frozen from a pilot: 20 noise images, 200 steps of length 0.05 gave
  // final/initial mean distance 0.060-0.066 over five seeds.
  Classifier m = tiny_model(Regime::pgd_at);
  const Dataset base = noise_dataset(20, 3);
  RobustConfig cfg;
  cfg.steps = 200;
  cfg.step_size = 0.05;
  const Dataset out = construct_robust_dataset(base, m, cfg, 1);
  const double ratio = out.provenance.at("mean_final_distance").get<double>() /
                       out.provenance.at("mean_initial_distance").get<double>();
  EXPECT_LT(ratio, 0.10);
  EXPECT_GE(out.provenance.at("fraction_decreased").get<double>(), 0.95);
  const auto d = representation_distances(m, out.images, base.images);
  double mean = 0.0;
  for (double v : d) mean += v / static_cast<double>(d.size());
  EXPECT_NEAR(mean, out.provenance.at("mean_final_distance").get<double>(), 1e-6);
  EXPECT_NO_THROW(out.validate());
}

TEST(RobustConstruction, DeterministicAndWarnsOnStandardModel) {
  Classifier robust = tiny_model(Regime::pgd_at);
  Classifier standard = tiny_model(Regime::standard);
  const Dataset base = noise_dataset(5, 4);
  RobustConfig cfg;
  cfg.steps = 3;
  const Dataset a = construct_robust_dataset(base, robust, cfg, 9);
  const Dataset b = construct_robust_dataset(base, robust, cfg, 9);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.provenance.at("warnings").empty());
  const Dataset w = construct_robust_dataset(base, standard, cfg, 9);
  ASSERT_EQ(w.provenance.at("warnings").size(), 1u);
  EXPECT_EQ(w.provenance.at("source_model_fingerprint"), standard.fingerprint());
}

TEST(RobustConstruction, NoiseInitStaysInRange) {
  Classifier m = tiny_model(Regime::iat);
  RobustConfig cfg;
  cfg.steps = 2;
  cfg.init = RobustInit::noise;
  EXPECT_NO_THROW(construct_robust_dataset(noise_dataset(3, 5), m, cfg, 2).validate());
}

TEST(NonRobustConstruction, RefusesZeroEpsilon) {
  Classifier m = tiny_model(Regime::standard);
  NonRobustConfig cfg;
  cfg.epsilon = 0.0;
  EXPECT_THROW(construct_nonrobust_dataset(noise_dataset(2, 6), m, cfg, 0), ValidationError);
  cfg.epsilon = 0.1;
  cfg.steps = 0;
  EXPECT_THROW(construct_nonrobust_dataset(noise_dataset(2, 6), m, cfg, 0), ValidationError);
}

TEST(NonRobustConstruction, RelabelsWithinBall) {
  Classifier m = tiny_model(Regime::standard);
  const Dataset base = noise_dataset(10, 7);
  NonRobustConfig cfg;
  cfg.steps = 20;
  const Dataset out = construct_nonrobust_dataset(base, m, cfg, 11);
  const auto& prov = out.provenance;
  EXPECT_EQ(prov.at("attempted").get<Index>(), 10);
  EXPECT_EQ(prov.at("dropped_count").get<Index>() + out.size(), 10);
  EXPECT_EQ(prov.at("dropped_ids").size(), prov.at("dropped_count").get<std::size_t>());
  ASSERT_GT(out.size(), 0);
  const auto preds = m.predict(out.images);
  for (Index i = 0; i < out.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const auto src = static_cast<Index>(out.ids[k] - 1000);
    EXPECT_EQ(out.labels[k], (base.labels[static_cast<std::size_t>(src)] + 1) % 10);
    EXPECT_EQ(preds[k], out.labels[k]);
    EXPECT_LE(linf(out.image(i), base.image(src)), cfg.epsilon + 1e-6);
  }
  EXPECT_EQ(out.kind, DatasetKind::cifar10nr);
  EXPECT_EQ(construct_nonrobust_dataset(base, m, cfg, 11), out);
}

TEST(NonRobustConstruction, IdentityTargetKeepsLabel) {
  Classifier m = tiny_model(Regime::standard);
  const Dataset base = noise_dataset(1, 8);
  NonRobustConfig cfg;
  cfg.steps = 10;
  cfg.targets = std::vector<int>{base.labels[0]};
  const Dataset out = construct_nonrobust_dataset(base, m, cfg, 0);
  EXPECT_EQ(out.provenance.at("target_rule"), "explicit");
  if (out.size() == 1) {
    EXPECT_EQ(out.labels[0], base.labels[0]);
    EXPECT_LE(linf(out.image(0), base.image(0)), cfg.epsilon + 1e-6);
  } else {
    EXPECT_EQ(out.provenance.at("dropped_count"), 1);
  }
}

TEST(NonRobustConstruction, TargetRules) {
  const Dataset base = noise_dataset(30, 9);
  NonRobustConfig cfg;
  const auto rot = nonrobust_targets(base, cfg, 0);
  for (std::size_t i = 0; i < rot.size(); ++i) EXPECT_EQ(rot[i], (base.labels[i] + 1) % 10);
  cfg.rule = TargetRule::uniform;
  const auto u1 = nonrobust_targets(base, cfg, 4);
  EXPECT_EQ(u1, nonrobust_targets(base, cfg, 4));
  EXPECT_NE(u1, nonrobust_targets(base, cfg, 5));
  cfg.targets = std::vector<int>{1, 2};
  EXPECT_THROW(nonrobust_targets(base, cfg, 0), ValidationError);
}

namespace {

void write_npy(const fs::path& p, const std::string& descr, const std::string& shape, const void* data,
               std::size_t bytes) {
  std::string header = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': " + shape + ", }";
  while ((10 + header.size() + 1) % 64 != 0) header += ' ';
  header += '\n';
  std::ofstream f(p, std::ios::binary);
  f.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  f.put(static_cast<char>(len & 0xff));
  f.put(static_cast<char>(len >> 8));
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

}  // namespace

TEST(ExternalImport, ReadsFloatAndByteLayouts) {
  const auto dir = fs::temp_directory_path() / "styleadv_npy_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const Dataset ref = noise_dataset(3, 10);
  write_npy(dir / "x.npy", "<f4", "(3, 3, 32, 32)", ref.images.data(), ref.images.numel() * 4);
  std::vector<std::int64_t> labels(ref.labels.begin(), ref.labels.end());
  write_npy(dir / "y.npy", "<i8", "(3,)", labels.data(), labels.size() * 8);
  const Dataset a = import_feature_dataset(DatasetKind::cifar10r, Split::train, dir / "x.npy", dir / "y.npy");
  EXPECT_EQ(a.images, ref.images);
  EXPECT_EQ(a.labels, ref.labels);
  EXPECT_EQ(a.provenance.at("source"), "external");

  std::vector<std::uint8_t> hwc(3 * 32 * 32 * 3);
  for (std::size_t i = 0; i < hwc.size(); ++i) hwc[i] = static_cast<std::uint8_t>(i % 251);
  write_npy(dir / "xb.npy", "|u1", "(3, 32, 32, 3)", hwc.data(), hwc.size());
  const Dataset b = import_feature_dataset(DatasetKind::cifar10nr, Split::train, dir / "xb.npy", dir / "y.npy");
  // element (n=1, c=2, h=4, w=5) sits at ((1*32+4)*32+5)*3+2 in HWC order
  EXPECT_FLOAT_EQ(b.images.at(1, 2, 4, 5), static_cast<float>((((1 * 32 + 4) * 32 + 5) * 3 + 2) % 251) / 255.0f);

  write_npy(dir / "bad.npy", "<f8", "(3, 3, 32, 32)", ref.images.data(), 16);
  EXPECT_THROW(import_feature_dataset(DatasetKind::cifar10r, Split::train, dir / "bad.npy", dir / "y.npy"),
               FormatError);
  fs::remove_all(dir);
}
