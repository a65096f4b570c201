#include "styleadv/model_zoo.hpp"

#include <cmath>

#include "styleadv/nn/loss.hpp"

namespace styleadv {
namespace {

constexpr Index kInferenceBatch = 128;

Tensor<float> as_batch(const Tensor<float>& x) {
  if (x.rank() == 3) return x.reshaped(x.shape().batched(1));
  return x;
}

void check_images(const Tensor<float>& x) {
  const Shape item{kImageChannels, kImageSize, kImageSize};
  const bool ok = (x.rank() == 3 && x.shape() == item) || (x.rank() == 4 && x.shape().tail() == item);
  if (!ok) throw ShapeError("classifier input must be 3x32x32 or Nx3x32x32, got " + x.shape().str());
}

constexpr std::string_view kCheckpointMagic = "SADVCKPT";

}  // namespace

std::string to_string(Regime r) {
  switch (r) {
    case Regime::standard: return "standard";
    case Regime::pgd_at: return "pgd_at";
    case Regime::iat: return "iat";
  }
  return "?";
}

Regime parse_regime(std::string_view s) {
  for (auto r : {Regime::standard, Regime::pgd_at, Regime::iat}) {
    if (to_string(r) == s) return r;
  }
  throw ValidationError("unknown training regime '" + std::string(s) + "' (standard, pgd_at, iat)");
}

int argmax(const ProbabilityVector& p) {
  int best = 0;
  for (int i = 1; i < kNumClasses; ++i) {
    if (p[static_cast<std::size_t>(i)] > p[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

io::Json to_json(const ClassifierInfo& info) {
  io::Json j = {{"name", info.name},
                {"arch", nn::to_string(info.arch.arch)},
                {"width", info.arch.width},
                {"num_classes", info.arch.num_classes},
                {"regime", to_string(info.regime)},
                {"train_set", to_string(info.train_set)},
                {"seed", info.seed},
                {"epochs", info.epochs},
                {"clean_accuracy", nullptr},
                {"robust_accuracy", nullptr},
                {"training", info.training}};
  if (info.clean_accuracy) j["clean_accuracy"] = *info.clean_accuracy;
  if (info.robust_accuracy) j["robust_accuracy"] = *info.robust_accuracy;
  return j;
}

ClassifierInfo classifier_info_from_json(const io::Json& j) {
  try {
    ClassifierInfo info;
    info.name = j.at("name").get<std::string>();
    info.arch.arch = nn::parse_arch(j.at("arch").get<std::string>());
    info.arch.width = j.at("width").get<double>();
    info.arch.num_classes = j.at("num_classes").get<int>();
    info.regime = parse_regime(j.at("regime").get<std::string>());
    info.train_set = parse_dataset_kind(j.at("train_set").get<std::string>());
    info.seed = j.at("seed").get<std::uint64_t>();
    info.epochs = j.at("epochs").get<int>();
    if (!j.at("clean_accuracy").is_null()) info.clean_accuracy = j.at("clean_accuracy").get<double>();
    if (!j.at("robust_accuracy").is_null()) info.robust_accuracy = j.at("robust_accuracy").get<double>();
    info.training = j.at("training");
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed classifier metadata: ") + e.what());
  }
}

Classifier::Classifier(ClassifierInfo info)
    : info_(std::move(info)), net_(nn::build_classifier<float>(info_.arch)) {
  nn::initialize_parameters(net_, info_.seed);
}

Tensor<float> Classifier::logits(const Tensor<float>& x) {
  check_images(x);
  const Tensor<float> b = as_batch(x);
  const Index n = b.dim(0);
  Tensor<float> out(Shape{n, info_.arch.num_classes});
  for_each_batch(n, kInferenceBatch, [&](Index lo, Index hi) {
    Tensor<float> y = net_.forward(b.slice(lo, hi), nn::Mode::eval);
    std::copy(y.span().begin(), y.span().end(), out.data() + lo * out.dim(1));
  });
  return out;
}

std::vector<ProbabilityVector> Classifier::classify(const Tensor<float>& x) {
  if (info_.arch.num_classes != kNumClasses) throw ValidationError("classify expects a 10-class model");
  const Tensor<double> p = nn::softmax(logits(x).cast<double>());
  std::vector<ProbabilityVector> out(static_cast<std::size_t>(p.dim(0)));
  for (Index i = 0; i < p.dim(0); ++i) {
    for (int k = 0; k < kNumClasses; ++k) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = p[i * kNumClasses + k];
  }
  return out;
}

std::vector<int> Classifier::predict(const Tensor<float>& x) { return nn::argmax_rows(logits(x)); }

Tensor<float> Classifier::representation(const Tensor<float>& x) {
  check_images(x);
  const Tensor<float> b = as_batch(x);
  const int tap = nn::representation_tap(net_);
  std::vector<Tensor<float>> parts;
  for_each_batch(b.dim(0), kInferenceBatch, [&](Index lo, Index hi) {
    parts.push_back(std::move(net_.forward_taps(b.slice(lo, hi), nn::Mode::eval, {tap})[0]));
  });
  if (parts.size() == 1) return std::move(parts[0]);
  const Index f = parts.front().dim(1);
  Tensor<float> out(Shape{b.dim(0), f});
  Index row = 0;
  for (const auto& p : parts) {
    std::copy(p.span().begin(), p.span().end(), out.data() + row * f);
    row += p.dim(0);
  }
  return out;
}

Tensor<float> Classifier::input_gradient(const Tensor<float>& x,
                                         const std::function<Tensor<float>(const Tensor<float>&)>& dlogits) {
  check_images(x);
  const Tensor<float> b = as_batch(x);
  Tensor<float> y = net_.forward(b, nn::Mode::eval);
  Tensor<float> dx = net_.backward(dlogits(y), false);
  return x.rank() == 3 ? std::move(dx).reshaped(x.shape()) : dx;
}

Tensor<float> Classifier::representation_gradient(
    const Tensor<float>& x, const std::function<Tensor<float>(const Tensor<float>&)>& drep) {
  check_images(x);
  const Tensor<float> b = as_batch(x);
  const int tap = nn::representation_tap(net_);
  auto taps = net_.forward_taps(b, nn::Mode::eval, {tap});
  Tensor<float> dx = net_.backward_taps({tap}, {drep(taps[0])}, false);
  return x.rank() == 3 ? std::move(dx).reshaped(x.shape()) : dx;
}

std::string Classifier::fingerprint() {
  io::BlobWriter w;
  w.str(nn::to_string(info_.arch.arch));
  w.f64(info_.arch.width);
  net_.visit_parameters([&](nn::Parameter<float>& p) { w.tensor(p.value); });
  net_.visit_buffers([&](const std::string&, Tensor<float>& t) { w.tensor(t); });
  return io::sha256_hex(w.bytes());
}

void for_each_batch(Index n, Index batch_size, const std::function<void(Index, Index)>& fn) {
  if (batch_size < 1) throw ValidationError("batch size must be positive");
  for (Index lo = 0; lo < n; lo += batch_size) fn(lo, std::min(n, lo + batch_size));
}

double evaluate_accuracy(Classifier& model, const Dataset& ds, Index batch_size) {
  if (ds.empty()) throw ValidationError("cannot evaluate accuracy on an empty dataset");
  Index correct = 0;
  for_each_batch(ds.size(), batch_size, [&](Index lo, Index hi) {
    const auto pred = model.predict(ds.images.slice(lo, hi));
    for (Index i = lo; i < hi; ++i) correct += pred[static_cast<std::size_t>(i - lo)] == ds.labels[static_cast<std::size_t>(i)];
  });
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

void save_checkpoint(Classifier& model, const std::filesystem::path& path) {
  io::BlobWriter w;
  io::write_header(w, kCheckpointMagic, kCheckpointFormatVersion);
  auto& net = model.network();
  std::vector<std::pair<std::string, const Tensor<float>*>> entries;
  net.visit_parameters([&](nn::Parameter<float>& p) { entries.emplace_back(p.name, &p.value); });
  net.visit_buffers([&](const std::string& name, Tensor<float>& t) { entries.emplace_back(name, &t); });
  w.u64(entries.size());
  for (const auto& [name, t] : entries) {
    w.str(name);
    w.tensor(*t);
  }
  io::write_bytes_atomic(path, w.bytes());
  io::Json meta = to_json(model.info());
  meta["format_version"] = kCheckpointFormatVersion;
  meta["blob_sha256"] = io::sha256_hex(w.bytes());
  meta["weights_fingerprint"] = model.fingerprint();
  io::write_json(sidecar_path(path), meta);
}

Classifier load_checkpoint(const std::filesystem::path& path) {
  const auto meta = io::read_json(sidecar_path(path));
  if (meta.value("format_version", 0u) != kCheckpointFormatVersion) {
    throw FormatError("checkpoint " + path.string() + " has an unsupported format version");
  }
  if (!std::filesystem::exists(path)) throw FormatError("missing checkpoint blob " + path.string());
  const auto bytes = io::read_bytes(path);
  if (io::sha256_hex(bytes) != meta.at("blob_sha256").get<std::string>()) {
    throw FormatError("checkpoint " + path.string() + " does not match its sidecar checksum");
  }
  Classifier model(classifier_info_from_json(meta));
  io::BlobReader r(bytes, "checkpoint " + path.string());
  io::read_header(r, kCheckpointMagic, kCheckpointFormatVersion);
  const auto count = r.u64();
  std::uint64_t seen = 0;
  auto restore = [&](const std::string& name, Tensor<float>& dst) {
    if (seen++ >= count) throw FormatError("checkpoint " + path.string() + " has too few tensors");
    const auto stored = r.str();
    Tensor<float> t = r.tensor<float>();
    if (stored != name || t.shape() != dst.shape()) {
      throw FormatError("checkpoint tensor '" + stored + "' " + t.shape().str() + " does not match '" + name +
                        "' " + dst.shape().str());
    }
    dst = std::move(t);
  };
  auto& net = model.network();
  net.visit_parameters([&](nn::Parameter<float>& p) { restore(p.name, p.value); });
  net.visit_buffers([&](const std::string& name, Tensor<float>& t) { restore(name, t); });
  if (seen != count) throw FormatError("checkpoint " + path.string() + " has extra tensors");
  r.expect_end();
  return model;
}

const std::vector<ZooEntry>& zoo_entries() {
  using nn::Arch;
  static const std::vector<ZooEntry> entries{
      {"RNB", Arch::resnet18, Regime::standard, DatasetKind::cifar10},
      {"RB", Arch::resnet18, Regime::standard, DatasetKind::cifar10r},
      {"NRB", Arch::resnet18, Regime::standard, DatasetKind::cifar10nr},
      {"VGG19B", Arch::vgg19, Regime::standard, DatasetKind::cifar10},
      {"VGG19R", Arch::vgg19, Regime::standard, DatasetKind::cifar10r},
      {"VGG19NR", Arch::vgg19, Regime::standard, DatasetKind::cifar10nr},
      {"D121B", Arch::densenet121, Regime::standard, DatasetKind::cifar10},
      {"D121R", Arch::densenet121, Regime::standard, DatasetKind::cifar10r},
      {"D121NR", Arch::densenet121, Regime::standard, DatasetKind::cifar10nr},
      {"GNB", Arch::googlenet, Regime::standard, DatasetKind::cifar10},
      {"GNR", Arch::googlenet, Regime::standard, DatasetKind::cifar10r},
      {"GNNR", Arch::googlenet, Regime::standard, DatasetKind::cifar10nr},
      {"PGDAT", Arch::resnet18, Regime::pgd_at, DatasetKind::cifar10},
      {"IAT", Arch::resnet18, Regime::iat, DatasetKind::cifar10},
  };
  return entries;
}

const ZooEntry& zoo_entry(std::string_view name) {
  const std::string_view canonical = name == "VGGB" ? "VGG19B" : name;
  for (const auto& e : zoo_entries()) {
    if (e.name == canonical) return e;
  }
  std::string list;
  for (const auto& e : zoo_entries()) list += (list.empty() ? "" : ", ") + e.name;
  throw ValidationError("unknown zoo model '" + std::string(name) + "'; known: " + list);
}

}  // namespace styleadv
