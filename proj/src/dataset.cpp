#include "styleadv/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <set>

#include "styleadv/rng.hpp"

namespace styleadv {
namespace {

constexpr Index kPixels = kImageChannels * kImageSize * kImageSize;
constexpr Index kRecord = 1 + kPixels;
constexpr Index kRecordsPerFile = 10000;

std::vector<std::uint8_t> gunzip(const std::filesystem::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IngestionError("cannot open archive " + path.string());
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> buf(1 << 20);
  for (;;) {
    const int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) {
      int code = 0;
      std::string msg = gzerror(f, &code);
      gzclose(f);
      throw IngestionError("corrupt archive " + path.string() + ": " + msg);
    }
    if (n == 0) break;
    out.insert(out.end(), buf.begin(), buf.begin() + n);
  }
  gzclose(f);
  return out;
}

// Minimal ustar reader: returns the contents of the member whose name ends with `suffix`.
std::span<const std::uint8_t> tar_member(std::span<const std::uint8_t> tar, std::string_view suffix) {
  std::size_t pos = 0;
  while (pos + 512 <= tar.size()) {
    const auto* h = tar.data() + pos;
    if (h[0] == 0) break;
    std::string name(reinterpret_cast<const char*>(h), strnlen(reinterpret_cast<const char*>(h), 100));
    std::string size_field(reinterpret_cast<const char*>(h + 124), 12);
    const std::size_t size = std::strtoull(size_field.c_str(), nullptr, 8);
    pos += 512;
    if (pos + size > tar.size()) throw IngestionError("archive member " + name + " is truncated");
    if (name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      return tar.subspan(pos, size);
    }
    pos += (size + 511) / 512 * 512;
  }
  throw IngestionError("archive has no member named *" + std::string(suffix));
}

std::vector<std::string> split_files(Split split) {
  if (split == Split::test) return {"test_batch.bin"};
  return {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
          "data_batch_5.bin"};
}

void check_record_file(std::span<const std::uint8_t> bytes, const std::string& name) {
  if (static_cast<Index>(bytes.size()) != kRecordsPerFile * kRecord) {
    throw IngestionError(name + " has " + std::to_string(bytes.size()) + " bytes, expected " +
                         std::to_string(kRecordsPerFile * kRecord));
  }
}

std::string missing_archive_message(const std::filesystem::path& root) {
  return "CIFAR-10 not found under " + root.string() + ". Expected " + std::string(kCifarDirName) +
         "/ or " + std::string(kCifarArchiveName) + ". Fetch it with:\n  curl -L -o " +
         (root / kCifarArchiveName).string() + " " + std::string(kCifarUrl) +
         "\n(md5 " + std::string(kCifarArchiveMd5) + ")";
}

}  // namespace

int class_index(std::string_view name) {
  for (int i = 0; i < kNumClasses; ++i) {
    if (kClassNames[static_cast<std::size_t>(i)] == name) return i;
  }
  int v = -1;
  auto [p, ec] = std::from_chars(name.data(), name.data() + name.size(), v);
  if (ec == std::errc() && p == name.data() + name.size() && v >= 0 && v < kNumClasses) return v;
  throw ValidationError("unknown class '" + std::string(name) + "'");
}

std::string class_name(int index) {
  if (index < 0 || index >= kNumClasses) throw ValidationError("class index out of range");
  return std::string(kClassNames[static_cast<std::size_t>(index)]);
}

std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::cifar10: return "CIFAR10";
    case DatasetKind::cifar10r: return "CIFAR10R";
    case DatasetKind::cifar10nr: return "CIFAR10NR";
  }
  return "?";
}

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

DatasetKind parse_dataset_kind(std::string_view s) {
  for (auto k : {DatasetKind::cifar10, DatasetKind::cifar10r, DatasetKind::cifar10nr}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown dataset kind '" + std::string(s) + "' (CIFAR10, CIFAR10R, CIFAR10NR)");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(s) + "' (train, test)");
}

LabeledExample Dataset::example(Index i) const {
  return {images.item(i), labels.at(static_cast<std::size_t>(i)), ids.at(static_cast<std::size_t>(i))};
}

Dataset Dataset::select(const std::vector<Index>& rows) const {
  Dataset out;
  out.kind = kind;
  out.split = split;
  out.provenance = provenance;
  out.images = Tensor<float>(Shape{static_cast<Index>(rows.size()), kImageChannels, kImageSize, kImageSize});
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const Index r = rows[j];
    if (r < 0 || r >= size()) throw ValidationError("dataset row out of range");
    std::copy_n(images.data() + r * kPixels, kPixels, out.images.data() + static_cast<Index>(j) * kPixels);
    out.labels.push_back(labels[static_cast<std::size_t>(r)]);
    out.ids.push_back(ids[static_cast<std::size_t>(r)]);
  }
  return out;
}

void Dataset::validate() const {
  if (images.shape() != Shape{size(), kImageChannels, kImageSize, kImageSize}) {
    throw ValidationError("dataset image tensor " + images.shape().str() + " does not match " +
                          std::to_string(size()) + " examples of 3x32x32");
  }
  if (ids.size() != labels.size()) throw ValidationError("dataset ids and labels differ in length");
  for (float v : images.span()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("dataset pixel outside [0,1]");
  }
  for (int y : labels) {
    if (y < 0 || y >= kNumClasses) throw ValidationError("dataset label outside 0..9");
  }
  std::set<std::uint64_t> seen(ids.begin(), ids.end());
  if (seen.size() != ids.size()) throw ValidationError("dataset ids are not unique");
}

std::array<std::vector<Index>, kNumClasses> Dataset::rows_by_class() const {
  std::array<std::vector<Index>, kNumClasses> out;
  for (Index i = 0; i < size(); ++i) out[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
  return out;
}

Dataset make_dataset(DatasetKind kind, Split split, const std::vector<LabeledExample>& examples,
                     io::Json provenance) {
  Dataset ds;
  ds.kind = kind;
  ds.split = split;
  ds.provenance = std::move(provenance);
  ds.images = Tensor<float>(Shape{static_cast<Index>(examples.size()), kImageChannels, kImageSize, kImageSize});
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].image.numel() != kPixels) throw ShapeError("example image must be 3x32x32");
    ds.images.set_item(static_cast<Index>(i), examples[i].image);
    ds.labels.push_back(examples[i].label);
    ds.ids.push_back(examples[i].id);
  }
  ds.validate();
  return ds;
}

std::vector<Index> stratified_rows(const Dataset& ds, Index count, std::uint64_t seed) {
  if (count < 0) throw ValidationError("subset size must be non-negative");
  if (count > ds.size()) {
    throw ValidationError("subset size " + std::to_string(count) + " exceeds split size " +
                          std::to_string(ds.size()));
  }
  auto by_class = ds.rows_by_class();
  for (int c = 0; c < kNumClasses; ++c) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    shuffle(by_class[static_cast<std::size_t>(c)].begin(), by_class[static_cast<std::size_t>(c)].end(), rng);
  }
  std::vector<Index> rows;
  std::array<std::size_t, kNumClasses> next{};
  while (static_cast<Index>(rows.size()) < count) {
    for (int c = 0; c < kNumClasses && static_cast<Index>(rows.size()) < count; ++c) {
      auto& pool = by_class[static_cast<std::size_t>(c)];
      auto& k = next[static_cast<std::size_t>(c)];
      if (k < pool.size()) rows.push_back(pool[k++]);
    }
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

Dataset parse_cifar_records(std::span<const std::uint8_t> bytes, Split split, std::uint64_t first_id,
                            const std::string& source) {
  if (bytes.size() % static_cast<std::size_t>(kRecord) != 0) {
    throw IngestionError(source + ": size " + std::to_string(bytes.size()) +
                         " is not a whole number of 3073-byte records");
  }
  const Index n = static_cast<Index>(bytes.size()) / kRecord;
  Dataset ds;
  ds.kind = DatasetKind::cifar10;
  ds.split = split;
  ds.images = Tensor<float>(Shape{n, kImageChannels, kImageSize, kImageSize});
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.ids.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const auto* rec = bytes.data() + i * kRecord;
    if (rec[0] >= kNumClasses) {
      throw IngestionError(source + ": record " + std::to_string(i) + " has label byte " + std::to_string(rec[0]));
    }
    ds.labels[static_cast<std::size_t>(i)] = rec[0];
    ds.ids[static_cast<std::size_t>(i)] = first_id + static_cast<std::uint64_t>(i);
    float* dst = ds.images.data() + i * kPixels;
    for (Index p = 0; p < kPixels; ++p) dst[p] = static_cast<float>(rec[1 + p]) / 255.0f;
  }
  return ds;
}

Dataset load_cifar10(const std::filesystem::path& root, Split split, std::optional<Index> subset_size,
                     std::uint64_t seed, std::string_view archive_md5) {
  if (subset_size && *subset_size < 0) throw ValidationError("subset size must be non-negative");
  const auto dir = root / kCifarDirName;
  const auto archive = root / kCifarArchiveName;
  Dataset ds;
  ds.split = split;
  std::string source;
  std::vector<std::uint8_t> tar;
  if (std::filesystem::is_directory(dir)) {
    source = dir.string();
  } else if (std::filesystem::exists(archive)) {
    const auto gz = io::read_bytes(archive);
    const auto md5 = io::md5_hex(gz);
    if (md5 != archive_md5) {
      throw IngestionError("checksum mismatch for " + archive.string() + ": md5 " + md5 + ", expected " +
                           std::string(archive_md5));
    }
    tar = gunzip(archive);
    source = archive.string();
  } else {
    throw IngestionError(missing_archive_message(root));
  }

  std::vector<std::vector<std::uint8_t>> files;
  Dataset index;
  for (const auto& name : split_files(split)) {
    std::string label = name;
    if (tar.empty()) {
      const auto path = dir / name;
      if (!std::filesystem::exists(path)) throw IngestionError("missing " + path.string());
      files.push_back(io::read_bytes(path));
      label = path.string();
    } else {
      const auto member = tar_member(tar, "/" + name);
      files.emplace_back(member.begin(), member.end());
    }
    const auto& bytes = files.back();
    check_record_file(bytes, label);
    for (Index i = 0; i < kRecordsPerFile; ++i) {
      const std::uint8_t y = bytes[static_cast<std::size_t>(i * kRecord)];
      if (y >= kNumClasses) {
        throw IngestionError(label + ": record " + std::to_string(i) + " has label byte " + std::to_string(y));
      }
      index.labels.push_back(y);
    }
  }
  tar.clear();

  std::vector<Index> rows;
  if (subset_size) {
    rows = stratified_rows(index, *subset_size, seed);
  } else {
    rows.resize(static_cast<std::size_t>(index.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<Index>(i);
  }
  const auto n = static_cast<Index>(rows.size());
  ds.kind = DatasetKind::cifar10;
  ds.images = Tensor<float>(Shape{n, kImageChannels, kImageSize, kImageSize});
  ds.labels.resize(rows.size());
  ds.ids.resize(rows.size());
  for (Index k = 0; k < n; ++k) {
    const Index row = rows[static_cast<std::size_t>(k)];
    const auto& bytes = files[static_cast<std::size_t>(row / kRecordsPerFile)];
    const auto* rec = bytes.data() + (row % kRecordsPerFile) * kRecord;
    ds.labels[static_cast<std::size_t>(k)] = rec[0];
    ds.ids[static_cast<std::size_t>(k)] = static_cast<std::uint64_t>(row);
    float* dst = ds.images.data() + k * kPixels;
    for (Index p = 0; p < kPixels; ++p) dst[p] = static_cast<float>(rec[1 + p]) / 255.0f;
  }
  ds.provenance = {{"source", "cifar10"},
                   {"path", source},
                   {"split", to_string(split)},
                   {"full_size", index.size()},
                   {"seed", seed}};
  if (subset_size) ds.provenance["subset_size"] = *subset_size;
  return ds;
}

namespace {

constexpr std::string_view kDatasetMagic = "SADVDSET";

std::vector<std::uint8_t> serialize(const Dataset& ds) {
  io::BlobWriter w;
  io::write_header(w, kDatasetMagic, kDatasetFormatVersion);
  w.u8(static_cast<std::uint8_t>(ds.kind));
  w.u8(static_cast<std::uint8_t>(ds.split));
  w.u64(static_cast<std::uint64_t>(ds.size()));
  w.tensor(ds.images);
  for (int y : ds.labels) w.u8(static_cast<std::uint8_t>(y));
  for (auto id : ds.ids) w.u64(id);
  return w.bytes();
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& blob) {
  auto p = blob;
  p += ".json";
  return p;
}

std::string dataset_fingerprint(const Dataset& ds) { return io::sha256_hex(serialize(ds)); }

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  const auto bytes = serialize(ds);
  io::write_bytes_atomic(path, bytes);
  io::Json meta = {{"format_version", kDatasetFormatVersion},
                   {"kind", to_string(ds.kind)},
                   {"split", to_string(ds.split)},
                   {"size", ds.size()},
                   {"blob_sha256", io::sha256_hex(bytes)},
                   {"provenance", ds.provenance}};
  io::write_json(sidecar_path(path), meta);
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto meta = io::read_json(sidecar_path(path));
  if (meta.value("format_version", 0u) != kDatasetFormatVersion) {
    throw FormatError("dataset " + path.string() + " has format version " +
                      meta.value("format_version", io::Json(nullptr)).dump() + ", expected " +
                      std::to_string(kDatasetFormatVersion));
  }
  if (!std::filesystem::exists(path)) throw FormatError("missing dataset blob " + path.string());
  const auto bytes = io::read_bytes(path);
  io::BlobReader r(bytes, "dataset " + path.string());
  io::read_header(r, kDatasetMagic, kDatasetFormatVersion);
  Dataset ds;
  const auto kind = r.u8();
  const auto split = r.u8();
  if (kind > 2 || split > 1) throw FormatError("dataset " + path.string() + " has invalid kind/split tag");
  ds.kind = static_cast<DatasetKind>(kind);
  ds.split = static_cast<Split>(split);
  const auto n = static_cast<std::size_t>(r.u64());
  ds.images = r.tensor<float>();
  ds.labels.resize(n);
  for (auto& y : ds.labels) y = r.u8();
  ds.ids.resize(n);
  for (auto& id : ds.ids) id = r.u64();
  r.expect_end();
  if (io::sha256_hex(bytes) != meta.at("blob_sha256").get<std::string>()) {
    throw FormatError("dataset " + path.string() + " does not match its sidecar checksum");
  }
  ds.provenance = meta.at("provenance");
  try {
    ds.validate();
  } catch (const ValidationError& e) {
    throw FormatError("dataset " + path.string() + " is corrupt: " + e.what());
  }
  return ds;
}

}  // namespace styleadv
