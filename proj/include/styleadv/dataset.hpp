#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "styleadv/io.hpp"
#include "styleadv/tensor.hpp"

namespace styleadv {

inline constexpr int kNumClasses = 10;
inline constexpr Index kImageChannels = 3;
inline constexpr Index kImageSize = 32;

inline constexpr std::array<std::string_view, kNumClasses> kClassNames{
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"};

/// Class index for a CIFAR-10 class name or a decimal index string.
int class_index(std::string_view name);
std::string class_name(int index);

enum class DatasetKind { cifar10, cifar10r, cifar10nr };
enum class Split { train, test };

std::string to_string(DatasetKind k);
std::string to_string(Split s);
DatasetKind parse_dataset_kind(std::string_view s);
Split parse_split(std::string_view s);

/// One image with its label and stable identifier.
struct LabeledExample {
  Tensor<float> image;  // 3x32x32 in [0,1]
  int label = 0;
  std::uint64_t id = 0;
};

/// An ordered, immutable-by-convention collection of labeled 3x32x32 images
/// stored contiguously, with a free-form provenance document.
struct Dataset {
  DatasetKind kind = DatasetKind::cifar10;
  Split split = Split::test;
  Tensor<float> images{Shape{0, kImageChannels, kImageSize, kImageSize}};
  std::vector<int> labels;
  std::vector<std::uint64_t> ids;
  io::Json provenance = io::Json::object();

  Index size() const { return static_cast<Index>(labels.size()); }
  bool empty() const { return labels.empty(); }
  Tensor<float> image(Index i) const { return images.item(i); }
  LabeledExample example(Index i) const;

  /// Rows in the given order; provenance is copied.
  Dataset select(const std::vector<Index>& rows) const;

  /// Throws ValidationError on any broken invariant (pixel range, label
  /// range, duplicate ids, inconsistent sizes).
  void validate() const;

  /// Row indices per class, in dataset order.
  std::array<std::vector<Index>, kNumClasses> rows_by_class() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

Dataset make_dataset(DatasetKind kind, Split split, const std::vector<LabeledExample>& examples,
                     io::Json provenance = io::Json::object());

/// Deterministic class-stratified subset of `count` rows: classes are visited
/// round-robin and each contributes its next row from a seeded shuffle. The
/// selected rows keep their original relative order.
std::vector<Index> stratified_rows(const Dataset& ds, Index count, std::uint64_t seed);

// ---------------------------------------------------------------------------
// CIFAR-10 ingestion

/// Published checksum of the CIFAR-10 binary-version archive.
inline constexpr std::string_view kCifarArchiveMd5 = "c32a1d4ab5d03f1284b67883e8d87530";
inline constexpr std::string_view kCifarArchiveName = "cifar-10-binary.tar.gz";
inline constexpr std::string_view kCifarDirName = "cifar-10-batches-bin";
inline constexpr std::string_view kCifarUrl = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";

/// Loads a split from `root`, which holds either the extracted
/// cifar-10-batches-bin/ directory or the original archive (checksum
/// verified). Pixels are scaled to [0,1]; ids are row indices in the split.
/// With `subset_size`, returns stratified_rows(...) of the split.
/// `archive_md5` is the checksum the archive must match.
Dataset load_cifar10(const std::filesystem::path& root, Split split,
                     std::optional<Index> subset_size = std::nullopt, std::uint64_t seed = 0,
                     std::string_view archive_md5 = kCifarArchiveMd5);

/// Parses raw CIFAR-10 binary records (1 label byte + 3072 pixel bytes each).
Dataset parse_cifar_records(std::span<const std::uint8_t> bytes, Split split,
                            std::uint64_t first_id, const std::string& source);

// ---------------------------------------------------------------------------
// Persistence: <path> holds the tensor blob, <path>.json the metadata sidecar.

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& blob);

/// SHA-256 over the serialized dataset (images, labels, ids, kind, split).
std::string dataset_fingerprint(const Dataset& ds);

}  // namespace styleadv
