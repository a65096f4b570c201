#include <gtest/gtest.h>
#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "styleadv/dataset.hpp"
#include "styleadv/io.hpp"
#include "styleadv/rng.hpp"

namespace fs = std::filesystem;
using namespace styleadv;

namespace {

constexpr Index kRecord = 3073;

// 10000 records: label i % 10, pixel bytes derived from (i, p).
std::vector<std::uint8_t> synthetic_batch() {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(10000 * kRecord));
  for (Index i = 0; i < 10000; ++i) {
    auto* rec = bytes.data() + i * kRecord;
    rec[0] = static_cast<std::uint8_t>(i % 10);
    for (Index p = 0; p < 3072; ++p) rec[1 + p] = static_cast<std::uint8_t>((i * 7 + p * 13) % 256);
  }
  return bytes;
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("styleadv_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_file(const fs::path& p, std::span<const std::uint8_t> bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_tar_gz(const fs::path& archive, const std::string& member, std::span<const std::uint8_t> data) {
  std::vector<std::uint8_t> tar(512, 0);
  std::memcpy(tar.data(), member.data(), member.size());
  std::snprintf(reinterpret_cast<char*>(tar.data() + 100), 8, "%07o", 0644);
  std::snprintf(reinterpret_cast<char*>(tar.data() + 124), 12, "%011llo",
                static_cast<unsigned long long>(data.size()));
  tar[156] = '0';
  std::memcpy(tar.data() + 257, "ustar", 5);
  tar.insert(tar.end(), data.begin(), data.end());
  tar.resize((tar.size() + 511) / 512 * 512 + 1024, 0);
  gzFile f = gzopen(archive.c_str(), "wb");
  ASSERT_NE(f, nullptr);
  ASSERT_EQ(gzwrite(f, tar.data(), static_cast<unsigned>(tar.size())), static_cast<int>(tar.size()));
  gzclose(f);
}

Dataset small_dataset(Index n, std::uint64_t seed) {
  std::vector<LabeledExample> ex;
  Rng rng(seed);
  for (Index i = 0; i < n; ++i) {
    LabeledExample e;
    e.image = Tensor<float>(Shape{3, 32, 32});
    for (Index k = 0; k < e.image.numel(); ++k) e.image[k] = static_cast<float>(uniform01(rng));
    e.label = static_cast<int>(i % 10);
    e.id = static_cast<std::uint64_t>(100 + i);
    ex.push_back(std::move(e));
  }
  return make_dataset(DatasetKind::cifar10r, Split::train, ex, {{"seed", seed}, {"note", "synthetic"}});
}

}  // namespace

TEST(Cifar, LoadsExtractedDirectory) {
  TempDir tmp;
  fs::create_directories(tmp.path() / kCifarDirName);
  const auto bytes = synthetic_batch();
  write_file(tmp.path() / kCifarDirName / "test_batch.bin", bytes);

  const Dataset ds = load_cifar10(tmp.path(), Split::test);
  ASSERT_EQ(ds.size(), 10000);
  const auto by_class = ds.rows_by_class();
  for (const auto& rows : by_class) EXPECT_EQ(rows.size(), 1000u);
  EXPECT_EQ(ds.labels[37], 7);
  EXPECT_EQ(ds.ids[37], 37u);
  EXPECT_FLOAT_EQ(ds.images[37 * 3072 + 5], static_cast<float>((37 * 7 + 5 * 13) % 256) / 255.0f);
  for (float v : ds.images.values()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(Cifar, SubsetsAreDeterministicAndStratified) {
  TempDir tmp;
  fs::create_directories(tmp.path() / kCifarDirName);
  write_file(tmp.path() / kCifarDirName / "test_batch.bin", synthetic_batch());

  const Dataset a = load_cifar10(tmp.path(), Split::test, Index{500}, 7);
  const Dataset b = load_cifar10(tmp.path(), Split::test, Index{500}, 7);
  const Dataset c = load_cifar10(tmp.path(), Split::test, Index{500}, 8);
  EXPECT_EQ(a.ids, b.ids);
  EXPECT_NE(a.ids, c.ids);
  ASSERT_EQ(a.size(), 500);
  for (const auto& rows : a.rows_by_class()) EXPECT_EQ(rows.size(), 50u);
  EXPECT_EQ(a.provenance.at("subset_size"), 500);
  EXPECT_EQ(a.provenance.at("seed"), 7);

  const Dataset empty = load_cifar10(tmp.path(), Split::test, Index{0}, 0);
  EXPECT_EQ(empty.size(), 0);
  EXPECT_NO_THROW(empty.validate());
  EXPECT_THROW(load_cifar10(tmp.path(), Split::test, Index{10001}, 0), ValidationError);
}

TEST(Cifar, ReadsVerifiedArchive) {
  TempDir tmp;
  const auto bytes = synthetic_batch();
  const auto archive = tmp.path() / kCifarArchiveName;
  write_tar_gz(archive, "cifar-10-batches-bin/test_batch.bin", bytes);
  const auto md5 = io::md5_hex(io::read_bytes(archive));

  const Dataset from_archive = load_cifar10(tmp.path(), Split::test, std::nullopt, 0, md5);
  fs::create_directories(tmp.path() / "dir" / kCifarDirName);
  write_file(tmp.path() / "dir" / kCifarDirName / "test_batch.bin", bytes);
  const Dataset from_dir = load_cifar10(tmp.path() / "dir", Split::test);
  EXPECT_EQ(from_archive.images, from_dir.images);
  EXPECT_EQ(from_archive.labels, from_dir.labels);
}

TEST(Cifar, ArchiveChecksumMismatchIsReported) {
  TempDir tmp;
  write_tar_gz(tmp.path() / kCifarArchiveName, "cifar-10-batches-bin/test_batch.bin", synthetic_batch());
  try {
    load_cifar10(tmp.path(), Split::test);
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find(kCifarArchiveMd5), std::string::npos);
  }
}

TEST(Cifar, MissingSourceNamesDownload) {
  TempDir tmp;
  try {
    load_cifar10(tmp.path(), Split::train);
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find(kCifarUrl), std::string::npos);
  }
}

TEST(Cifar, WrongSizedRecordFileIsRejected) {
  TempDir tmp;
  fs::create_directories(tmp.path() / kCifarDirName);
  auto bytes = synthetic_batch();
  bytes.resize(bytes.size() - 1);
  write_file(tmp.path() / kCifarDirName / "test_batch.bin", bytes);
  EXPECT_THROW(load_cifar10(tmp.path(), Split::test), IngestionError);
}

TEST(Dataset, ValidateCatchesBrokenInvariants) {
  Dataset ds = small_dataset(4, 1);
  EXPECT_NO_THROW(ds.validate());
  Dataset bad_pixel = ds;
  bad_pixel.images[3] = 1.5f;
  EXPECT_THROW(bad_pixel.validate(), ValidationError);
  Dataset bad_label = ds;
  bad_label.labels[0] = 10;
  EXPECT_THROW(bad_label.validate(), ValidationError);
  Dataset dup = ds;
  dup.ids[1] = dup.ids[0];
  EXPECT_THROW(dup.validate(), ValidationError);
}

TEST(Dataset, StratifiedRowsArePermutationFree) {
  const Dataset ds = small_dataset(60, 3);
  const auto rows = stratified_rows(ds, 25, 11);
  ASSERT_EQ(rows.size(), 25u);
  EXPECT_TRUE(std::is_sorted(rows.begin(), rows.end()));
  EXPECT_EQ(std::adjacent_find(rows.begin(), rows.end()), rows.end());
  std::array<int, kNumClasses> per{};
  for (Index r : rows) ++per[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(r)])];
  for (int c : per) EXPECT_TRUE(c == 2 || c == 3);
}

TEST(Dataset, RoundTripIsBitExact) {
  TempDir tmp;
  const Dataset ds = small_dataset(12, 5);
  const auto path = tmp.path() / "ds.bin";
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  EXPECT_EQ(back, ds);
  EXPECT_EQ(back.provenance.at("seed"), 5);
  EXPECT_EQ(dataset_fingerprint(back), dataset_fingerprint(ds));
  EXPECT_TRUE(fs::exists(sidecar_path(path)));
}

TEST(Dataset, EmptyRoundTrip) {
  TempDir tmp;
  const Dataset ds = make_dataset(DatasetKind::cifar10, Split::test, {});
  save_dataset(ds, tmp.path() / "e.bin");
  EXPECT_EQ(load_dataset(tmp.path() / "e.bin"), ds);
}

TEST(Dataset, TruncatedBlobIsFormatError) {
  TempDir tmp;
  const auto path = tmp.path() / "ds.bin";
  save_dataset(small_dataset(3, 2), path);
  auto bytes = io::read_bytes(path);
  bytes.resize(bytes.size() / 2);
  write_file(path, bytes);
  EXPECT_THROW(load_dataset(path), FormatError);
}

TEST(Dataset, CorruptedBlobIsFormatError) {
  TempDir tmp;
  const auto path = tmp.path() / "ds.bin";
  save_dataset(small_dataset(3, 2), path);
  auto bytes = io::read_bytes(path);
  bytes[bytes.size() - 20] ^= 0x40;
  write_file(path, bytes);
  EXPECT_THROW(load_dataset(path), FormatError);
}

TEST(Dataset, VersionMismatchIsExplicit) {
  TempDir tmp;
  const auto path = tmp.path() / "ds.bin";
  save_dataset(small_dataset(3, 2), path);
  auto meta = io::read_json(sidecar_path(path));
  meta["format_version"] = 99;
  io::write_json(sidecar_path(path), meta);
  try {
    load_dataset(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("format version"), std::string::npos);
  }

  save_dataset(small_dataset(3, 2), path);
  auto bytes = io::read_bytes(path);
  bytes[8] = 7;  // first byte of the blob's version field
  write_file(path, bytes);
  EXPECT_THROW(load_dataset(path), FormatError);
}

TEST(Dataset, ClassNames) {
  EXPECT_EQ(class_index("ship"), 8);
  EXPECT_EQ(class_index("3"), 3);
  EXPECT_EQ(class_name(0), "airplane");
  EXPECT_THROW(class_index("lion"), ValidationError);
  EXPECT_THROW(class_index("10"), ValidationError);
  EXPECT_EQ(parse_dataset_kind("CIFAR10NR"), DatasetKind::cifar10nr);
  EXPECT_THROW(parse_split("val"), ValidationError);
}
