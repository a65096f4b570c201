#include "styleadv/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace styleadv::io {
namespace {

std::string digest_hex(const EVP_MD* md, std::span<const std::uint8_t> bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char out[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), md, nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), out, &len) != 1) {
    throw Error("message digest computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string s(2 * len, '0');
  for (unsigned int i = 0; i < len; ++i) {
    s[2 * i] = hex[out[i] >> 4];
    s[2 * i + 1] = hex[out[i] & 15];
  }
  return s;
}

static_assert(std::endian::native == std::endian::little, "blob formats assume a little-endian host");

}  // namespace

std::string sha256_hex(std::span<const std::uint8_t> bytes) { return digest_hex(EVP_sha256(), bytes); }

std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string md5_hex(std::span<const std::uint8_t> bytes) { return digest_hex(EVP_md5(), bytes); }

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_bytes(path)); }

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw FormatError("short read from " + path.string());
  }
  return bytes;
}

std::string read_text(const std::filesystem::path& path) {
  auto b = read_bytes(path);
  return std::string(b.begin(), b.end());
}

void write_bytes_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_bytes_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Json read_json(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FormatError("missing JSON document " + path.string());
  try {
    return Json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& doc) {
  write_text_atomic(path, doc.dump(2) + "\n");
}

void BlobWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void BlobWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void BlobWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void BlobWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void BlobWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

template <class T>
void BlobWriter::tensor(const Tensor<T>& t) {
  u32(static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.shape().dims()) i64(d);
  const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
  bytes_.insert(bytes_.end(), p, p + t.numel() * static_cast<Index>(sizeof(T)));
}

void BlobReader::need(std::size_t n) const {
  if (remaining() < n) {
    throw FormatError(what_ + ": truncated (needed " + std::to_string(n) + " more bytes at offset " +
                      std::to_string(pos_) + ", " + std::to_string(remaining()) + " left)");
  }
}

std::uint8_t BlobReader::u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint32_t BlobReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

std::uint64_t BlobReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

float BlobReader::f32() { return std::bit_cast<float>(u32()); }
double BlobReader::f64() { return std::bit_cast<double>(u64()); }

std::string BlobReader::str() {
  const auto n = u32();
  auto b = raw(n);
  return std::string(b.begin(), b.end());
}

std::span<const std::uint8_t> BlobReader::raw(std::size_t n) {
  need(n);
  auto s = bytes_.subspan(pos_, n);
  pos_ += n;
  return s;
}

template <class T>
Tensor<T> BlobReader::tensor() {
  const auto rank = u32();
  if (rank > 8) throw FormatError(what_ + ": implausible tensor rank " + std::to_string(rank));
  std::vector<Index> dims(rank);
  for (auto& d : dims) {
    d = i64();
    if (d < 0) throw FormatError(what_ + ": negative tensor dimension");
  }
  Shape shape(std::move(dims));
  const auto bytes = static_cast<std::size_t>(shape.numel()) * sizeof(T);
  auto b = raw(bytes);
  Tensor<T> t(std::move(shape));
  if (bytes > 0) std::memcpy(t.data(), b.data(), bytes);
  return t;
}

void BlobReader::expect_end() const {
  if (!at_end()) {
    throw FormatError(what_ + ": " + std::to_string(remaining()) + " unexpected trailing bytes");
  }
}

void write_header(BlobWriter& w, std::string_view magic, std::uint32_t version) {
  std::string m(magic);
  m.resize(8, '\0');
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>(m.data()), 8));
  w.u32(version);
}

void read_header(BlobReader& r, std::string_view magic, std::uint32_t version) {
  std::string m(magic);
  m.resize(8, '\0');
  auto got = r.raw(8);
  if (!std::equal(got.begin(), got.end(), reinterpret_cast<const std::uint8_t*>(m.data()))) {
    throw FormatError("not a " + std::string(magic) + " blob (bad magic)");
  }
  const auto v = r.u32();
  if (v != version) {
    throw FormatError(std::string(magic) + " format version " + std::to_string(v) +
                      " is not supported (expected " + std::to_string(version) + ")");
  }
}

template void BlobWriter::tensor(const Tensor<float>&);
template void BlobWriter::tensor(const Tensor<double>&);
template void BlobWriter::tensor(const Tensor<std::uint8_t>&);
template Tensor<float> BlobReader::tensor();
template Tensor<double> BlobReader::tensor();
template Tensor<std::uint8_t> BlobReader::tensor();

}  // namespace styleadv::io
