#include "maven/tensor_io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "maven/error.hpp"

namespace maven {

namespace {

constexpr char kMagic[4] = {'M', 'V', 'T', '1'};

void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (offset + 4 > bytes.size()) throw DataError("truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> encode_mvt1(const Tensor& t) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.reserve(8 + 4 * t.ndim() + 4 * t.size());
  put_u32le(out, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t d : t.dims()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("dim too large for MVT1");
    put_u32le(out, static_cast<std::uint32_t>(d));
  }
  for (double v : t.values()) {
    const auto f = static_cast<float>(v);
    if (!std::isfinite(f)) throw DataError("non-finite value cannot be serialized");
    put_u32le(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Tensor decode_mvt1(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw DataError("missing MVT1 magic");
  const std::uint32_t ndim = get_u32le(bytes, 4);
  if (ndim == 0) throw DataError("MVT1 tensor with zero dims");
  Dims dims;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const std::uint32_t d = get_u32le(bytes, 8 + 4 * i);
    if (d == 0) throw DataError("MVT1 dim of zero");
    dims.push_back(d);
    count *= d;
  }
  const std::size_t offset = 8 + 4 * static_cast<std::size_t>(ndim);
  if (bytes.size() != offset + 4 * count) {
    throw DataError("MVT1 payload holds " + std::to_string(bytes.size() - offset) + " bytes, expected " +
                    std::to_string(4 * count));
  }
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float f = std::bit_cast<float>(get_u32le(bytes, offset + 4 * i));
    if (!std::isfinite(f)) throw DataError("MVT1 payload contains NaN/Inf at element " + std::to_string(i));
    data[i] = f;
  }
  return Tensor(std::move(dims), std::move(data));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_file_atomic(path, encode_mvt1(t)); }

Tensor read_tensor(const std::filesystem::path& path) {
  try {
    return decode_mvt1(read_file_bytes(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw InvariantError("sha256 failed");
  }
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(digest[i]);
  return os.str();
}

std::string sha256_hex(const std::string& text) {
  return sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string tensor_checksum(const Tensor& t) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(4 * t.ndim() + 8 * t.size());
  for (std::size_t d : t.dims()) put_u32le(bytes, static_cast<std::uint32_t>(d));
  for (double v : t.values()) put_u64le(bytes, std::bit_cast<std::uint64_t>(v));
  return sha256_hex(bytes);
}

}  // namespace maven
