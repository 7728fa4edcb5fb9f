#include "liftvsr/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "liftvsr/error.hpp"

namespace liftvsr::io {

namespace {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian hosts are not supported");

template <typename T>
void put(std::string& out, T v) {
  auto bits = std::bit_cast<std::array<char, sizeof(T)>>(v);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  out.append(bits.data(), bits.size());
}

class Reader {
 public:
  Reader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::array<char, sizeof(T)> bits;
    std::memcpy(bits.data(), bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  void expect_end() const {
    if (pos_ != bytes_.size()) throw DataError(what_ + ": trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError(what_ + ": truncated");
  }

  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

// Headers whose dims multiply past this are rejected before allocating.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

std::uint64_t checked_numel(const std::vector<std::uint64_t>& dims, const std::string& what) {
  std::uint64_t n = 1;
  for (auto d : dims) {
    if (d != 0 && n > kMaxElements / d) throw DataError(what + ": implausible dimensions");
    n *= d;
  }
  return n;
}

void check_magic(Reader& r, std::string_view magic, const std::string& what) {
  if (r.get_string(4) != magic) throw DataError(what + ": bad magic");
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for " + path.string());
}

std::string encode_video(const ad::Tensor& video) {
  if (video.rank() != 4) {
    throw DimensionError("video container: expected [n,h,w,c], got " + ad::shape_str(video.shape()));
  }
  std::string out = "LVSR";
  put<std::uint32_t>(out, kVideoVersion);
  for (std::size_t a = 0; a < 4; ++a) put<std::uint32_t>(out, static_cast<std::uint32_t>(video.dim(a)));
  out.reserve(out.size() + video.numel() * 8);
  for (double v : video.values()) put<double>(out, v);
  return out;
}

ad::Tensor decode_video(std::string_view bytes) {
  Reader r(bytes, "video container");
  check_magic(r, "LVSR", "video container");
  const auto version = r.get<std::uint32_t>();
  if (version != kVideoVersion) {
    throw VersionError("video container: unsupported version " + std::to_string(version));
  }
  std::vector<std::uint64_t> dims(4);
  for (auto& d : dims) d = r.get<std::uint32_t>();
  const auto count = checked_numel(dims, "video container");
  std::vector<double> values(count);
  for (auto& v : values) v = r.get<double>();
  r.expect_end();
  return ad::Tensor(ad::Shape(dims.begin(), dims.end()), std::move(values));
}

void write_video(const std::filesystem::path& path, const ad::Tensor& video) {
  write_file(path, encode_video(video));
}

ad::Tensor read_video(const std::filesystem::path& path) { return decode_video(read_file(path)); }

void write_table(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  std::string out = "LVCK";
  put<std::uint32_t>(out, kTableVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (ad::shape_numel(e.shape) != e.values.size()) {
      throw DimensionError("tensor table: entry " + e.name + " has inconsistent shape");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put<std::uint64_t>(out, d);
    for (double v : e.values) put<double>(out, v);
  }
  write_file(path, out);
}

std::vector<NamedTensor> read_table(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::string what = "tensor table " + path.string();
  Reader r(bytes, what);
  check_magic(r, "LVCK", what);
  const auto version = r.get<std::uint32_t>();
  if (version != kTableVersion) {
    throw VersionError(what + ": unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedTensor> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    e.name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw DataError(what + ": implausible rank for " + e.name);
    std::vector<std::uint64_t> dims(rank);
    for (auto& d : dims) d = r.get<std::uint64_t>();
    e.values.resize(checked_numel(dims, what));
    e.shape.assign(dims.begin(), dims.end());
    for (auto& v : e.values) v = r.get<double>();
    entries.push_back(std::move(e));
  }
  r.expect_end();
  return entries;
}

namespace {
constexpr double kCacheMagic = 1280721731.0;  // "LVSC" read as a big-endian u32
}

void write_cache(const std::filesystem::path& path, const amc::MemoryCache& cache) {
  const auto& s = cache.slots.shape();
  if (s.size() != 4) throw DimensionError("cache snapshot: slots must be [l,h,w,d]");
  std::string out;
  for (double v : {kCacheMagic, static_cast<double>(kCacheVersion), static_cast<double>(s[0]),
                   static_cast<double>(s[1]), static_cast<double>(s[2]), static_cast<double>(s[3]),
                   static_cast<double>(cache.block_id), cache.initialized ? 1.0 : 0.0}) {
    put<double>(out, v);
  }
  for (double v : cache.slots.values()) put<double>(out, v);
  write_file(path, out);
}

amc::MemoryCache read_cache(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::string what = "cache snapshot " + path.string();
  Reader r(bytes, what);
  double header[8];
  for (auto& h : header) h = r.get<double>();
  if (header[0] != kCacheMagic) throw DataError(what + ": bad magic");
  if (header[1] != static_cast<double>(kCacheVersion)) throw VersionError(what + ": unsupported version");
  std::vector<std::uint64_t> dims(4);
  for (std::size_t a = 0; a < 4; ++a) {
    const double d = header[2 + a];
    if (!(d >= 0.0 && d <= static_cast<double>(kMaxElements)) || std::floor(d) != d) {
      throw DataError(what + ": bad dimensions");
    }
    dims[a] = static_cast<std::uint64_t>(d);
  }
  std::vector<double> values(checked_numel(dims, what));
  for (auto& v : values) v = r.get<double>();
  r.expect_end();
  amc::MemoryCache cache;
  cache.slots = ad::Tensor(ad::Shape(dims.begin(), dims.end()), std::move(values));
  cache.block_id = static_cast<std::size_t>(header[6]);
  cache.initialized = header[7] != 0.0;
  return cache;
}

std::string git_blob_hash(std::string_view bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error(ErrorKind::kIo, "sha1: context allocation failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error(ErrorKind::kIo, "sha1: digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 15];
  }
  return hex;
}

std::string git_blob_hash_file(const std::filesystem::path& path) {
  return git_blob_hash(read_file(path));
}

}  // namespace liftvsr::io
