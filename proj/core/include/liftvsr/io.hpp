#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "liftvsr/amc.hpp"
#include "liftvsr/tensor.hpp"

// Little-endian binary formats shared by the library and the command-line
// tool: the raw video container, named tensor tables (checkpoints), and
// cache snapshots.
namespace liftvsr::io {

inline constexpr std::uint32_t kVideoVersion = 1;
inline constexpr std::uint32_t kTableVersion = 1;
inline constexpr std::uint32_t kCacheVersion = 1;

// "LVSR", u32 version, u32 n, h, w, c, then float64 frames row-major.
void write_video(const std::filesystem::path& path, const ad::Tensor& video);
ad::Tensor read_video(const std::filesystem::path& path);
std::string encode_video(const ad::Tensor& video);
ad::Tensor decode_video(std::string_view bytes);

struct NamedTensor {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

// "LVCK", u32 version, u32 count, then per entry: u32 name length, name
// bytes, u32 rank, u64 dims, float64 payload.
void write_table(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> read_table(const std::filesystem::path& path);

// Eight float64 header values (magic, version, l, h, w, d, block id,
// reserved) followed by the slots.
void write_cache(const std::filesystem::path& path, const amc::MemoryCache& cache);
amc::MemoryCache read_cache(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// SHA-1 over "blob <size>\0" + bytes, as git hashes file contents.
std::string git_blob_hash(std::string_view bytes);
std::string git_blob_hash_file(const std::filesystem::path& path);

}  // namespace liftvsr::io
