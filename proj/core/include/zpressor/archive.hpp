#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "zpressor/tensor.hpp"

// ZPTN tensor archive, little-endian:
//   "ZPTN" | u16 version
//   repeated until EOF:
//     u32 name length | name bytes (UTF-8) | u8 rank | u32 dims[rank] |
//     f32 payload[prod(dims)] (row-major)
namespace zp::archive {

inline constexpr char kMagic[4] = {'Z', 'P', 'T', 'N'};
inline constexpr std::uint16_t kVersion = 1;

struct Entry {
  std::string name;
  Tensor tensor;
};

void write(std::ostream& out, const std::vector<Entry>& entries);
std::vector<Entry> read(std::istream& in);

void save(const std::filesystem::path& path, const std::vector<Entry>& entries);
std::vector<Entry> load(const std::filesystem::path& path);

// Looks up `name`; throws FormatError when absent.
const Tensor& find(const std::vector<Entry>& entries, const std::string& name);

}  // namespace zp::archive
