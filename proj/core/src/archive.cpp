#include "zpressor/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "zpressor/error.hpp"

namespace zp::archive {
namespace {

static_assert(sizeof(float) == 4);

template <class U>
void put_le(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <class U>
U get_le(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw FormatError(std::string("ZPTN: truncated while reading ") + what);
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<U>(bytes[i]) << (8 * i));
  }
  return value;
}

}  // namespace

void write(std::ostream& out, const std::vector<Entry>& entries) {
  out.write(kMagic, 4);
  put_le<std::uint16_t>(out, kVersion);
  for (const auto& e : entries) {
    if (e.tensor.rank() > 255) throw ShapeError("ZPTN: rank exceeds 255");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : e.tensor.span()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw FormatError("ZPTN: write failed");
}

std::vector<Entry> read(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("ZPTN: bad magic");
  }
  const auto version = get_le<std::uint16_t>(in, "version");
  if (version != kVersion) {
    throw FormatError("ZPTN: unsupported version " + std::to_string(version));
  }
  std::vector<Entry> entries;
  while (in.peek() != std::char_traits<char>::eof()) {
    Entry e;
    const auto len = get_le<std::uint32_t>(in, "name length");
    e.name.resize(len);
    if (!in.read(e.name.data(), len)) throw FormatError("ZPTN: truncated name");
    const auto rank = get_le<std::uint8_t>(in, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = get_le<std::uint32_t>(in, "dims");
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<float>(get_le<std::uint32_t>(in, "payload"));
    e.tensor = Tensor(std::move(shape), std::span<const float>(data));
    entries.push_back(std::move(e));
  }
  return entries;
}

void save(const std::filesystem::path& path, const std::vector<Entry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("ZPTN: cannot open " + path.string() + " for writing");
  write(out, entries);
}

std::vector<Entry> load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("ZPTN: cannot open " + path.string());
  return read(in);
}

const Tensor& find(const std::vector<Entry>& entries, const std::string& name) {
  for (const auto& e : entries) {
    if (e.name == name) return e.tensor;
  }
  throw FormatError("ZPTN: missing tensor '" + name + "'");
}

}  // namespace zp::archive
