#include "styleaug/nn/serialize.hpp"

#include <bit>
#include <cstring>
#include <iomanip>
#include <sstream>

namespace styleaug::nn {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {
constexpr std::uint64_t kMaxString = 1ULL << 30;
constexpr std::uint32_t kMaxRank = 8;
}  // namespace

void BinaryWriter::raw(const void* data, std::size_t bytes) {
  os_.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}
void BinaryWriter::u32(std::uint32_t v) { raw(&v, sizeof v); }
void BinaryWriter::u64(std::uint64_t v) { raw(&v, sizeof v); }
void BinaryWriter::f64(double v) { raw(&v, sizeof v); }
void BinaryWriter::str(const std::string& s) {
  u64(s.size());
  raw(s.data(), s.size());
}
void BinaryWriter::tensor(const Tensor& t) {
  u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) u64(d);
  raw(t.data(), t.size() * sizeof(float));
}

void BinaryReader::raw(void* data, std::size_t bytes) {
  is_.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(is_.gcount()) != bytes) {
    throw FormatError(what_ + ": truncated file");
  }
}
std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  raw(&v, sizeof v);
  return v;
}
std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  raw(&v, sizeof v);
  return v;
}
double BinaryReader::f64() {
  double v;
  raw(&v, sizeof v);
  return v;
}
std::string BinaryReader::str() {
  const auto n = u64();
  if (n > kMaxString) throw FormatError(what_ + ": corrupt string length");
  std::string s(n, '\0');
  raw(s.data(), n);
  return s;
}
Tensor BinaryReader::tensor() {
  const auto rank = u32();
  if (rank > kMaxRank) throw FormatError(what_ + ": corrupt tensor rank");
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = u64();
  const auto count = Tensor::count(shape);
  if (count > (1ULL << 32)) throw FormatError(what_ + ": corrupt tensor shape");
  std::vector<float> data(count);
  raw(data.data(), count * sizeof(float));
  return Tensor(std::move(shape), std::move(data));
}
bool BinaryReader::at_end() { return is_.peek() == std::char_traits<char>::eof(); }

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace styleaug::nn
