#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "styleaug/tensor.hpp"

namespace styleaug::nn {

// Little-endian binary stream helpers shared by weight and checkpoint files.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(const std::string& s);
  void tensor(const Tensor& t);
  void raw(const void* data, std::size_t bytes);

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  Tensor tensor();
  void raw(void* data, std::size_t bytes);
  bool at_end();

 private:
  std::istream& is_;
  std::string what_;
};

// FNV-1a over bytes; used for config hashes and parameter fingerprints.
std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(const std::string& s);
std::string hex64(std::uint64_t v);

}  // namespace styleaug::nn
