#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvfr/tc/array.hpp"

namespace mvfr::tc {

// Binary tensor container: magic "MVFR", u32 format version, u32 entry count,
// then per entry (u32 name length + UTF-8 name, u8 dtype, u8 rank, u32 dims,
// raw little-endian payload). Round-trips are bit-exact.
enum class Dtype : uint8_t { kF32 = 0, kF64 = 1, kI64 = 2, kU8 = 3 };

constexpr uint32_t kContainerVersion = 1;

struct ContainerEntry {
  std::string name;
  Dtype dtype = Dtype::kF32;
  std::vector<uint32_t> dims;
  std::vector<uint8_t> payload;

  size_t count() const {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
  }
};

void write_container(const std::string& path, const std::vector<ContainerEntry>& entries);
std::vector<ContainerEntry> read_container(const std::string& path);

ContainerEntry entry_from_f32(const std::string& name, const Array<float>& a);
ContainerEntry entry_from_f64(const std::string& name, const Array<double>& a);
ContainerEntry entry_from_i64(const std::string& name, const std::vector<int64_t>& v);
ContainerEntry entry_from_u8(const std::string& name, const std::vector<uint8_t>& v,
                             std::vector<uint32_t> dims = {});

Array<float> entry_to_f32(const ContainerEntry& e);
Array<double> entry_to_f64(const ContainerEntry& e);
std::vector<int64_t> entry_to_i64(const ContainerEntry& e);
std::vector<uint8_t> entry_to_u8(const ContainerEntry& e);

const ContainerEntry& find_entry(const std::vector<ContainerEntry>& entries,
                                 const std::string& name);
const ContainerEntry* find_entry_opt(const std::vector<ContainerEntry>& entries,
                                     const std::string& name);

}  // namespace mvfr::tc
