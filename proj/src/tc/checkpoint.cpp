#include "mvfr/tc/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "mvfr/common.hpp"

namespace mvfr::tc {

namespace {

constexpr char kMagic[4] = {'M', 'V', 'F', 'R'};

size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::kF32: return 4;
    case Dtype::kF64: return 8;
    case Dtype::kI64: return 8;
    case Dtype::kU8: return 1;
  }
  throw IoError("container: unknown dtype code");
}

template <class T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  MVFR_CHECK_IO(bool(is), "container: unexpected end of file");
  return v;
}

}  // namespace

void write_container(const std::string& path, const std::vector<ContainerEntry>& entries) {
  std::ofstream os(path, std::ios::binary);
  MVFR_CHECK_IO(os.is_open(), "container: cannot open '" << path << "' for writing");
  os.write(kMagic, 4);
  put<uint32_t>(os, kContainerVersion);
  put<uint32_t>(os, uint32_t(entries.size()));
  for (const auto& e : entries) {
    put<uint32_t>(os, uint32_t(e.name.size()));
    os.write(e.name.data(), std::streamsize(e.name.size()));
    put<uint8_t>(os, uint8_t(e.dtype));
    put<uint8_t>(os, uint8_t(e.dims.size()));
    for (uint32_t d : e.dims) put<uint32_t>(os, d);
    MVFR_CHECK_IO(e.payload.size() == e.count() * dtype_size(e.dtype),
                  "container: entry '" << e.name << "' payload size mismatch");
    os.write(reinterpret_cast<const char*>(e.payload.data()),
             std::streamsize(e.payload.size()));
  }
  MVFR_CHECK_IO(bool(os), "container: write to '" << path << "' failed");
}

std::vector<ContainerEntry> read_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  MVFR_CHECK_IO(is.is_open(), "container: cannot open '" << path << "'");
  char magic[4];
  is.read(magic, 4);
  MVFR_CHECK_IO(bool(is) && std::memcmp(magic, kMagic, 4) == 0,
                "container: '" << path << "' is not an MVFR container");
  const uint32_t version = get<uint32_t>(is);
  MVFR_CHECK_IO(version == kContainerVersion,
                "container: '" << path << "' has format version " << version
                               << ", this build reads version " << kContainerVersion);
  const uint32_t count = get<uint32_t>(is);
  std::vector<ContainerEntry> entries(count);
  for (auto& e : entries) {
    const uint32_t name_len = get<uint32_t>(is);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    e.dtype = Dtype(get<uint8_t>(is));
    const uint8_t rank = get<uint8_t>(is);
    e.dims.resize(rank);
    for (auto& d : e.dims) d = get<uint32_t>(is);
    e.payload.resize(e.count() * dtype_size(e.dtype));
    is.read(reinterpret_cast<char*>(e.payload.data()), std::streamsize(e.payload.size()));
    MVFR_CHECK_IO(bool(is), "container: truncated entry '" << e.name << "' in " << path);
  }
  return entries;
}

namespace {

template <class T>
ContainerEntry make_entry(const std::string& name, Dtype dt, const std::vector<size_t>& shape,
                          const T* data, size_t n) {
  ContainerEntry e;
  e.name = name;
  e.dtype = dt;
  for (size_t d : shape) e.dims.push_back(uint32_t(d));
  e.payload.resize(n * sizeof(T));
  std::memcpy(e.payload.data(), data, e.payload.size());
  return e;
}

}  // namespace

ContainerEntry entry_from_f32(const std::string& name, const Array<float>& a) {
  return make_entry(name, Dtype::kF32, a.shape, a.data.data(), a.size());
}
ContainerEntry entry_from_f64(const std::string& name, const Array<double>& a) {
  return make_entry(name, Dtype::kF64, a.shape, a.data.data(), a.size());
}
ContainerEntry entry_from_i64(const std::string& name, const std::vector<int64_t>& v) {
  return make_entry(name, Dtype::kI64, {v.size()}, v.data(), v.size());
}
ContainerEntry entry_from_u8(const std::string& name, const std::vector<uint8_t>& v,
                             std::vector<uint32_t> dims) {
  ContainerEntry e;
  e.name = name;
  e.dtype = Dtype::kU8;
  e.dims = dims.empty() ? std::vector<uint32_t>{uint32_t(v.size())} : std::move(dims);
  e.payload = v;
  MVFR_CHECK_IO(e.payload.size() == e.count(), "container: u8 entry dims mismatch");
  return e;
}

namespace {

template <class T>
std::vector<T> payload_as(const ContainerEntry& e, Dtype want, const char* what) {
  MVFR_CHECK_IO(e.dtype == want,
                "container: entry '" << e.name << "' is not " << what);
  std::vector<T> out(e.count());
  std::memcpy(out.data(), e.payload.data(), e.payload.size());
  return out;
}

std::vector<size_t> entry_shape(const ContainerEntry& e) {
  std::vector<size_t> s;
  for (uint32_t d : e.dims) s.push_back(d);
  return s;
}

}  // namespace

Array<float> entry_to_f32(const ContainerEntry& e) {
  return Array<float>::from(entry_shape(e), payload_as<float>(e, Dtype::kF32, "f32"));
}
Array<double> entry_to_f64(const ContainerEntry& e) {
  return Array<double>::from(entry_shape(e), payload_as<double>(e, Dtype::kF64, "f64"));
}
std::vector<int64_t> entry_to_i64(const ContainerEntry& e) {
  return payload_as<int64_t>(e, Dtype::kI64, "i64");
}
std::vector<uint8_t> entry_to_u8(const ContainerEntry& e) {
  return payload_as<uint8_t>(e, Dtype::kU8, "u8");
}

const ContainerEntry* find_entry_opt(const std::vector<ContainerEntry>& entries,
                                     const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

const ContainerEntry& find_entry(const std::vector<ContainerEntry>& entries,
                                 const std::string& name) {
  const ContainerEntry* e = find_entry_opt(entries, name);
  MVFR_CHECK_IO(e != nullptr, "container: missing entry '" << name << "'");
  return *e;
}

}  // namespace mvfr::tc
