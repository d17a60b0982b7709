#include "mvfr/hash.hpp"

#include <cstdio>
#include <fstream>

#include "mvfr/common.hpp"

namespace mvfr {

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

uint64_t hash_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  MVFR_CHECK_IO(is.is_open(), "cannot open '" << path << "' for hashing");
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    h = fnv1a64(buf, size_t(is.gcount()), h);
  }
  return h;
}

}  // namespace mvfr
