#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvfr {

// Error categories map to process exit codes (2/3/4) in the CLI.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

inline std::string shape_str(const std::vector<size_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

#define MVFR_CHECK(cond, msg)                           \
  do {                                                  \
    if (!(cond)) {                                      \
      std::ostringstream os_;                           \
      os_ << msg;                                       \
      throw ::mvfr::ValidationError(os_.str());         \
    }                                                   \
  } while (0)

#define MVFR_CHECK_NUMERIC(cond, msg)                   \
  do {                                                  \
    if (!(cond)) {                                      \
      std::ostringstream os_;                           \
      os_ << msg;                                       \
      throw ::mvfr::NumericError(os_.str());            \
    }                                                   \
  } while (0)

#define MVFR_CHECK_IO(cond, msg)                        \
  do {                                                  \
    if (!(cond)) {                                      \
      std::ostringstream os_;                           \
      os_ << msg;                                       \
      throw ::mvfr::IoError(os_.str());                 \
    }                                                   \
  } while (0)

inline const char* version_string() { return "mvfr 0.1.0"; }

}  // namespace mvfr
