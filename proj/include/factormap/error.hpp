#pragma once

#include <stdexcept>
#include <string>

namespace factormap {

// Failure categories map one-to-one onto CLI exit codes.
enum class ErrorKind { kInvalidInput, kConfig, kData, kDivergence };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct InvalidInput : Error {
  explicit InvalidInput(const std::string& what) : Error(ErrorKind::kInvalidInput, what) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};
struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& what) : Error(ErrorKind::kDivergence, what) {}
};

}  // namespace factormap
