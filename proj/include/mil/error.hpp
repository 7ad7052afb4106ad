#pragma once

#include <stdexcept>
#include <string>

namespace mil {

enum class ErrorKind {
  validation,   // bad flags, precondition violations
  contract,     // API misuse (non-scalar loss, mixed graphs)
  dimension,    // shape mismatch
  empty_bag,    // reduction over zero instances
  data,         // malformed files, inconsistent datasets
  numeric,      // non-finite values
  unsupported,  // e.g. attention dump on a baseline model
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Process exit codes used by the CLI.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation:
    case ErrorKind::contract:
    case ErrorKind::unsupported:
      return 2;
    case ErrorKind::dimension:
    case ErrorKind::empty_bag:
    case ErrorKind::data:
      return 3;
    case ErrorKind::numeric:
      return 4;
  }
  return 1;
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace mil
