#pragma once

#include <stdexcept>
#include <string>

namespace advloop {

/// Failure categories. The CLI maps each to a distinct exit code.
enum class ErrorKind {
  invalid_argument,
  invalid_config,
  missing_input,
  untrained_model,
  numerical,
  io,
  network,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::invalid_argument, what);
}

}  // namespace advloop
