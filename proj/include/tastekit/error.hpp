#pragma once

#include <stdexcept>
#include <string>

namespace tastekit {

// Failure categories. The CLI maps them onto exit codes 2, 3 and 4.
enum class ErrorKind { invalid_argument, data, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, const std::string& message,
                    ErrorKind kind = ErrorKind::invalid_argument) {
  if (!condition) throw Error(kind, message);
}

}  // namespace tastekit
