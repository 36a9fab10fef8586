#pragma once

#include <stdexcept>
#include <string>

namespace gradal {

// Status values mirror the C API error codes in include/gradal/gradal.h.
enum class Status : int {
    Ok = 0,
    ConfigError = 1,
    RuntimeError = 2,
    Inapplicable = 3,
    IoError = 4,
    InvalidArgument = 5,
};

class Error : public std::runtime_error {
  public:
    Error(Status status, const std::string& message)
        : std::runtime_error(message), status_(status) {}

    Status status() const { return status_; }

  private:
    Status status_;
};

[[noreturn]] inline void fail(Status status, const std::string& message) {
    throw Error(status, message);
}

}  // namespace gradal
