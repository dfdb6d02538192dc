#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace s2tdpt {

// Error categories double as the machine-parseable tag printed by the CLI.
enum class ErrorCategory { contract, config, data, io, numeric, usage };

inline std::string_view category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::contract: return "CONTRACT";
    case ErrorCategory::config: return "CONFIG";
    case ErrorCategory::data: return "DATA";
    case ErrorCategory::io: return "IO";
    case ErrorCategory::numeric: return "NUMERIC";
    case ErrorCategory::usage: return "USAGE";
  }
  return "UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& message) {
  throw Error(c, message);
}

inline void require(bool condition, ErrorCategory c, const char* message) {
  if (!condition) fail(c, message);
}

inline void require(bool condition, ErrorCategory c, const std::string& message) {
  if (!condition) fail(c, message);
}

}  // namespace s2tdpt
