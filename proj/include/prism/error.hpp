#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace prism {

// Categories double as CLI exit codes (see tools/prism_cli.cpp).
enum class ErrorCategory {
  config = 2,
  io = 3,
  data = 4,
  numeric = 5,
  resume = 6,
  precondition = 7,
};

std::string_view category_name(ErrorCategory c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& msg) { throw Error(c, msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(ErrorCategory::precondition, msg);
}

}  // namespace prism
