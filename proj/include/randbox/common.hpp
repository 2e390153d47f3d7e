#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

namespace randbox {

/// Raised when an input violates an operation's contract.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
[[noreturn]] inline void fail_check(const char* expr, const char* file, int line,
                                    const std::string& msg) {
  std::ostringstream os;
  os << "check failed: " << expr << " at " << file << ":" << line;
  if (!msg.empty()) os << " (" << msg << ")";
  throw ContractError(os.str());
}
}  // namespace detail

// Contract checks stay active in release builds; training-step invariants
// (partition exactness, label visibility) rely on them.
#define RB_CHECK(cond)                                                   \
  do {                                                                   \
    if (!(cond)) ::randbox::detail::fail_check(#cond, __FILE__, __LINE__, ""); \
  } while (0)

#define RB_CHECK_MSG(cond, msg)                                          \
  do {                                                                   \
    if (!(cond)) ::randbox::detail::fail_check(#cond, __FILE__, __LINE__, (msg)); \
  } while (0)

inline bool nearly_equal(double a, double b, double tol) {
  return std::abs(a - b) <= tol;
}

}  // namespace randbox
