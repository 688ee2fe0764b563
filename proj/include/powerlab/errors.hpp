#pragma once

#include <stdexcept>
#include <string>

namespace powerlab {

/// Raised when an enumeration or DP would exceed its configured size cap.
class ResourceLimitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A proposal assigns zero probability to a token the target supports.
class SupportViolation : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace powerlab
