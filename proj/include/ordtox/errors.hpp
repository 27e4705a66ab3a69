#pragma once

#include <stdexcept>
#include <string>

namespace ordtox {

// Exit-code classes shared by the CLI and the HTTP service.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when some patient's censoring evidence cannot be satisfied by any
/// practical cutpoint ratio. Carries the offending patient id (0 if none).
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(const std::string& what, int patient_id)
      : std::runtime_error(what), patient_id_(patient_id) {}
  int patient_id() const noexcept { return patient_id_; }

 private:
  int patient_id_;
};

}  // namespace ordtox
