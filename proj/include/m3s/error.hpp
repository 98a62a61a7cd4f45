#pragma once

#include <stdexcept>
#include <string>

namespace m3s {

// Raised for bad inputs or configuration. `field()` names the offending
// parameter so front ends can report it.
class ValidationError : public std::invalid_argument {
public:
    ValidationError(std::string field, const std::string& message)
        : std::invalid_argument(field.empty() ? message : field + ": " + message),
          field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

// A backend does not provide a capability an operation needs.
class CapabilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace m3s
