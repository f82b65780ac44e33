#pragma once

#include <stdexcept>
#include <string>

namespace ldm {

// Bad caller input: dimension mismatch, negative variance, out-of-range time.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class SingularMatrixError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A NaN or Inf showed up. `where()` names the primitive or loss component.
class NonFiniteError : public std::runtime_error {
public:
    NonFiniteError(std::string where, const std::string& what)
        : std::runtime_error(what), where_(std::move(where)) {}
    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class NotFoundError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input file does not conform to the CSV/JSON schema.
class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnderdeterminedFit : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class EmptyInput : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PreconditionError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace ldm
