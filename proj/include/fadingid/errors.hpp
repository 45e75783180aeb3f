#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fadingid {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or dimension disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside a function's mathematical domain (e.g. log of 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Violated precondition of an operation.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Factorization breakdown. `pivot` is the index of the failing diagonal.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::size_t pivot) : Error(what), pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Simulated trajectory left the admissible range.
class InstabilityError : public Error {
 public:
  InstabilityError(const std::string& what, std::size_t step) : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fadingid
