#pragma once

#include <stdexcept>
#include <string>

namespace kdmvs {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during training. `step` is the optimizer step
// that produced it.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

// Cross-view check left no validated pixel anywhere.
class EmptyPseudoLabelError : public Error {
 public:
  using Error::Error;
};

}  // namespace kdmvs
