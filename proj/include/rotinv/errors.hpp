#pragma once

#include <stdexcept>
#include <string>

namespace rotinv {

/// Input geometry that admits no meaningful result (zero scale, empty cloud).
class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A frame could not be built because its two defining directions collapse.
/// `dot` is the inner product (or residual length) that triggered the guard.
class DegenerateFrameError : public std::runtime_error {
 public:
  DegenerateFrameError(const std::string& what, double dot)
      : std::runtime_error(what + " (value " + std::to_string(dot) + ")"), dot_(dot) {}
  double dot() const noexcept { return dot_; }

 private:
  double dot_;
};

/// A forward pass produced NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& op)
      : std::runtime_error("non-finite value produced by op '" + op + "'"), op_(op) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rotinv
