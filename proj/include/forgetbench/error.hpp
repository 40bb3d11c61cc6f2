#ifndef FORGETBENCH_ERROR_HPP
#define FORGETBENCH_ERROR_HPP

#include <stdexcept>
#include <string>

namespace fb {

/// Caller passed a value outside an operation's domain.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Programming error: shapes, dimensions or call order do not line up.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A NaN or Inf surfaced during computation.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A persisted artifact (checkpoint, corpus, fixtures) could not be read back.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A scored token has |log p| below the division floor of the relative MRD.
class DegenerateToken : public std::runtime_error {
 public:
  DegenerateToken(const std::string& what, std::size_t position)
      : std::runtime_error(what), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

/// Sampling weights cannot be normalized (some MRD is zero).
class DegenerateWeights : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fb

#endif  // FORGETBENCH_ERROR_HPP
