#pragma once

#include <stdexcept>
#include <string>

namespace vml {

/// Invalid construction parameters (grid sizes, collision exponents, configs).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Two fields or operators built on different velocity grids were combined.
class GridMismatch : public std::invalid_argument {
 public:
  GridMismatch() : std::invalid_argument("fields live on different velocity grids") {}
};

/// Evaluation of the Landau kernel at its singular point.
class SingularPointError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A direct O(n^6) evaluation would exceed the configured work budget.
class ResourceGuardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Iterative linear solve did not reach its tolerance.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Too little data (frames, decay) for a requested diagnostic.
class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vml
