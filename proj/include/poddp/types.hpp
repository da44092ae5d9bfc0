#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace poddp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when every latent hypothesis assigns (numerically) zero likelihood
/// to the evidence.
class DegenerateEvidence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DifferentiationFailure : public std::runtime_error {
 public:
  DifferentiationFailure(const std::string& what, int coordinate)
      : std::runtime_error(what + " (coordinate " + std::to_string(coordinate) + ")"),
        coordinate_(coordinate) {}

  int coordinate() const { return coordinate_; }

 private:
  int coordinate_;
};

class RolloutDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BackwardFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StructuralCorruption : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace poddp
