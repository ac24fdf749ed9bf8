#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace mkv {

using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using Mat = Eigen::MatrixXd;

// Which large-population problem a spec describes: mean-field game or
// control of McKean-Vlasov dynamics.
enum class ControlKind { kMfg, kMkv };

// Thrown on violated preconditions (dimension mismatch, bad arguments).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite value produced where a finite one is required. Carries the
// offending atom index when one exists (-1 otherwise).
class NumericDomainError : public std::runtime_error {
 public:
  explicit NumericDomainError(const std::string& what, int atom = -1)
      : std::runtime_error(what), atom_index(atom) {}
  int atom_index;
};

// Iterative scheme ran out of its iteration budget. Carries the last two
// fixed-point gaps so the caller can see whether the scheme was diverging.
class ConvergenceFailure : public std::runtime_error {
 public:
  ConvergenceFailure(const std::string& what, double prev_gap, double last_gap)
      : std::runtime_error(what), previous_gap(prev_gap), final_gap(last_gap) {}
  double previous_gap;
  double final_gap;
};

class IllConditionedBasis : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Block length underflow in the long-horizon recursion, or a Riccati
// trajectory leaving the finite range: the scenario is outside the
// well-posed regime.
class BlowUpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mkv
