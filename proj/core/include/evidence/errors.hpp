#ifndef EVIDENCE_ERRORS_HPP
#define EVIDENCE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace evidence {

// Base class for everything thrown by this library.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& what) : std::runtime_error(what) {}
};

// Arguments that violate a documented precondition (bad sizes, labels out of
// range, asymmetric alpha where symmetry is required, ...).
class invalid_input : public error {
 public:
  using error::error;
};

// Data that defeats a data-driven rule (e.g. constant sample for the
// range-based hyperparameter rules).
class degenerate_data : public error {
 public:
  using error::error;
};

// Refusal of a combinatorially infeasible request (K^n, Bell(n), K! guards).
class size_guard : public error {
 public:
  using error::error;
};

// Iterative schemes that fail to converge (bridge recursion, quadrature
// node doubling, root bracketing). Message carries the iteration trace.
class convergence_failure : public error {
 public:
  using error::error;
};

// A structurally valid run whose Monte Carlo output cannot support an
// estimate (zero ordinate mass, particle collapse, rare modal partition).
class degenerate_estimate : public error {
 public:
  using error::error;
};

// Dataset / configuration parsing problems; message carries the location.
class parse_failure : public error {
 public:
  using error::error;
};

}  // namespace evidence

#endif
