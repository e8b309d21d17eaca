#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fdpg {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Two distributions (or a distribution and a policy) disagree on their support list.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// Sequence space too large for exact enumeration.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// A pseudo-reward -f'(pi/p) is infinite: p(x) = 0 while f'(inf) = +inf.
class InfinitePseudoRewardError : public Error {
 public:
  using Error::Error;
};

class EstimatorStateError : public Error {
 public:
  using Error::Error;
};

class DegenerateTargetError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class InfeasibleMomentError : public Error {
 public:
  using Error::Error;
};

// Moment fitting did not reach tolerance within the iteration cap.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace fdpg
