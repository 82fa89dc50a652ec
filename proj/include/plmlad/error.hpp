#pragma once

#include <stdexcept>
#include <string>

namespace plmlad {

// Invalid configuration or shape mismatch. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition on a function argument was violated.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A parameter lies outside the feasible set of the objective being evaluated.
class InfeasibleError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class DegenerateDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IllConditionedError : public std::runtime_error {
 public:
  IllConditionedError(const std::string& what, double condition_number)
      : std::runtime_error(what), condition_number_(condition_number) {}

  double condition_number() const noexcept { return condition_number_; }

 private:
  double condition_number_;
};

}  // namespace plmlad
