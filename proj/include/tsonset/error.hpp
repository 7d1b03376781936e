#pragma once

#include <stdexcept>
#include <string>

namespace tsonset {

// Exit codes used by the command-line tool.
enum class ExitCode : int {
  ok = 0,
  input_error = 2,
  numerical_failure = 3,
  invariant_violation = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Bad arguments, malformed files, violated preconditions.
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ExitCode::input_error, what) {}
};

// Factorization failures and hard non-convergence.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what)
      : Error(ExitCode::numerical_failure, what) {}
};

class InvariantError : public Error {
 public:
  explicit InvariantError(const std::string& what)
      : Error(ExitCode::invariant_violation, what) {}
};

}  // namespace tsonset
