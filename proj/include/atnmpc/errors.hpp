#pragma once

#include <stdexcept>
#include <string>

namespace atnmpc {

/// Invalid scenario, parameter or model configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// A tightened constraint set came out empty. CLI exit code 3.
class InfeasibleTightening : public std::runtime_error {
 public:
  InfeasibleTightening(const std::string& what, int step)
      : std::runtime_error(what), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

/// Plant, solver or controller produced non-finite values. CLI exit code 4.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace atnmpc
