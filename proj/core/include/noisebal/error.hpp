#pragma once

#include <stdexcept>
#include <string>

namespace noisebal {

/// Invalid arguments or a configuration that cannot be satisfied.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent data (CSV parse failures, invariant violations).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A statistic that has no anchors (zero denominator) was requested.
class AbsentStatistic : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Optimisation produced a non-finite value.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int epoch, long step)
      : std::runtime_error(what), epoch_(epoch), step_(step) {}

  int epoch() const noexcept { return epoch_; }
  long step() const noexcept { return step_; }

 private:
  int epoch_;
  long step_;
};

}  // namespace noisebal
