#pragma once

#include <cstddef>
#include <exception>
#include <stdexcept>
#include <string>
#include <vector>

namespace fixfit {

// Process exit codes used by the command-line front end.
enum class ExitCode : int { ok = 0, config = 2, data = 3, numerical = 4 };

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::data; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::config; }
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::numerical; }
};

class InvalidParameterError : public DataError {
 public:
  using DataError::DataError;
};

class UnboundedOrbitError : public DataError {
 public:
  using DataError::DataError;
};

class RangeError : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

class FilterExhaustedError : public DataError {
 public:
  using DataError::DataError;
};

class UnsupportedDimensionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class SimulationDivergedError : public NumericalError {
 public:
  SimulationDivergedError(double time_ms, const std::string& what)
      : NumericalError(what), time_ms_(time_ms) {}
  double time_ms() const noexcept { return time_ms_; }

 private:
  double time_ms_;
};

class UndefinedCorrelationError : public NumericalError {
 public:
  UndefinedCorrelationError(std::size_t region, const std::string& what)
      : NumericalError(what), region_(region) {}
  std::size_t region() const noexcept { return region_; }

 private:
  std::size_t region_;
};

class TrainingDivergedError : public NumericalError {
 public:
  TrainingDivergedError(int epoch, const std::string& what)
      : NumericalError(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

class RankDeficientError : public NumericalError {
 public:
  RankDeficientError(std::vector<std::size_t> inputs, const std::string& what)
      : NumericalError(what), inputs_(std::move(inputs)) {}
  const std::vector<std::size_t>& inputs() const noexcept { return inputs_; }

 private:
  std::vector<std::size_t> inputs_;
};

class UndefinedSensitivityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

inline ExitCode exit_code_for(const std::exception& e) noexcept {
  if (auto* err = dynamic_cast<const Error*>(&e)) return err->exit_code();
  return ExitCode::data;
}

}  // namespace fixfit
