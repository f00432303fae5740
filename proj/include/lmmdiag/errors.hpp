#pragma once

#include <stdexcept>
#include <string>

namespace lmmdiag {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidInput : Error {
  explicit InvalidInput(const std::string& msg) : Error(msg) {}
};

struct NumericalFailure : Error {
  explicit NumericalFailure(const std::string& msg) : Error(msg) {}
};

struct NotEstimable : Error {
  explicit NotEstimable(const std::string& msg) : Error(msg) {}
};

struct DegenerateModel : Error {
  explicit DegenerateModel(const std::string& msg) : Error(msg) {}
};

struct ParseError : Error {
  ParseError(const std::string& msg, long line) : Error(msg + " (line " + std::to_string(line) + ")"), line(line) {}
  long line;
};

struct EmptyDesign : Error {
  explicit EmptyDesign(const std::string& msg) : Error(msg) {}
};

struct UnsupportedCovariance : Error {
  explicit UnsupportedCovariance(const std::string& msg) : Error(msg) {}
};

struct SimulationUnstable : Error {
  explicit SimulationUnstable(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace lmmdiag
