#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace toa_fusion {

/// Base of every error thrown by the library. The category drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  enum class Category { kConfig = 1, kData = 2, kNumerical = 3 };

  Error(Category category, const std::string& what) : std::runtime_error(what), category_(category) {}
  Category category() const { return category_; }

 private:
  Category category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Category::kConfig, what) {}
};

class DataError : public Error {
 public:
  enum class Kind {
    kMalformedLine,
    kNonMonotonicTimestamp,
    kIoFailure,
    kUnknownBsId,
    kEmptyTrajectory,
    kEmptyInput,
    kEmptyPairs,
    kInsufficientPairs,
    kEmptySamples,
  };

  DataError(Kind kind, const std::string& what, std::size_t line = 0)
      : Error(Category::kData, what), kind_(kind), line_(line) {}

  Kind kind() const { return kind_; }
  /// 1-based file line for parse errors, 0 otherwise.
  std::size_t line() const { return line_; }

 private:
  Kind kind_;
  std::size_t line_;
};

class NumericalError : public Error {
 public:
  enum class Kind {
    kInvalidDt,
    kDegenerateGeometry,
    kSingularInnovation,
    kNonFiniteCost,
    kSingularNormalEquations,
  };

  NumericalError(Kind kind, const std::string& what) : Error(Category::kNumerical, what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace toa_fusion
