#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace posecov {

enum class ErrorCode {
  InvalidArgument,
  NearSingularity,
  NotInvertible,
  NotPositiveDefinite,
  RankDeficiency,
  Parse,
  Data,
  OracleFailure,
};

/// Base of every error thrown by the library. The code lets callers (the CLI
/// in particular) map failures to exit statuses without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// True for failures caused by the numbers rather than by the inputs' shape.
  bool is_numerical() const noexcept {
    switch (code_) {
      case ErrorCode::NearSingularity:
      case ErrorCode::NotInvertible:
      case ErrorCode::NotPositiveDefinite:
      case ErrorCode::RankDeficiency:
      case ErrorCode::OracleFailure:
        return true;
      default:
        return false;
    }
  }

 private:
  ErrorCode code_;
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& what)
      : Error(ErrorCode::InvalidArgument, what) {}
};

/// Logarithm requested within the rejection band around a rotation of pi.
struct NearSingularity : Error {
  explicit NearSingularity(const std::string& what)
      : Error(ErrorCode::NearSingularity, what) {}
};

struct NotInvertible : Error {
  explicit NotInvertible(const std::string& what)
      : Error(ErrorCode::NotInvertible, what) {}
};

struct NotPositiveDefinite : Error {
  explicit NotPositiveDefinite(const std::string& what)
      : Error(ErrorCode::NotPositiveDefinite, what) {}
};

struct RankDeficiency : Error {
  explicit RankDeficiency(const std::string& what)
      : Error(ErrorCode::RankDeficiency, what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line,
             const std::string& what)
      : Error(ErrorCode::Parse,
              source + ":" + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorCode::Data, what) {}
};

/// The Monte-Carlo reference computation itself failed (e.g. the manifold
/// mean did not converge).
struct OracleFailure : Error {
  explicit OracleFailure(const std::string& what)
      : Error(ErrorCode::OracleFailure, what) {}
};

}  // namespace posecov
