#ifndef FALAB_ERRORS_HPP_
#define FALAB_ERRORS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace falab {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A loss or parameter became non-finite during optimization.
class Diverged : public Error {
 public:
  Diverged(const std::string& what, int epoch)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class UnsupportedVersion : public Error {
 public:
  using Error::Error;
};

/// Noise matrix is not clean-labels-dominant.
class AssumptionViolated : public Error {
 public:
  using Error::Error;
};

/// Simplex grid too coarse: refining it moved the risks beyond tolerance.
class ResolutionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class PathError : public Error {
 public:
  using Error::Error;
};

}  // namespace falab

#endif  // FALAB_ERRORS_HPP_
