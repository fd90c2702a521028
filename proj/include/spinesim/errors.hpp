#pragma once

#include <stdexcept>
#include <string>

namespace spinesim {

// Base for failures caused by input data (bad files, inconsistent geometry,
// degenerate configurations). Programming errors use the std exceptions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class DegenerateError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace spinesim
