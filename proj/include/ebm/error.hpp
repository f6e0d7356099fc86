#pragma once

#include <stdexcept>
#include <string>

namespace ebm {

// Each category maps onto a CLI exit code (see tools/ebm_cli.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ebm
