#pragma once

#include <stdexcept>
#include <string>

namespace gridtrack {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Calibration input is insufficient, duplicated or degenerate.
class CalibrationError : public Error {
 public:
  using Error::Error;
};

// A pixel lies outside the row range (or image columns) a camera model was fit on.
class OutOfCalibrationError : public Error {
 public:
  using Error::Error;
};

// Operation needs an invertible (monotone) depth model.
class UnsupportedModelError : public Error {
 public:
  using Error::Error;
};

class MalformedPayloadError : public Error {
 public:
  using Error::Error;
};

class MalformedMessageError : public Error {
 public:
  using Error::Error;
};

class ProtocolViolationError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

}  // namespace gridtrack
