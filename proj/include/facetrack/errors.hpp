#pragma once

#include <stdexcept>
#include <string>

namespace facetrack {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// An argument lies outside the domain of the operation (e.g. z <= 0 on projection).
class DomainError : public Error {
public:
  using Error::Error;
};

/// A depth sample carries the missing-value marker.
class NoDataError : public Error {
public:
  using Error::Error;
};

class EmptyCloudError : public Error {
public:
  using Error::Error;
};

/// Vector/matrix/tensor sizes disagree.
class DimensionError : public Error {
public:
  using Error::Error;
};

class LocalizationError : public Error {
public:
  using Error::Error;
};

/// Tracking failed on too many consecutive frames to continue.
class TrackingLostError : public Error {
public:
  using Error::Error;
};

/// Malformed file contents (bad magic, truncated chunk, unparsable text).
class FormatError : public Error {
public:
  using Error::Error;
};

/// File system failure; the message names the offending path.
class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace facetrack
