#pragma once

#include <stdexcept>
#include <string>

namespace ddrom {

// Error hierarchy shared by all modules. Each named failure mode of the
// library maps to one of these types so callers can react per category.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};
struct SingularMatrix : Error {
  using Error::Error;
};
struct NotSymmetric : Error {
  using Error::Error;
};

struct InvalidResolution : Error {
  using Error::Error;
};
struct DisconnectedInterface : Error {
  using Error::Error;
};

struct TraceMismatch : Error {
  using Error::Error;
};
struct SingularSystem : Error {
  using Error::Error;
};
struct NewtonDiverged : Error {
  using Error::Error;
};

struct LineSearchFailed : Error {
  using Error::Error;
};
struct MeshMismatch : Error {
  using Error::Error;
};

struct InvalidRange : Error {
  using Error::Error;
};
struct SnapshotFailure : Error {
  using Error::Error;
};

struct MissingArtifacts : Error {
  using Error::Error;
};
struct UsageError : Error {
  using Error::Error;
};

}  // namespace ddrom
