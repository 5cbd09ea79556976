#pragma once

#include <stdexcept>
#include <string>

namespace tsfem {

/// Base class for every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Invalid input: degenerate geometry, parameters violating model assumptions,
/// malformed configuration.
class ValidationError : public Error
{
public:
  using Error::Error;
};

/// Linear or nonlinear solver failure (indefinite operator, non-convergence).
class SolverError : public Error
{
public:
  using Error::Error;
};

/// Point location failure or other geometric query error.
class GeometryError : public Error
{
public:
  using Error::Error;
};

/// Malformed file content (mesh dumps, checkpoints).
class FormatError : public Error
{
public:
  using Error::Error;
};

} // namespace tsfem
