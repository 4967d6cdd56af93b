#pragma once

#include <stdexcept>
#include <string>

namespace bmpc {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain (e.g. normalized time outside [0, 1]).
class DomainError : public Error
{
public:
  using Error::Error;
};

/// Non-finite entries or too few control points.
class InvalidCurveError : public Error
{
public:
  using Error::Error;
};

/// Derivative order requested exceeds what the curve degree supports.
class DegreeTooLowError : public Error
{
public:
  using Error::Error;
};

class DimensionMismatchError : public Error
{
public:
  using Error::Error;
};

class ParseError : public Error
{
public:
  using Error::Error;
};

class LoopDetectedError : public Error
{
public:
  using Error::Error;
};

class LimitOrderError : public Error
{
public:
  using Error::Error;
};

/// Problem data that cannot admit a feasible solution (goal inside an obstacle, start outside limits, ...).
class InfeasibleError : public Error
{
public:
  using Error::Error;
};

class NonFiniteError : public Error
{
public:
  using Error::Error;
};

class ScenarioError : public Error
{
public:
  using Error::Error;
};

}  // namespace bmpc
