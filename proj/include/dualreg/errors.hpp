#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace dualreg {

//! Root of every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! Input data violates a structural requirement (shape, finiteness, size).
class DataError : public Error
{
public:
  using Error::Error;
};

class DesignRankError : public Error
{
public:
  using Error::Error;
};

//! A scale index lambda2 . x_i is not strictly positive.
class ScaleNotPositiveError : public Error
{
public:
  explicit ScaleNotPositiveError(std::size_t index)
    : Error("scale index is not positive at observation " +
            std::to_string(index))
    , index_(index)
  {}

  //! 1-based observation index.
  std::size_t index() const noexcept { return index_; }

private:
  std::size_t index_;
};

class DomainError : public Error
{
public:
  using Error::Error;
};

class InitializationError : public Error
{
public:
  using Error::Error;
};

class SingularJacobianError : public Error
{
public:
  using Error::Error;
};

class NonMonotoneMapError : public Error
{
public:
  NonMonotoneMapError(const std::string& what, std::size_t index = 0)
    : Error(what)
    , index_(index)
  {}
  std::size_t index() const noexcept { return index_; }

private:
  std::size_t index_;
};

class BracketError : public Error
{
public:
  BracketError(const std::string& what, std::size_t index = 0)
    : Error(what)
    , index_(index)
  {}
  std::size_t index() const noexcept { return index_; }

private:
  std::size_t index_;
};

class NotJustIdentifiedError : public Error
{
public:
  using Error::Error;
};

class GridError : public Error
{
public:
  using Error::Error;
};

class InvalidSpecError : public Error
{
public:
  using Error::Error;
};

//! Iteration budget exhausted. Catch `NotConvergedError<Fit>` to get at the
//! best iterate.
class MaxIterationsError : public Error
{
public:
  MaxIterationsError(const std::string& what, int iterations)
    : Error(what)
    , iterations_(iterations)
  {}
  int iterations() const noexcept { return iterations_; }

private:
  int iterations_;
};

template<class Fit>
class NotConvergedError : public MaxIterationsError
{
public:
  NotConvergedError(const std::string& what, Fit best)
    : MaxIterationsError(what, best.iterations)
    , best_(std::move(best))
  {}
  const Fit& best() const noexcept { return best_; }

private:
  Fit best_;
};

} // namespace dualreg
