#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace editvae {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter lies outside its admissible domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Tensor or vector sizes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed file or payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A loss or parameter became NaN/inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace editvae
