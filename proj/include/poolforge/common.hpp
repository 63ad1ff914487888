#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace poolforge {

// Row-major so that a sample is a contiguous row, matching the on-disk blobs.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using RowMatrixf = RowMatrix<float>;
using RowMatrixd = RowMatrix<double>;
using Vectord = Vector<double>;

using SampleId = std::int64_t;
using ClassIndex = std::int32_t;

/// Base of all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed artifacts, out-of-range arguments, unknown ids.
/// The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Inputs are well-formed but too degenerate for the requested operation
/// (e.g. fewer distinct points than clusters).
class DegenerateError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// The external model adapter failed, timed out, or broke protocol.
class AdapterError : public Error {
 public:
  using Error::Error;
};

/// Squared Euclidean distance accumulated in double, dimension order.
template <typename A, typename B>
double squared_distance(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    const double diff = static_cast<double>(a(j)) - static_cast<double>(b(j));
    acc += diff * diff;
  }
  return acc;
}

}  // namespace poolforge
