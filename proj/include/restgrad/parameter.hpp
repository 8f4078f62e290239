#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <utility>

namespace restgrad {

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A point in the parameter space: either a dense vector in R^d or a dense
/// matrix in R^{d1 x d2}.  Vectors are stored as d x 1 matrices so both
/// shapes share one representation; the shape tag is fixed at construction.
/// Entries are checked finite on construction.
class ParameterPoint {
public:
  ParameterPoint() = default;

  static ParameterPoint vector(Eigen::VectorXd v) {
    return ParameterPoint(std::move(v), true);
  }

  static ParameterPoint matrix(Eigen::MatrixXd m) {
    return ParameterPoint(std::move(m), false);
  }

  static ParameterPoint zeros_like(const ParameterPoint& p) {
    return ParameterPoint(Eigen::MatrixXd::Zero(p.rows(), p.cols()),
                          p.is_vector());
  }

  bool is_vector() const { return is_vector_; }
  Eigen::Index rows() const { return data_.rows(); }
  Eigen::Index cols() const { return data_.cols(); }
  Eigen::Index size() const { return data_.size(); }

  const Eigen::MatrixXd& data() const { return data_; }

  Eigen::VectorXd as_vector() const {
    if (!is_vector_) throw ConfigError("parameter point is not a vector");
    return data_.col(0);
  }

  /// Euclidean norm for vectors, Frobenius norm for matrices.
  double norm() const { return data_.norm(); }

  double dot(const ParameterPoint& o) const {
    check_same_shape(o);
    return (data_.array() * o.data_.array()).sum();
  }

  ParameterPoint operator+(const ParameterPoint& o) const {
    check_same_shape(o);
    return ParameterPoint(data_ + o.data_, is_vector_);
  }

  ParameterPoint operator-(const ParameterPoint& o) const {
    check_same_shape(o);
    return ParameterPoint(data_ - o.data_, is_vector_);
  }

  ParameterPoint operator*(double c) const {
    return ParameterPoint(c * data_, is_vector_);
  }

  bool same_shape(const ParameterPoint& o) const {
    return is_vector_ == o.is_vector_ && rows() == o.rows() &&
           cols() == o.cols();
  }

  void check_same_shape(const ParameterPoint& o) const {
    if (!same_shape(o)) throw ConfigError("parameter shape mismatch");
  }

private:
  ParameterPoint(Eigen::MatrixXd m, bool is_vector)
      : data_(std::move(m)), is_vector_(is_vector) {
    if (is_vector_ && data_.cols() != 1)
      throw ConfigError("vector parameter must have one column");
    if (!data_.allFinite())
      throw ConfigError("parameter entries must be finite");
  }

  Eigen::MatrixXd data_;
  bool is_vector_ = true;
};

inline ParameterPoint operator*(double c, const ParameterPoint& p) {
  return p * c;
}

}  // namespace restgrad
