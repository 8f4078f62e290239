#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <utility>
#include <vector>

#include "restgrad/parameter.hpp"
#include "restgrad/regularizers.hpp"

namespace restgrad {

/// Stable log(1 + exp(t)).
inline double log1pexp(double t) {
  return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

/// Stable logistic sigmoid.
inline double sigmoid(double t) {
  if (t >= 0) {
    const double e = std::exp(-t);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

/// Linear observation map X(theta) together with its adjoint X*(y).
/// DenseVectorDesign holds an n x d design matrix acting on vectors;
/// DenseMatrixDesign holds n covariate matrices (stored flattened) acting on
/// matrices via trace inner products; EntrySampler reads single entries;
/// Identity passes a vector through; BlockSum maps a horizontally stacked
/// pair [A | B] to vec(A + B), which is the observation map of the additive
/// decomposition model.
class ObservationOperator {
public:
  enum class Kind {
    DenseVectorDesign,
    DenseMatrixDesign,
    EntrySampler,
    Identity,
    BlockSum
  };

  ObservationOperator() = default;

  static ObservationOperator dense_vector(Eigen::MatrixXd x) {
    ObservationOperator op;
    op.kind_ = Kind::DenseVectorDesign;
    op.n_ = static_cast<int>(x.rows());
    op.d1_ = static_cast<int>(x.cols());
    op.d2_ = 1;
    op.design_ = std::move(x);
    return op;
  }

  static ObservationOperator dense_matrix(
      const std::vector<Eigen::MatrixXd>& xs) {
    if (xs.empty()) throw ConfigError("matrix design needs >= 1 covariate");
    ObservationOperator op;
    op.kind_ = Kind::DenseMatrixDesign;
    op.n_ = static_cast<int>(xs.size());
    op.d1_ = static_cast<int>(xs[0].rows());
    op.d2_ = static_cast<int>(xs[0].cols());
    op.design_.resize(op.n_, op.d1_ * op.d2_);
    for (int i = 0; i < op.n_; ++i) {
      if (xs[i].rows() != op.d1_ || xs[i].cols() != op.d2_)
        throw ConfigError("covariate matrices must share one shape");
      op.design_.row(i) =
          Eigen::Map<const Eigen::VectorXd>(xs[i].data(), xs[i].size());
    }
    return op;
  }

  /// Matrix design given directly in flattened form (row i = vec of the i-th
  /// covariate matrix, column-major).
  static ObservationOperator dense_matrix_flat(Eigen::MatrixXd rows, int d1,
                                               int d2) {
    if (rows.cols() != static_cast<Eigen::Index>(d1) * d2)
      throw ConfigError("flattened design has wrong width");
    ObservationOperator op;
    op.kind_ = Kind::DenseMatrixDesign;
    op.n_ = static_cast<int>(rows.rows());
    op.d1_ = d1;
    op.d2_ = d2;
    op.design_ = std::move(rows);
    return op;
  }

  static ObservationOperator entry_sampler(
      std::vector<std::pair<int, int>> entries, int d1, int d2) {
    if (entries.empty()) throw ConfigError("entry sampler needs >= 1 index");
    for (auto [a, b] : entries)
      if (a < 0 || a >= d1 || b < 0 || b >= d2)
        throw ConfigError("sampled index out of bounds");
    ObservationOperator op;
    op.kind_ = Kind::EntrySampler;
    op.n_ = static_cast<int>(entries.size());
    op.d1_ = d1;
    op.d2_ = d2;
    op.entries_ = std::move(entries);
    return op;
  }

  static ObservationOperator identity(int d) {
    ObservationOperator op;
    op.kind_ = Kind::Identity;
    op.n_ = d;
    op.d1_ = d;
    op.d2_ = 1;
    return op;
  }

  static ObservationOperator block_sum(int d1, int d2) {
    ObservationOperator op;
    op.kind_ = Kind::BlockSum;
    op.n_ = d1 * d2;
    op.d1_ = d1;
    op.d2_ = 2 * d2;  // parameter shape is the stacked pair
    return op;
  }

  Kind kind() const { return kind_; }
  int out_dim() const { return n_; }
  int param_rows() const { return d1_; }
  int param_cols() const { return d2_; }
  bool vector_param() const {
    return kind_ == Kind::DenseVectorDesign || kind_ == Kind::Identity;
  }
  const Eigen::MatrixXd& design() const { return design_; }
  const std::vector<std::pair<int, int>>& entries() const { return entries_; }

  Eigen::VectorXd apply(const Eigen::MatrixXd& theta) const {
    switch (kind_) {
      case Kind::DenseVectorDesign:
        return design_ * theta.col(0);
      case Kind::DenseMatrixDesign:
        return design_ *
               Eigen::Map<const Eigen::VectorXd>(theta.data(), theta.size());
      case Kind::EntrySampler: {
        Eigen::VectorXd out(n_);
        for (int i = 0; i < n_; ++i)
          out(i) = theta(entries_[i].first, entries_[i].second);
        return out;
      }
      case Kind::Identity:
        return theta.col(0);
      case Kind::BlockSum: {
        const int c = d2_ / 2;
        Eigen::MatrixXd sum = theta.leftCols(c) + theta.rightCols(c);
        return Eigen::Map<const Eigen::VectorXd>(sum.data(), sum.size());
      }
    }
    throw ConfigError("unknown operator kind");
  }

  Eigen::MatrixXd adjoint(const Eigen::VectorXd& y) const {
    switch (kind_) {
      case Kind::DenseVectorDesign:
        return design_.transpose() * y;
      case Kind::DenseMatrixDesign: {
        Eigen::VectorXd flat = design_.transpose() * y;
        return Eigen::Map<const Eigen::MatrixXd>(flat.data(), d1_, d2_);
      }
      case Kind::EntrySampler: {
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d1_, d2_);
        for (int i = 0; i < n_; ++i)
          out(entries_[i].first, entries_[i].second) += y(i);
        return out;
      }
      case Kind::Identity:
        return y;
      case Kind::BlockSum: {
        const int c = d2_ / 2;
        Eigen::MatrixXd half = Eigen::Map<const Eigen::MatrixXd>(
            y.data(), d1_, c);
        Eigen::MatrixXd out(d1_, d2_);
        out.leftCols(c) = half;
        out.rightCols(c) = half;
        return out;
      }
    }
    throw ConfigError("unknown operator kind");
  }

private:
  Kind kind_ = Kind::Identity;
  int n_ = 0, d1_ = 0, d2_ = 1;
  Eigen::MatrixXd design_;
  std::vector<std::pair<int, int>> entries_;
};

enum class LossFamily { Quadratic, Logistic };

/// Observations plus a differentiable loss.  Quadratic losses are
/// (scale/2n)||y - X(theta)||^2; logistic losses are the Bernoulli
/// log-linear loss (1/n) sum [log(1+exp(t_i)) - y_i t_i].  The additive
/// decomposition loss 0.5||Y - A - B||_F^2 is the quadratic family over a
/// BlockSum operator with unit normalization (see make_decomposition_loss).
class LossModel {
public:
  LossModel() = default;

  LossModel(ObservationOperator op, Eigen::VectorXd y, LossFamily family)
      : op_(std::move(op)), y_(std::move(y)), family_(family) {
    if (y_.size() != op_.out_dim())
      throw ConfigError("response length does not match operator");
    norm_n_ = op_.out_dim();
  }

  static LossModel quadratic(ObservationOperator op, Eigen::VectorXd y) {
    return LossModel(std::move(op), std::move(y), LossFamily::Quadratic);
  }

  static LossModel logistic(ObservationOperator op, Eigen::VectorXd y) {
    return LossModel(std::move(op), std::move(y), LossFamily::Logistic);
  }

  const ObservationOperator& op() const { return op_; }
  const Eigen::VectorXd& responses() const { return y_; }
  LossFamily family() const { return family_; }
  int sample_size() const { return op_.out_dim(); }

  void set_norm_n(double n) { norm_n_ = n; }
  void set_scale(double s) { scale_ = s; }

  void check_shape(const Eigen::MatrixXd& theta) const {
    if (theta.rows() != op_.param_rows() || theta.cols() != op_.param_cols())
      throw ConfigError("parameter shape does not match loss");
  }

  double value(const Eigen::MatrixXd& theta) const {
    check_shape(theta);
    const Eigen::VectorXd t = op_.apply(theta);
    if (family_ == LossFamily::Quadratic)
      return 0.5 * scale_ / norm_n_ * (y_ - t).squaredNorm();
    double total = 0;
    for (Eigen::Index i = 0; i < t.size(); ++i)
      total += log1pexp(t(i)) - y_(i) * t(i);
    return total / norm_n_;
  }

  Eigen::MatrixXd gradient(const Eigen::MatrixXd& theta) const {
    check_shape(theta);
    const Eigen::VectorXd t = op_.apply(theta);
    if (family_ == LossFamily::Quadratic)
      return op_.adjoint(t - y_) * (scale_ / norm_n_);
    Eigen::VectorXd r(t.size());
    for (Eigen::Index i = 0; i < t.size(); ++i) r(i) = sigmoid(t(i)) - y_(i);
    return op_.adjoint(r) / norm_n_;
  }

  double value(const ParameterPoint& p) const { return value(p.data()); }

  ParameterPoint gradient(const ParameterPoint& p) const {
    const Eigen::MatrixXd g = gradient(p.data());
    return p.is_vector() ? ParameterPoint::vector(g.col(0))
                         : ParameterPoint::matrix(g);
  }

  struct Evaluation {
    double value = 0;
    Eigen::MatrixXd gradient;
  };

  /// Value and gradient from a single pass through the observation map.
  Evaluation value_and_gradient(const Eigen::MatrixXd& theta) const {
    check_shape(theta);
    const Eigen::VectorXd t = op_.apply(theta);
    Evaluation out;
    if (family_ == LossFamily::Quadratic) {
      out.value = 0.5 * scale_ / norm_n_ * (y_ - t).squaredNorm();
      out.gradient = op_.adjoint(t - y_) * (scale_ / norm_n_);
      return out;
    }
    Eigen::VectorXd r(t.size());
    double total = 0;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      total += log1pexp(t(i)) - y_(i) * t(i);
      r(i) = sigmoid(t(i)) - y_(i);
    }
    out.value = total / norm_n_;
    out.gradient = op_.adjoint(r) / norm_n_;
    return out;
  }

private:
  ObservationOperator op_;
  Eigen::VectorXd y_;
  LossFamily family_ = LossFamily::Quadratic;
  double norm_n_ = 1;
  double scale_ = 1;
};

/// 0.5||Y - A - B||_F^2 over the stacked parameter [A | B].  With
/// `raw_scale` the 0.5 factor is dropped.
inline LossModel make_decomposition_loss(const Eigen::MatrixXd& y,
                                         bool raw_scale = false) {
  ObservationOperator op = ObservationOperator::block_sum(
      static_cast<int>(y.rows()), static_cast<int>(y.cols()));
  Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(y.data(), y.size());
  LossModel model = LossModel::quadratic(std::move(op), std::move(flat));
  model.set_norm_n(1.0);
  if (raw_scale) model.set_scale(2.0);
  return model;
}

inline double loss_value(const LossModel& m, const ParameterPoint& p) {
  return m.value(p);
}

inline ParameterPoint loss_gradient(const LossModel& m,
                                    const ParameterPoint& p) {
  return m.gradient(p);
}

/// First-order Taylor error L(theta) - L(theta') - <grad L(theta'),
/// theta - theta'>; nonnegative for convex losses.
inline double taylor_error(const LossModel& m, const Eigen::MatrixXd& theta,
                           const Eigen::MatrixXd& theta_prime) {
  const Eigen::MatrixXd g = m.gradient(theta_prime);
  return m.value(theta) - m.value(theta_prime) -
         (g.array() * (theta - theta_prime).array()).sum();
}

inline double taylor_error(const LossModel& m, const ParameterPoint& a,
                           const ParameterPoint& b) {
  a.check_same_shape(b);
  return taylor_error(m, a.data(), b.data());
}

/// Dual norm of the gradient at a point; the quantity that calibrates the
/// regularization weight.
inline double dual_score(const LossModel& m, const ParameterPoint& at,
                         const RegularizerSpec& spec) {
  return dual_value(spec, m.gradient(at));
}

}  // namespace restgrad
