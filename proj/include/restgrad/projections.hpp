#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <memory>
#include <numeric>
#include <vector>

#include "restgrad/parameter.hpp"
#include "restgrad/regularizers.hpp"

namespace restgrad {

/// Thrown when Dykstra's cyclic projection fails to meet its tolerance; the
/// last iterate and the cycle count ride along.
struct DykstraNonConvergence : NumericError {
  DykstraNonConvergence(Eigen::MatrixXd it, int c)
      : NumericError("Dykstra projection did not converge"),
        last_iterate(std::move(it)),
        cycles(c) {}
  Eigen::MatrixXd last_iterate;
  int cycles;
};

/// Componentwise soft-thresholding: sign(v_j) * max(|v_j| - lambda, 0).
inline Eigen::VectorXd soft_threshold(const Eigen::VectorXd& v, double lambda) {
  if (lambda < 0) throw ConfigError("soft-threshold level must be >= 0");
  return v.array().sign() * (v.array().abs() - lambda).max(0.0);
}

/// Euclidean projection onto the l1 ball of radius rho.  Exact sort-based
/// threshold: lambda* is the unique root of ||soft(v, lambda)||_1 = rho.
/// Entries whose magnitude ties lambda* exactly shrink to zero, consistent
/// with the closed-form soft-threshold.
inline Eigen::VectorXd project_l1(const Eigen::VectorXd& v, double rho) {
  if (rho <= 0) throw ConfigError("l1 radius must be positive");
  if (v.lpNorm<1>() <= rho) return v;
  Eigen::VectorXd mag = v.array().abs();
  std::sort(mag.data(), mag.data() + mag.size(), std::greater<double>());
  double cumsum = 0;
  double lambda = 0;
  for (Eigen::Index k = 0; k < mag.size(); ++k) {
    cumsum += mag(k);
    const double candidate = (cumsum - rho) / static_cast<double>(k + 1);
    if (k + 1 == mag.size() || mag(k + 1) <= candidate) {
      lambda = candidate;
      break;
    }
  }
  return soft_threshold(v, lambda);
}

/// Projection onto the group-(1,2) ball {sum_g ||x_g||_2 <= rho}: project the
/// vector of group norms onto the l1 ball, then rescale each group radially.
inline Eigen::VectorXd project_group_l1(const Eigen::VectorXd& v,
                                        const GroupPartition& groups,
                                        double rho) {
  check_partition(groups, static_cast<int>(v.size()));
  const int m = static_cast<int>(groups.size());
  Eigen::VectorXd norms(m);
  for (int g = 0; g < m; ++g) {
    double sq = 0;
    for (int j : groups[g]) sq += v(j) * v(j);
    norms(g) = std::sqrt(sq);
  }
  if (norms.lpNorm<1>() <= rho) return v;
  const Eigen::VectorXd shrunk = project_l1(norms, rho);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(v.size());
  for (int g = 0; g < m; ++g) {
    if (norms(g) <= 0) continue;
    const double scale = shrunk(g) / norms(g);
    for (int j : groups[g]) out(j) = scale * v(j);
  }
  return out;
}

/// Projection onto the nuclear ball: SVD, project singular values onto the
/// l1 ball, reassemble.
inline Eigen::MatrixXd project_nuclear(const Eigen::MatrixXd& m, double rho) {
  if (rho <= 0) throw ConfigError("nuclear radius must be positive");
  const Svd s = svd_thin(m);
  if (s.sigma.sum() <= rho) return m;
  const Eigen::VectorXd shrunk = project_l1(s.sigma, rho);
  return s.u * shrunk.asDiagonal() * s.v.transpose();
}

/// Clip entries to [-b, b].
inline Eigen::MatrixXd project_linf_box(const Eigen::MatrixXd& m, double b) {
  if (b <= 0) throw ConfigError("box bound must be positive");
  return m.array().min(b).max(-b);
}

/// Projection onto the columnwise-(1,2) ball {sum_j ||m_j||_2 <= rho}:
/// project the vector of column norms onto the l1 ball, rescale radially.
inline Eigen::MatrixXd project_column12(const Eigen::MatrixXd& m, double rho) {
  if (rho <= 0) throw ConfigError("(1,2) radius must be positive");
  Eigen::VectorXd norms(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) norms(j) = m.col(j).norm();
  if (norms.lpNorm<1>() <= rho) return m;
  const Eigen::VectorXd shrunk = project_l1(norms, rho);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    if (norms(j) > 0) out.col(j) = m.col(j) * (shrunk(j) / norms(j));
  return out;
}

/// Rescale every column with norm > b to norm exactly b.
inline Eigen::MatrixXd project_col2_box(const Eigen::MatrixXd& m, double b) {
  if (b <= 0) throw ConfigError("box bound must be positive");
  Eigen::MatrixXd out = m;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double nrm = m.col(j).norm();
    if (nrm > b) out.col(j) *= b / nrm;
  }
  return out;
}

/// Closed convex constraint sets with exact Euclidean projections, plus
/// cyclic (Dykstra) projection for intersections and per-block products for
/// stacked parameters.
class ConstraintSet {
public:
  enum class Kind { RegBall, LinfBox, Col2Box, L2Ball, Intersection, Product };

  ConstraintSet() = default;

  static ConstraintSet reg_ball(RegularizerSpec spec, double rho) {
    if (rho <= 0) throw ConfigError("ball radius must be positive");
    ConstraintSet c;
    c.kind_ = Kind::RegBall;
    c.reg_ = std::move(spec);
    c.radius_ = rho;
    return c;
  }

  static ConstraintSet linf_box(double b) {
    if (b <= 0) throw ConfigError("box bound must be positive");
    ConstraintSet c;
    c.kind_ = Kind::LinfBox;
    c.radius_ = b;
    return c;
  }

  static ConstraintSet col2_box(double b) {
    if (b <= 0) throw ConfigError("box bound must be positive");
    ConstraintSet c;
    c.kind_ = Kind::Col2Box;
    c.radius_ = b;
    return c;
  }

  static ConstraintSet l2_ball(double r) {
    if (r <= 0) throw ConfigError("l2 radius must be positive");
    ConstraintSet c;
    c.kind_ = Kind::L2Ball;
    c.radius_ = r;
    return c;
  }

  static ConstraintSet intersection(std::vector<ConstraintSet> members,
                                    double tol = 1e-10,
                                    int max_cycles = 10000) {
    if (members.empty()) throw ConfigError("empty intersection");
    if (members.size() == 1) return members.front();
    ConstraintSet c;
    c.kind_ = Kind::Intersection;
    c.members_ = std::move(members);
    c.dykstra_tol_ = tol;
    c.max_cycles_ = max_cycles;
    return c;
  }

  /// Per-block constraints on a horizontally stacked matrix parameter; block
  /// j covers `block_cols[j]` columns and is projected independently.
  static ConstraintSet product(std::vector<ConstraintSet> blocks,
                               std::vector<int> block_cols) {
    if (blocks.size() != block_cols.size() || blocks.empty())
      throw ConfigError("product blocks and column counts must match");
    ConstraintSet c;
    c.kind_ = Kind::Product;
    c.members_ = std::move(blocks);
    c.block_cols_ = std::move(block_cols);
    return c;
  }

  Kind kind() const { return kind_; }
  double radius() const { return radius_; }
  const RegularizerSpec& reg() const { return reg_; }
  const std::vector<ConstraintSet>& members() const { return members_; }
  int last_cycles() const { return last_cycles_; }

  Eigen::MatrixXd project(const Eigen::MatrixXd& m) const {
    switch (kind_) {
      case Kind::RegBall:
        switch (reg_.kind()) {
          case RegKind::L1:
            return project_l1(m.col(0), radius_);
          case RegKind::GroupL1L2:
            return project_group_l1(m.col(0), reg_.groups(), radius_);
          case RegKind::Nuclear:
            return project_nuclear(m, radius_);
          case RegKind::Column12:
            return project_column12(m, radius_);
        }
        break;
      case Kind::LinfBox:
        return project_linf_box(m, radius_);
      case Kind::Col2Box:
        return project_col2_box(m, radius_);
      case Kind::L2Ball: {
        const double nrm = m.norm();
        return nrm <= radius_ ? m : Eigen::MatrixXd(m * (radius_ / nrm));
      }
      case Kind::Intersection:
        return dykstra(m);
      case Kind::Product: {
        Eigen::MatrixXd out = m;
        Eigen::Index c0 = 0;
        for (std::size_t b = 0; b < members_.size(); ++b) {
          out.middleCols(c0, block_cols_[b]) =
              members_[b].project(m.middleCols(c0, block_cols_[b]));
          c0 += block_cols_[b];
        }
        return out;
      }
    }
    throw ConfigError("unknown constraint kind");
  }

  ParameterPoint project(const ParameterPoint& p) const {
    return p.is_vector() ? ParameterPoint::vector(project(p.data()).col(0))
                         : ParameterPoint::matrix(project(p.data()));
  }

  /// Feasibility within a relative tolerance.
  bool contains(const Eigen::MatrixXd& m, double tol = 1e-8) const {
    switch (kind_) {
      case Kind::RegBall:
        return reg_.value_raw(m) <= radius_ * (1 + tol) + tol;
      case Kind::LinfBox:
        return m.lpNorm<Eigen::Infinity>() <= radius_ * (1 + tol);
      case Kind::Col2Box: {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
          if (m.col(j).norm() > radius_ * (1 + tol)) return false;
        return true;
      }
      case Kind::L2Ball:
        return m.norm() <= radius_ * (1 + tol);
      case Kind::Intersection: {
        for (const auto& s : members_)
          if (!s.contains(m, tol)) return false;
        return true;
      }
      case Kind::Product: {
        Eigen::Index c0 = 0;
        for (std::size_t b = 0; b < members_.size(); ++b) {
          if (!members_[b].contains(m.middleCols(c0, block_cols_[b]), tol))
            return false;
          c0 += block_cols_[b];
        }
        return true;
      }
    }
    return false;
  }

  /// If this set is (or, for intersections, contains) a regularizer ball
  /// over the full parameter, returns it; used for trace reporting.  Product
  /// blocks act on sub-shapes and are not reported.
  const ConstraintSet* find_reg_ball() const {
    if (kind_ == Kind::RegBall) return this;
    if (kind_ == Kind::Intersection) {
      for (const auto& s : members_) {
        const ConstraintSet* r = s.find_reg_ball();
        if (r) return r;
      }
    }
    return nullptr;
  }

private:
  Eigen::MatrixXd dykstra(const Eigen::MatrixXd& v) const {
    Eigen::MatrixXd x = v;
    std::vector<Eigen::MatrixXd> increments(
        members_.size(), Eigen::MatrixXd::Zero(v.rows(), v.cols()));
    const double tol = dykstra_tol_ * (1 + v.norm());
    for (int cycle = 1; cycle <= max_cycles_; ++cycle) {
      const Eigen::MatrixXd x_before = x;
      // The iterate can stall for whole cycles while the increments still
      // move, so convergence is measured on both.
      double change_sq = 0;
      for (std::size_t i = 0; i < members_.size(); ++i) {
        const Eigen::MatrixXd y = members_[i].project(x + increments[i]);
        const Eigen::MatrixXd next_inc = x + increments[i] - y;
        change_sq += (next_inc - increments[i]).squaredNorm();
        increments[i] = next_inc;
        x = y;
      }
      change_sq += (x - x_before).squaredNorm();
      if (std::sqrt(change_sq) <= tol) {
        last_cycles_ = cycle;
        return x;
      }
    }
    throw DykstraNonConvergence(x, max_cycles_);
  }

  Kind kind_ = Kind::RegBall;
  RegularizerSpec reg_;
  double radius_ = 1.0;
  std::vector<ConstraintSet> members_;
  std::vector<int> block_cols_;
  double dykstra_tol_ = 1e-10;
  int max_cycles_ = 10000;
  mutable int last_cycles_ = 0;
};

/// Cyclic projection onto an intersection of sets, exposed directly.
inline ParameterPoint project_intersection(const ParameterPoint& v,
                                           const ConstraintSet& sets) {
  if (sets.kind() != ConstraintSet::Kind::Intersection &&
      sets.kind() != ConstraintSet::Kind::RegBall &&
      sets.kind() != ConstraintSet::Kind::LinfBox &&
      sets.kind() != ConstraintSet::Kind::Col2Box &&
      sets.kind() != ConstraintSet::Kind::L2Ball)
    throw ConfigError("not an intersectable constraint");
  return sets.project(v);
}

/// Proximal step of the regularized update: the minimizer over {R <= rho_bar}
/// of 0.5||theta - v||^2 + shrink * R(theta), where shrink is the composite
/// penalty divided by the step curvature.  Realized as the prox of the norm
/// followed, if needed, by projection onto the R-ball; the two thresholds
/// compose additively so this is the exact minimizer.  A single SVD is reused
/// for both nuclear steps.
inline Eigen::MatrixXd composite_prox(const Eigen::MatrixXd& v, double shrink,
                                      const RegularizerSpec& spec,
                                      double rho_bar) {
  if (shrink < 0) throw ConfigError("composite shrink must be >= 0");
  if (rho_bar <= 0) throw ConfigError("composite radius must be positive");
  const bool bounded = std::isfinite(rho_bar);
  switch (spec.kind()) {
    case RegKind::L1: {
      Eigen::VectorXd x = soft_threshold(v.col(0), shrink);
      if (bounded && x.lpNorm<1>() > rho_bar) x = project_l1(x, rho_bar);
      return x;
    }
    case RegKind::Nuclear: {
      const Svd s = svd_thin(v);
      Eigen::VectorXd sig = soft_threshold(s.sigma, shrink);
      if (bounded && sig.lpNorm<1>() > rho_bar) sig = project_l1(sig, rho_bar);
      return s.u * sig.asDiagonal() * s.v.transpose();
    }
    case RegKind::GroupL1L2: {
      const auto& groups = spec.groups();
      Eigen::VectorXd x = Eigen::VectorXd::Zero(v.rows());
      for (const auto& g : groups) {
        double sq = 0;
        for (int j : g) sq += v(j, 0) * v(j, 0);
        const double nrm = std::sqrt(sq);
        const double scale = nrm > shrink ? (nrm - shrink) / nrm : 0.0;
        for (int j : g) x(j) = scale * v(j, 0);
      }
      double total = 0;
      for (const auto& g : groups) {
        double sq = 0;
        for (int j : g) sq += x(j) * x(j);
        total += std::sqrt(sq);
      }
      if (bounded && total > rho_bar) x = project_group_l1(x, groups, rho_bar);
      return x;
    }
    case RegKind::Column12: {
      Eigen::MatrixXd x = v;
      for (Eigen::Index j = 0; j < v.cols(); ++j) {
        const double nrm = v.col(j).norm();
        x.col(j) = nrm > shrink ? Eigen::VectorXd(v.col(j) * (nrm - shrink) / nrm)
                                : Eigen::VectorXd(Eigen::VectorXd::Zero(v.rows()));
      }
      double total = 0;
      for (Eigen::Index j = 0; j < x.cols(); ++j) total += x.col(j).norm();
      if (bounded && total > rho_bar) x = project_column12(x, rho_bar);
      return x;
    }
  }
  throw ConfigError("unknown regularizer kind");
}

inline ParameterPoint composite_prox(const ParameterPoint& v, double shrink,
                                     const RegularizerSpec& spec,
                                     double rho_bar) {
  spec.check_shape(v);
  const Eigen::MatrixXd out = composite_prox(v.data(), shrink, spec, rho_bar);
  return v.is_vector() ? ParameterPoint::vector(out.col(0))
                       : ParameterPoint::matrix(out);
}

}  // namespace restgrad
