#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <utility>
#include <vector>

#include "restgrad/parameter.hpp"
#include "restgrad/rng.hpp"

namespace restgrad {

/// Relative reconstruction tolerance guaranteed by the SVD used for all
/// nuclear-norm machinery.
inline constexpr double kSvdTol = 1e-8;

struct Svd {
  Eigen::MatrixXd u;       // d1 x k
  Eigen::VectorXd sigma;   // k, nonincreasing
  Eigen::MatrixXd v;       // d2 x k
};

/// Deterministic thin SVD with singular values in nonincreasing order.
inline Svd svd_thin(const Eigen::MatrixXd& a) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a,
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success)
    throw NumericError("SVD failed to converge");
  return Svd{svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

enum class RegKind { L1, GroupL1L2, Nuclear, Column12 };

using GroupPartition = std::vector<std::vector<int>>;

/// Validates that `groups` partitions {0, ..., d-1} without gaps, overlaps
/// or empty groups.
inline void check_partition(const GroupPartition& groups, int d) {
  std::vector<char> seen(d, 0);
  for (const auto& g : groups) {
    if (g.empty()) throw ConfigError("empty group in partition");
    for (int j : g) {
      if (j < 0 || j >= d) throw ConfigError("group index out of range");
      if (seen[j]) throw ConfigError("overlapping groups in partition");
      seen[j] = 1;
    }
  }
  for (int j = 0; j < d; ++j)
    if (!seen[j]) throw ConfigError("groups do not cover all coordinates");
}

/// A norm used as a regularizer: its value, its exact dual norm, and the
/// shape of parameters it applies to.
class RegularizerSpec {
public:
  RegularizerSpec() = default;

  static RegularizerSpec l1(int d) {
    RegularizerSpec s;
    s.kind_ = RegKind::L1;
    s.d1_ = d;
    s.d2_ = 1;
    return s;
  }

  static RegularizerSpec group_l1l2(int d, GroupPartition groups) {
    check_partition(groups, d);
    RegularizerSpec s;
    s.kind_ = RegKind::GroupL1L2;
    s.d1_ = d;
    s.d2_ = 1;
    s.groups_ = std::move(groups);
    return s;
  }

  static RegularizerSpec nuclear(int d1, int d2) {
    RegularizerSpec s;
    s.kind_ = RegKind::Nuclear;
    s.d1_ = d1;
    s.d2_ = d2;
    return s;
  }

  static RegularizerSpec column12(int d1, int d2) {
    RegularizerSpec s;
    s.kind_ = RegKind::Column12;
    s.d1_ = d1;
    s.d2_ = d2;
    return s;
  }

  RegKind kind() const { return kind_; }
  int d1() const { return d1_; }
  int d2() const { return d2_; }
  const GroupPartition& groups() const { return groups_; }
  bool is_vector_kind() const {
    return kind_ == RegKind::L1 || kind_ == RegKind::GroupL1L2;
  }

  void check_shape(const ParameterPoint& p) const {
    if (is_vector_kind()) {
      if (!p.is_vector() || p.rows() != d1_)
        throw ConfigError("parameter shape does not match regularizer");
    } else {
      if (p.is_vector() || p.rows() != d1_ || p.cols() != d2_)
        throw ConfigError("parameter shape does not match regularizer");
    }
  }

  double value_raw(const Eigen::MatrixXd& m) const {
    switch (kind_) {
      case RegKind::L1:
        return m.lpNorm<1>();
      case RegKind::GroupL1L2: {
        double total = 0;
        for (const auto& g : groups_) {
          double sq = 0;
          for (int j : g) sq += m(j, 0) * m(j, 0);
          total += std::sqrt(sq);
        }
        return total;
      }
      case RegKind::Nuclear:
        return svd_thin(m).sigma.sum();
      case RegKind::Column12: {
        double total = 0;
        for (Eigen::Index j = 0; j < m.cols(); ++j) total += m.col(j).norm();
        return total;
      }
    }
    return 0;
  }

  double dual_value_raw(const Eigen::MatrixXd& m) const {
    switch (kind_) {
      case RegKind::L1:
        return m.lpNorm<Eigen::Infinity>();
      case RegKind::GroupL1L2: {
        double best = 0;
        for (const auto& g : groups_) {
          double sq = 0;
          for (int j : g) sq += m(j, 0) * m(j, 0);
          best = std::max(best, std::sqrt(sq));
        }
        return best;
      }
      case RegKind::Nuclear: {
        const Svd s = svd_thin(m);
        return s.sigma.size() > 0 ? s.sigma(0) : 0.0;
      }
      case RegKind::Column12: {
        double best = 0;
        for (Eigen::Index j = 0; j < m.cols(); ++j)
          best = std::max(best, m.col(j).norm());
        return best;
      }
    }
    return 0;
  }

private:
  RegKind kind_ = RegKind::L1;
  int d1_ = 0;
  int d2_ = 1;
  GroupPartition groups_;
};

/// R(theta).
inline double reg_value(const RegularizerSpec& spec, const ParameterPoint& p) {
  spec.check_shape(p);
  return spec.value_raw(p.data());
}

/// Dual norm R*(theta): elementwise max for L1, operator norm for Nuclear,
/// max group / column l2 norm for the block norms.
inline double dual_value(const RegularizerSpec& spec, const ParameterPoint& p) {
  spec.check_shape(p);
  return spec.dual_value_raw(p.data());
}

enum class Subspace {
  Model,      // M
  ModelBar,   // the orthogonal complement of ModelPerp; equals M except for
              // the nuclear pair, where it strictly contains M
  ModelPerp,  // the perturbation subspace
};

/// A decomposable subspace pair for a regularizer: a model subspace M and a
/// perturbation subspace orthogonal to its enlargement.  For the coordinate
/// norms the pair is a support set; for the nuclear norm it is a pair of
/// orthonormal factor matrices (U, V).
class SubspacePair {
public:
  static SubspacePair for_support(std::vector<int> support, int d) {
    SubspacePair p;
    p.kind_ = RegKind::L1;
    p.d1_ = d;
    p.d2_ = 1;
    p.support_ = std::move(support);
    std::sort(p.support_.begin(), p.support_.end());
    return p;
  }

  static SubspacePair for_groups(std::vector<int> active_groups,
                                 GroupPartition groups, int d) {
    check_partition(groups, d);
    SubspacePair p;
    p.kind_ = RegKind::GroupL1L2;
    p.d1_ = d;
    p.d2_ = 1;
    p.groups_ = std::move(groups);
    p.active_groups_ = std::move(active_groups);
    for (int g : p.active_groups_)
      for (int j : p.groups_[g]) p.support_.push_back(j);
    std::sort(p.support_.begin(), p.support_.end());
    return p;
  }

  static SubspacePair for_columns(std::vector<int> columns, int d1, int d2) {
    SubspacePair p;
    p.kind_ = RegKind::Column12;
    p.d1_ = d1;
    p.d2_ = d2;
    p.support_ = std::move(columns);
    std::sort(p.support_.begin(), p.support_.end());
    return p;
  }

  /// Nuclear pair from orthonormal factors U (d1 x r) and V (d2 x r).
  static SubspacePair for_factors(Eigen::MatrixXd u, Eigen::MatrixXd v) {
    SubspacePair p;
    p.kind_ = RegKind::Nuclear;
    p.d1_ = static_cast<int>(u.rows());
    p.d2_ = static_cast<int>(v.rows());
    p.u_ = std::move(u);
    p.v_ = std::move(v);
    return p;
  }

  /// Builds the pair adapted to a target parameter at truncation level mu:
  /// coordinates (or singular values) above mu define the model subspace.
  static SubspacePair from_truth(const RegularizerSpec& spec,
                                 const ParameterPoint& truth, double mu) {
    spec.check_shape(truth);
    switch (spec.kind()) {
      case RegKind::L1: {
        std::vector<int> support;
        for (int j = 0; j < spec.d1(); ++j)
          if (std::abs(truth.data()(j, 0)) > mu) support.push_back(j);
        return for_support(std::move(support), spec.d1());
      }
      case RegKind::GroupL1L2: {
        std::vector<int> active;
        for (int g = 0; g < static_cast<int>(spec.groups().size()); ++g) {
          double sq = 0;
          for (int j : spec.groups()[g])
            sq += truth.data()(j, 0) * truth.data()(j, 0);
          if (std::sqrt(sq) > mu) active.push_back(g);
        }
        return for_groups(std::move(active), spec.groups(), spec.d1());
      }
      case RegKind::Nuclear: {
        const Svd s = svd_thin(truth.data());
        int r = 0;
        while (r < s.sigma.size() && s.sigma(r) > mu) ++r;
        return for_factors(s.u.leftCols(r), s.v.leftCols(r));
      }
      case RegKind::Column12: {
        std::vector<int> cols;
        for (int j = 0; j < spec.d2(); ++j)
          if (truth.data().col(j).norm() > mu) cols.push_back(j);
        return for_columns(std::move(cols), spec.d1(), spec.d2());
      }
    }
    throw ConfigError("unknown regularizer kind");
  }

  RegKind kind() const { return kind_; }
  const std::vector<int>& support() const { return support_; }
  int rank() const { return static_cast<int>(u_.cols()); }

  /// Model-subspace dimension count used by the compatibility constant:
  /// support size for coordinate norms, factor rank for the nuclear pair.
  int model_size() const {
    return kind_ == RegKind::Nuclear ? rank()
                                     : static_cast<int>(support_.size());
  }

  Eigen::MatrixXd project_raw(const Eigen::MatrixXd& m, Subspace which) const {
    if (kind_ == RegKind::Nuclear) {
      const Eigen::MatrixXd pu = u_ * u_.transpose();
      const Eigen::MatrixXd pv = v_ * v_.transpose();
      const Eigen::MatrixXd iu = Eigen::MatrixXd::Identity(d1_, d1_) - pu;
      const Eigen::MatrixXd iv = Eigen::MatrixXd::Identity(d2_, d2_) - pv;
      switch (which) {
        case Subspace::Model:
          return pu * m * pv;
        case Subspace::ModelPerp:
          return iu * m * iv;
        case Subspace::ModelBar:
          // Everything orthogonal to ModelPerp.
          return m - iu * m * iv;
      }
    }
    if (kind_ == RegKind::Column12) {
      Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m.rows(), m.cols());
      const bool keep_support = (which != Subspace::ModelPerp);
      std::size_t k = 0;
      for (int j = 0; j < d2_; ++j) {
        const bool in_support =
            k < support_.size() && support_[k] == j && (++k, true);
        if (in_support == keep_support) out.col(j) = m.col(j);
      }
      return out;
    }
    // Coordinate subspaces (L1 and group partitions).
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m.rows(), m.cols());
    const bool keep_support = (which != Subspace::ModelPerp);
    std::size_t k = 0;
    for (int j = 0; j < d1_; ++j) {
      const bool in_support =
          k < support_.size() && support_[k] == j && (++k, true);
      if (in_support == keep_support) out(j, 0) = m(j, 0);
    }
    return out;
  }

  ParameterPoint project(const ParameterPoint& p, Subspace which) const {
    check_shape(p);
    return p.is_vector()
               ? ParameterPoint::vector(project_raw(p.data(), which).col(0))
               : ParameterPoint::matrix(project_raw(p.data(), which));
  }

  void check_shape(const ParameterPoint& p) const {
    const bool vec = kind_ == RegKind::L1 || kind_ == RegKind::GroupL1L2;
    if (vec != p.is_vector() || p.rows() != d1_ ||
        (!vec && p.cols() != d2_))
      throw ConfigError("parameter shape does not match subspace pair");
  }

private:
  RegKind kind_ = RegKind::L1;
  int d1_ = 0;
  int d2_ = 1;
  std::vector<int> support_;        // coordinates, or columns for Column12
  GroupPartition groups_;
  std::vector<int> active_groups_;
  Eigen::MatrixXd u_, v_;           // nuclear factors
};

/// Subspace compatibility Psi: the largest ratio R(theta)/||theta|| over the
/// model subspace.  Closed form per kind: sqrt(support size) for L1 and
/// Column12, sqrt(active group count) for groups, sqrt(rank) for the nuclear
/// pair (the enlarged nuclear subspace has no closed form; see
/// `subspace_compat_sampled` for an empirical lower bound).  The trivial
/// subspace gives 0.
inline double subspace_compat(const RegularizerSpec& spec,
                              const SubspacePair& pair) {
  if (spec.kind() != pair.kind())
    throw ConfigError("subspace pair does not match regularizer kind");
  if (spec.kind() == RegKind::GroupL1L2) {
    // Psi = sqrt(number of active groups) regardless of group sizes.
    std::vector<char> in_support(spec.d1(), 0);
    for (int j : pair.support()) in_support[j] = 1;
    int active = 0;
    for (const auto& g : spec.groups()) {
      for (int j : g)
        if (in_support[j]) {
          ++active;
          break;
        }
    }
    return std::sqrt(static_cast<double>(active));
  }
  return std::sqrt(static_cast<double>(pair.model_size()));
}

/// Sampled lower bound on sup R(theta)/||theta|| over the enlarged subspace
/// ModelBar; useful for the nuclear pair where no closed form is available.
inline double subspace_compat_sampled(const RegularizerSpec& spec,
                                      const SubspacePair& pair, Rng rng,
                                      int samples = 200) {
  double best = 0;
  for (int i = 0; i < samples; ++i) {
    Eigen::MatrixXd g(spec.d1(), spec.is_vector_kind() ? 1 : spec.d2());
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = rng.gaussian();
    const Eigen::MatrixXd m = pair.project_raw(g, Subspace::ModelBar);
    const double nrm = m.norm();
    if (nrm > 1e-12) best = std::max(best, spec.value_raw(m) / nrm);
  }
  return best;
}

inline ParameterPoint project_subspace(const SubspacePair& pair,
                                       const ParameterPoint& p,
                                       Subspace which) {
  return pair.project(p, which);
}

}  // namespace restgrad
