#pragma once

#include <Eigen/Dense>
#include <Eigen/QR>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "restgrad/losses.hpp"
#include "restgrad/parameter.hpp"
#include "restgrad/projections.hpp"
#include "restgrad/regularizers.hpp"
#include "restgrad/rng.hpp"

namespace restgrad {

enum class Family {
  SparseLinear,
  LogisticSparse,
  MatrixCS,
  MatComp,
  MatDecomp
};

inline const char* family_name(Family f) {
  switch (f) {
    case Family::SparseLinear: return "sparse_linear";
    case Family::LogisticSparse: return "logistic_sparse";
    case Family::MatrixCS: return "matrix_cs";
    case Family::MatComp: return "matcomp";
    case Family::MatDecomp: return "matdecomp";
  }
  return "?";
}

/// A random-instance recipe.  The same spec (including seed) always
/// generates the bitwise-identical instance.
struct EnsembleSpec {
  Family family = Family::SparseLinear;
  int d = 0;        // ambient dimension (square matrices use d x d)
  int d1 = 0, d2 = 0;  // decomposition shapes
  int s = 0;        // exact sparsity / nonzero columns
  int rank = 0;     // matrix rank
  double q = 0;     // soft-sparsity exponent, 0 = exact
  double Rq = 0;    // soft-sparsity radius
  int n = 0;        // sample size
  double omega = 0; // design autocorrelation in [0, 1)
  double nu = 0.5;  // noise standard deviation
  double spikiness = 0;     // 0 derives the tight bound from the truth
  double singular_decay = 0;  // 0 = flat spectrum for matrix truths
  std::uint64_t seed = 1;

  void validate() const {
    if (n < 1) throw ConfigError("sample size must be >= 1");
    if (omega < 0 || omega >= 1) throw ConfigError("omega must be in [0,1)");
    if (nu < 0) throw ConfigError("noise level must be >= 0");
    if (q < 0 || q > 1) throw ConfigError("q must be in [0,1]");
    switch (family) {
      case Family::SparseLinear:
      case Family::LogisticSparse:
        if (d < 1) throw ConfigError("dimension must be >= 1");
        if (q == 0 && (s < 1 || s > d))
          throw ConfigError("sparsity must satisfy 1 <= s <= d");
        if (q > 0 && Rq <= 0) throw ConfigError("Rq must be positive");
        break;
      case Family::MatrixCS:
      case Family::MatComp:
        if (d < 1) throw ConfigError("dimension must be >= 1");
        if (q == 0 && (rank < 1 || rank > d))
          throw ConfigError("rank must satisfy 1 <= r <= d");
        if (q > 0 && Rq <= 0) throw ConfigError("Rq must be positive");
        break;
      case Family::MatDecomp:
        if (d1 < 1 || d2 < 1) throw ConfigError("shape must be positive");
        if (rank < 1 || rank > std::min(d1, d2))
          throw ConfigError("rank out of range");
        if (s < 1 || s > d2) throw ConfigError("column sparsity out of range");
        break;
    }
  }
};

/// Spectral summary of the design covariance: analytic extremes used for
/// step sizes, the wider interval the construction guarantees, and the
/// maximum coordinate variance.
struct SigmaSummary {
  double smin = 1;
  double smax = 1;
  double zeta = 1;
  double interval_lo = 1;
  double interval_hi = 1;
};

inline SigmaSummary ar1_sigma_summary(double omega) {
  SigmaSummary s;
  const double w = omega;
  s.smin = 1.0 / ((1 + w) * (1 + w));
  s.smax = 1.0 / ((1 - w) * (1 - w));
  s.zeta = 1.0 / (1 - w * w);
  s.interval_lo = s.smin;
  s.interval_hi = 2.0 / ((1 - w) * (1 - w) * (1 + w));
  return s;
}

/// Exact covariance of the stationary first-order autoregression used for
/// the design rows: Sigma_jk = omega^|j-k| / (1 - omega^2).
inline Eigen::MatrixXd ar1_exact_covariance(int d, double omega) {
  Eigen::MatrixXd sigma(d, d);
  const double scale = 1.0 / (1 - omega * omega);
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k)
      sigma(j, k) = scale * std::pow(omega, std::abs(j - k));
  return sigma;
}

/// n i.i.d. rows, each built by the stationary autoregressive recursion
/// x_1 = z_1/sqrt(1-omega^2), x_{t+1} = omega x_t + z_{t+1}.
inline Eigen::MatrixXd gen_design_ar1(int d, int n, double omega, Rng rng) {
  if (omega < 0 || omega >= 1) throw ConfigError("omega must be in [0,1)");
  Eigen::MatrixXd x(n, d);
  const double init_scale = 1.0 / std::sqrt(1 - omega * omega);
  for (int i = 0; i < n; ++i) {
    double prev = rng.gaussian() * init_scale;
    x(i, 0) = prev;
    for (int t = 1; t < d; ++t) {
      prev = omega * prev + rng.gaussian();
      x(i, t) = prev;
    }
  }
  return x;
}

/// Exactly sparse truth: s uniformly chosen positions with +-1 entries.
/// Soft-sparse truth (q in (0,1]): sorted magnitudes C j^{-1/q} scaled so
/// the q-th-power mass sits exactly on the radius, random signs and
/// positions.
inline Eigen::VectorXd gen_truth_sparse(int d, int s, double q, double Rq,
                                        Rng rng) {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d);
  // Partial Fisher-Yates for a uniform position sample / permutation.
  std::vector<int> idx(d);
  for (int j = 0; j < d; ++j) idx[j] = j;
  const int picks = (q == 0) ? s : d;
  for (int j = 0; j < picks && j < d; ++j) {
    const int k = j + static_cast<int>(rng.uniform_index(d - j));
    std::swap(idx[j], idx[k]);
  }
  if (q == 0) {
    for (int j = 0; j < s; ++j) theta(idx[j]) = rng.sign();
    return theta;
  }
  double harmonic = 0;
  for (int j = 1; j <= d; ++j) harmonic += 1.0 / j;
  const double c = std::pow(Rq / harmonic, 1.0 / q);
  for (int j = 0; j < d; ++j)
    theta(idx[j]) = rng.sign() * c * std::pow(j + 1.0, -1.0 / q);
  return theta;
}

/// Random d1 x d2 matrix with orthonormal factors and a flat (or
/// geometrically decaying) spectrum, Frobenius-normalized to `fro_norm`.
inline Eigen::MatrixXd gen_low_rank(int d1, int d2, int r, double decay,
                                    double fro_norm, Rng rng) {
  Eigen::MatrixXd ga(d1, r), gb(d2, r);
  for (int i = 0; i < d1; ++i)
    for (int j = 0; j < r; ++j) ga(i, j) = rng.gaussian();
  for (int i = 0; i < d2; ++i)
    for (int j = 0; j < r; ++j) gb(i, j) = rng.gaussian();
  const Eigen::MatrixXd u =
      Eigen::HouseholderQR<Eigen::MatrixXd>(ga).householderQ() *
      Eigen::MatrixXd::Identity(d1, r);
  const Eigen::MatrixXd v =
      Eigen::HouseholderQR<Eigen::MatrixXd>(gb).householderQ() *
      Eigen::MatrixXd::Identity(d2, r);
  Eigen::VectorXd sv(r);
  for (int j = 0; j < r; ++j) sv(j) = std::pow(1.0 + decay, -j);
  sv *= fro_norm / sv.norm();
  return u * sv.asDiagonal() * v.transpose();
}

/// Everything the experiments need to know about the generated truth.
struct InstanceTruth {
  ParameterPoint theta_star;       // stacked [Theta* | Gamma*] for MatDecomp
  SubspacePair pair;
  SigmaSummary sigma;
  double rho = 0;         // recommended radius, R(theta*)
  double rho_gamma = 0;   // decomposition second radius
  double box_bound = 0;   // spikiness box bound actually used
  double alpha_spike = 0; // spikiness scale (bound times d or sqrt(d2))
  double lambda_n = 0;    // recommended penalty weight
  double mu_threshold = 0;  // truncation level behind the subspace pair
  int sparsity = 0;       // s, r, or |S_mu|
};

struct Instance {
  LossModel model;
  InstanceTruth truth;
  RegularizerSpec reg;
  ConstraintSet constraint;
  double gamma_hint = 0;       // fixed step curvature; 0 = use doubling
  double gamma_init_hint = 1;  // doubling start when gamma_hint == 0
};

/// Generates the full instance for a spec: observations, truth, the
/// regularizer, the feasible set with its recommended radii (set to the
/// truth norms), and the recommended penalty weight.
inline Instance gen_instance(const EnsembleSpec& spec) {
  spec.validate();
  Rng root(spec.seed);
  Rng design_rng = root.stream(1);
  Rng truth_rng = root.stream(2);
  Rng noise_rng = root.stream(3);

  switch (spec.family) {
    case Family::SparseLinear:
    case Family::LogisticSparse: {
      const bool logistic = spec.family == Family::LogisticSparse;
      const Eigen::MatrixXd x =
          gen_design_ar1(spec.d, spec.n, spec.omega, design_rng);
      const Eigen::VectorXd theta =
          gen_truth_sparse(spec.d, spec.s, spec.q, spec.Rq, truth_rng);
      Eigen::VectorXd y(spec.n);
      const Eigen::VectorXd mean = x * theta;
      if (logistic) {
        for (int i = 0; i < spec.n; ++i)
          y(i) = noise_rng.uniform() < sigmoid(mean(i)) ? 1.0 : 0.0;
      } else {
        for (int i = 0; i < spec.n; ++i)
          y(i) = mean(i) + spec.nu * noise_rng.gaussian();
      }
      Instance inst{
          logistic
              ? LossModel::logistic(ObservationOperator::dense_vector(x), y)
              : LossModel::quadratic(ObservationOperator::dense_vector(x), y),
          InstanceTruth{ParameterPoint::vector(theta),
                        SubspacePair::for_support({}, spec.d),
                        ar1_sigma_summary(spec.omega)},
          RegularizerSpec::l1(spec.d), ConstraintSet{}};
      inst.truth.rho = theta.lpNorm<1>();
      inst.truth.lambda_n =
          6 * std::sqrt(spec.nu * std::log(static_cast<double>(spec.d)) /
                        spec.n);
      const double mu =
          spec.q == 0
              ? 0.0
              : std::sqrt(std::log(static_cast<double>(spec.d)) / spec.n);
      inst.truth.mu_threshold = mu;
      inst.truth.pair = SubspacePair::from_truth(
          inst.reg, inst.truth.theta_star, mu);
      inst.truth.sparsity = inst.truth.pair.model_size();
      if (logistic) {
        // Curvature bounds for the logistic loss hold on an l2 ball around
        // the origin; the feasible set is the norm ball cut to that ball.
        const double r2 = 2 * std::max(1.0, theta.norm());
        inst.constraint = ConstraintSet::intersection(
            {ConstraintSet::reg_ball(inst.reg, inst.truth.rho),
             ConstraintSet::l2_ball(r2)});
        inst.gamma_hint = 0;
        inst.gamma_init_hint = 0.25 * inst.truth.sigma.smax;
      } else {
        inst.constraint = ConstraintSet::reg_ball(inst.reg, inst.truth.rho);
        inst.gamma_hint = 2 * inst.truth.sigma.smax;
      }
      return inst;
    }

    case Family::MatrixCS: {
      const int d = spec.d;
      const int r = spec.q == 0 ? spec.rank : d;
      Eigen::MatrixXd theta;
      if (spec.q == 0) {
        theta = gen_low_rank(d, d, r, spec.singular_decay, 1.0, truth_rng);
      } else {
        // Soft-sparse spectrum: singular values C j^{-1/q} with q-th-power
        // mass on the radius.
        double harmonic = 0;
        for (int j = 1; j <= d; ++j) harmonic += 1.0 / j;
        const double c = std::pow(spec.Rq / harmonic, 1.0 / spec.q);
        Eigen::MatrixXd base =
            gen_low_rank(d, d, d, 0.0, 1.0, truth_rng.stream(7));
        const Svd s = svd_thin(base);
        Eigen::VectorXd sv(d);
        for (int j = 0; j < d; ++j)
          sv(j) = c * std::pow(j + 1.0, -1.0 / spec.q);
        theta = s.u * sv.asDiagonal() * s.v.transpose();
      }
      Eigen::MatrixXd rows(spec.n, d * d);
      for (int i = 0; i < spec.n; ++i)
        for (int j = 0; j < d * d; ++j) rows(i, j) = design_rng.gaussian();
      ObservationOperator op =
          ObservationOperator::dense_matrix_flat(std::move(rows), d, d);
      Eigen::VectorXd y = op.apply(theta);
      for (int i = 0; i < spec.n; ++i) y(i) += spec.nu * noise_rng.gaussian();
      Instance inst{LossModel::quadratic(std::move(op), std::move(y)),
                    InstanceTruth{ParameterPoint::matrix(theta),
                                  SubspacePair::for_factors(
                                      Eigen::MatrixXd::Zero(d, 0),
                                      Eigen::MatrixXd::Zero(d, 0)),
                                  SigmaSummary{}},
                    RegularizerSpec::nuclear(d, d), ConstraintSet{}};
      inst.truth.rho = svd_thin(theta).sigma.sum();
      // An exactly rank-r truth still carries floating-point singular-value
      // dust; the tiny threshold keeps the pair at rank r.
      const double mu = spec.q == 0
                            ? 1e-9
                            : std::sqrt(static_cast<double>(d) / spec.n);
      inst.truth.mu_threshold = mu;
      inst.truth.pair =
          SubspacePair::from_truth(inst.reg, inst.truth.theta_star, mu);
      inst.truth.sparsity = inst.truth.pair.model_size();
      inst.truth.lambda_n =
          6 * std::sqrt(spec.nu * static_cast<double>(d) / spec.n);
      inst.constraint = ConstraintSet::reg_ball(inst.reg, inst.truth.rho);
      inst.gamma_hint = 2.0;  // identity covariate ensemble
      return inst;
    }

    case Family::MatComp: {
      const int d = spec.d;
      // Entry scale around one keeps the observations informative against
      // the noise level.
      Eigen::MatrixXd theta = gen_low_rank(
          d, d, spec.rank, spec.singular_decay,
          static_cast<double>(d) / std::sqrt(static_cast<double>(spec.rank)),
          truth_rng);
      double bound;
      if (spec.spikiness > 0) {
        bound = spec.spikiness / d;
        const double maxabs = theta.lpNorm<Eigen::Infinity>();
        if (maxabs > bound) theta *= bound / maxabs;
      } else {
        bound = theta.lpNorm<Eigen::Infinity>();
      }
      std::vector<std::pair<int, int>> entries(spec.n);
      std::vector<int> counts(d * d, 0);
      for (int i = 0; i < spec.n; ++i) {
        entries[i] = {static_cast<int>(design_rng.uniform_index(d)),
                      static_cast<int>(design_rng.uniform_index(d))};
        ++counts[entries[i].first * d + entries[i].second];
      }
      // The sampling loss has a diagonal Hessian of entry counts over n;
      // its largest value is the exact smoothness constant and makes a
      // good doubling start.
      const int max_count =
          *std::max_element(counts.begin(), counts.end());
      ObservationOperator op =
          ObservationOperator::entry_sampler(std::move(entries), d, d);
      Eigen::VectorXd y = op.apply(theta);
      for (int i = 0; i < spec.n; ++i) y(i) += spec.nu * noise_rng.gaussian();
      Instance inst{LossModel::quadratic(std::move(op), std::move(y)),
                    InstanceTruth{ParameterPoint::matrix(theta),
                                  SubspacePair::for_factors(
                                      Eigen::MatrixXd::Zero(d, 0),
                                      Eigen::MatrixXd::Zero(d, 0)),
                                  SigmaSummary{}},
                    RegularizerSpec::nuclear(d, d), ConstraintSet{}};
      inst.truth.rho = svd_thin(theta).sigma.sum();
      inst.truth.box_bound = bound;
      inst.truth.alpha_spike = bound * d;
      inst.truth.pair =
          SubspacePair::from_truth(inst.reg, inst.truth.theta_star, 1e-9);
      inst.truth.sparsity = inst.truth.pair.model_size();
      inst.constraint = ConstraintSet::intersection(
          {ConstraintSet::reg_ball(inst.reg, inst.truth.rho),
           ConstraintSet::linf_box(bound)});
      inst.gamma_hint = 0;
      inst.gamma_init_hint = static_cast<double>(std::max(max_count, 1)) /
                             spec.n;
      return inst;
    }

    case Family::MatDecomp: {
      const int d1 = spec.d1, d2 = spec.d2;
      Eigen::MatrixXd theta =
          gen_low_rank(d1, d2, spec.rank, spec.singular_decay,
                       std::sqrt(static_cast<double>(d1) * d2 / spec.rank),
                       truth_rng);
      double bound;
      if (spec.spikiness > 0) {
        bound = spec.spikiness / std::sqrt(static_cast<double>(d2));
        double max_col = 0;
        for (int j = 0; j < d2; ++j)
          max_col = std::max(max_col, theta.col(j).norm());
        if (max_col > bound) theta *= bound / max_col;
      } else {
        bound = 0;
        for (int j = 0; j < d2; ++j)
          bound = std::max(bound, theta.col(j).norm());
      }
      // Column-sparse component: s uniformly chosen columns, unit norm.
      Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(d1, d2);
      std::vector<int> cols(d2);
      for (int j = 0; j < d2; ++j) cols[j] = j;
      for (int j = 0; j < spec.s; ++j) {
        const int k = j + static_cast<int>(truth_rng.uniform_index(d2 - j));
        std::swap(cols[j], cols[k]);
      }
      for (int j = 0; j < spec.s; ++j) {
        Eigen::VectorXd col(d1);
        for (int i = 0; i < d1; ++i) col(i) = truth_rng.gaussian();
        gamma.col(cols[j]) = col / col.norm();
      }
      Eigen::MatrixXd yobs = theta + gamma;
      for (int i = 0; i < d1; ++i)
        for (int j = 0; j < d2; ++j)
          yobs(i, j) += spec.nu * noise_rng.gaussian();
      Eigen::MatrixXd stacked(d1, 2 * d2);
      stacked.leftCols(d2) = theta;
      stacked.rightCols(d2) = gamma;
      Instance inst{make_decomposition_loss(yobs),
                    InstanceTruth{ParameterPoint::matrix(stacked),
                                  SubspacePair::from_truth(
                                      RegularizerSpec::nuclear(d1, d2),
                                      ParameterPoint::matrix(theta), 1e-9),
                                  SigmaSummary{}},
                    RegularizerSpec::nuclear(d1, d2), ConstraintSet{}};
      inst.truth.rho = svd_thin(theta).sigma.sum();
      inst.truth.rho_gamma = static_cast<double>(spec.s);
      inst.truth.box_bound = bound;
      inst.truth.alpha_spike = bound * std::sqrt(static_cast<double>(d2));
      inst.truth.sparsity = spec.s;
      ConstraintSet theta_block = ConstraintSet::intersection(
          {ConstraintSet::reg_ball(inst.reg, inst.truth.rho),
           ConstraintSet::col2_box(bound)});
      ConstraintSet gamma_block = ConstraintSet::reg_ball(
          RegularizerSpec::column12(d1, d2), inst.truth.rho_gamma);
      inst.constraint = ConstraintSet::product(
          {std::move(theta_block), std::move(gamma_block)}, {d2, d2});
      inst.gamma_hint = 2.0;  // exact smoothness constant of the stacked loss
      return inst;
    }
  }
  throw ConfigError("unknown ensemble family");
}

}  // namespace restgrad
