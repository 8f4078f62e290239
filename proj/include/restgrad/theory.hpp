#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "restgrad/losses.hpp"
#include "restgrad/parameter.hpp"
#include "restgrad/regularizers.hpp"
#include "restgrad/rng.hpp"
#include "restgrad/solvers.hpp"

namespace restgrad {

/// Restricted curvature/smoothness description of a loss: the Taylor error
/// is bounded below by (gamma_l/2)||D||^2 - tau_l R^2(D) - delta and above
/// by (gamma_u/2)||D||^2 + tau_u R^2(D).
struct RscRsmParams {
  double gamma_l = 0;
  double gamma_u = 0;
  double tau_l = 0;
  double tau_u = 0;
  double delta = 0;  // extra additive slack in the lower bound
};

enum class Regime { Ok, OutOfRegime, EmpiricalOnly };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::Ok: return "ok";
    case Regime::OutOfRegime: return "out_of_regime";
    case Regime::EmpiricalOnly: return "empirical_only";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Contraction coefficients and tolerances
// ---------------------------------------------------------------------------

struct Contraction {
  Regime regime = Regime::OutOfRegime;
  double kappa = std::numeric_limits<double>::quiet_NaN();
};

/// Contraction coefficient of the projected method:
///   kappa = [1 - gl/gu + 16 Psi^2 (tu + tl)/gu] / [1 - 16 Psi^2 tu / gu],
/// flagged out of regime when the denominator is nonpositive or kappa falls
/// outside (0, 1).
inline Contraction contraction_thm1(const RscRsmParams& p, double psi) {
  const double psi2 = psi * psi;
  const double denom = 1 - 16 * psi2 * p.tau_u / p.gamma_u;
  if (denom <= 0) return {};
  const double num =
      1 - p.gamma_l / p.gamma_u + 16 * psi2 * (p.tau_u + p.tau_l) / p.gamma_u;
  const double kappa = num / denom;
  if (!(kappa > 0) || !(kappa < 1)) return {Regime::OutOfRegime, kappa};
  return {Regime::Ok, kappa};
}

/// Tolerance of the projected method:
///   eps^2 = 32 (tu + tl) (2 R(proj_perp theta*) + Psi ||D*|| + 2 R(D*))^2
///           / gu.
inline double tolerance_thm1(const RscRsmParams& p, double psi,
                             double reg_proj_perp, double stat_err_norm,
                             double reg_stat_err) {
  const double bracket =
      2 * reg_proj_perp + psi * stat_err_norm + 2 * reg_stat_err;
  return 32 * (p.tau_u + p.tau_l) * bracket * bracket / p.gamma_u;
}

struct CompositeContraction {
  Regime regime = Regime::OutOfRegime;
  double gamma_bar_l = std::numeric_limits<double>::quiet_NaN();
  double xi = std::numeric_limits<double>::quiet_NaN();
  double beta = std::numeric_limits<double>::quiet_NaN();
  double kappa = std::numeric_limits<double>::quiet_NaN();
};

/// Compound contraction machinery of the composite method:
///   gamma_bar_l = gl - 64 tl Psi^2
///   xi   = (1 - 64 tu Psi^2 / gamma_bar_l)^{-1}
///   beta = 2 (gamma_bar_l/(4 gu) + 128 tu Psi^2 / gamma_bar_l) tl
///          + 8 tu + 2 tl
///   kappa = (1 - gamma_bar_l/(4 gu) + 64 Psi^2 tu / gamma_bar_l) * xi.
inline CompositeContraction contraction_thm2(const RscRsmParams& p,
                                             double psi) {
  CompositeContraction out;
  const double psi2 = psi * psi;
  out.gamma_bar_l = p.gamma_l - 64 * p.tau_l * psi2;
  if (out.gamma_bar_l <= 0) return out;
  const double ratio = 64 * p.tau_u * psi2 / out.gamma_bar_l;
  if (ratio >= 1) return out;
  out.xi = 1.0 / (1.0 - ratio);
  out.beta = 2 * (out.gamma_bar_l / (4 * p.gamma_u) +
                  128 * p.tau_u * psi2 / out.gamma_bar_l) *
                 p.tau_l +
             8 * p.tau_u + 2 * p.tau_l;
  out.kappa = (1 - out.gamma_bar_l / (4 * p.gamma_u) + ratio) * out.xi;
  out.regime = (out.kappa >= 0 && out.kappa < 1) ? Regime::Ok
                                                 : Regime::OutOfRegime;
  return out;
}

/// Compound tolerance of the composite method:
///   eps^2 = 8 xi beta (6 Psi ||D*|| + 8 R(proj_perp theta*))^2.
inline double tolerance_thm2(const CompositeContraction& c, double psi,
                             double stat_err_norm, double reg_proj_perp) {
  const double bracket = 6 * psi * stat_err_norm + 8 * reg_proj_perp;
  return 8 * c.xi * c.beta * bracket * bracket;
}

/// Iteration count after which the composite excess objective is guaranteed
/// below delta^2 (valid for delta^2 at least the compound tolerance divided
/// by 1 - kappa):
///   2 log(excess_0/delta^2)/log(1/kappa)
///   + log2 log2(rho_bar lambda_n / delta^2) (1 + log 2 / log(1/kappa)).
inline double thm2_iteration_bound(double kappa, double delta_sq,
                                   double initial_excess, double rho_bar,
                                   double lambda_n) {
  if (kappa <= 0 || kappa >= 1 || delta_sq <= 0)
    return std::numeric_limits<double>::infinity();
  const double log_inv_kappa = std::log(1.0 / kappa);
  double bound = 2 * std::log(std::max(initial_excess / delta_sq, 1.0)) /
                 log_inv_kappa;
  const double inner = rho_bar * lambda_n / delta_sq;
  if (inner > 2) {
    const double ll = std::log2(std::log2(inner));
    if (ll > 0) bound += ll * (1 + std::log(2.0) / log_inv_kappa);
  }
  return bound;
}

/// Parameter-error bound implied by achieving excess objective delta^2:
///   2 delta^2 / gamma_bar_l + 16 delta^2 tl/(gamma_bar_l lambda_n^2)
///   + 4 tl (6 Psi + 8 R(proj_perp theta*))^2 / gamma_bar_l.
inline double thm2_param_error_bound(const CompositeContraction& c,
                                     double delta_sq, double tau_l,
                                     double lambda_n, double psi,
                                     double reg_proj_perp) {
  const double bracket = 6 * psi + 8 * reg_proj_perp;
  return 2 * delta_sq / c.gamma_bar_l +
         16 * delta_sq * tau_l / (c.gamma_bar_l * lambda_n * lambda_n) +
         4 * tau_l * bracket * bracket / c.gamma_bar_l;
}

// ---------------------------------------------------------------------------
// Corollary plug-in constants
// ---------------------------------------------------------------------------

enum class CorollaryKind {
  SparseExact,
  SparseWeak,
  LassoLag,
  MatrixCS,
  MatComp,
  MatDecomp
};

/// Universal constants the plug-in formulas leave unspecified; every report
/// echoes the values used.  Defaults are 1.
struct UniversalConstants {
  double c0 = 1, c1 = 1, c2 = 1, c3 = 1, c4 = 1;
};

struct CorollaryInput {
  double sigma_min = 1;   // design covariance extremes
  double sigma_max = 1;
  double zeta = 1;        // max design variance (or its rank-one analogue)
  double sparsity = 0;    // s, r, or R_q depending on the family
  double q = 0;
  int d = 0;              // ambient dimension (d2 for decomposition)
  int n = 0;
  double alpha_spike = 0;      // spikiness bound scale
  double stat_err_sq = 0;      // ||theta_hat - theta*||^2 when known
  double stat_err_gamma_sq = 0;  // decomposition: ||Gamma_hat - Gamma*||^2
  UniversalConstants c;
};

struct TheoryReport {
  CorollaryKind kind = CorollaryKind::SparseExact;
  Regime regime = Regime::OutOfRegime;
  double chi_n = std::numeric_limits<double>::quiet_NaN();
  double kappa = std::numeric_limits<double>::quiet_NaN();
  double tolerance_sq = std::numeric_limits<double>::quiet_NaN();
  UniversalConstants constants_used;
};

/// Plug-in contraction and tolerance per statistical family.  The
/// column-sparse decomposition family has the deterministic rate 3/4; matrix
/// completion has no closed-form rate and is flagged for empirical fitting.
inline TheoryReport corollary_constants(CorollaryKind kind,
                                        const CorollaryInput& in) {
  TheoryReport rep;
  rep.kind = kind;
  rep.constants_used = in.c;
  const double logd = std::log(static_cast<double>(std::max(in.d, 2)));
  auto ratio_kappa = [&](double chi, double quarter) -> void {
    rep.chi_n = chi;
    if (chi >= 1) {
      rep.regime = Regime::OutOfRegime;
      return;
    }
    rep.kappa =
        (1 - in.sigma_min / (quarter * in.sigma_max) + chi) / (1 - chi);
    rep.regime =
        (rep.kappa > 0 && rep.kappa < 1) ? Regime::Ok : Regime::OutOfRegime;
  };
  switch (kind) {
    case CorollaryKind::SparseExact: {
      const double chi = in.c.c0 * in.zeta / in.sigma_max * in.sparsity *
                         logd / in.n;
      ratio_kappa(chi, 4);
      rep.tolerance_sq = in.c.c2 * chi * in.stat_err_sq;
      return rep;
    }
    case CorollaryKind::SparseWeak: {
      const double rate = std::pow(logd / in.n, 1 - in.q / 2);
      const double chi = in.c.c0 * in.zeta / in.sigma_max * in.sparsity * rate;
      ratio_kappa(chi, 4);
      rep.tolerance_sq =
          in.c.c2 * chi * (in.sparsity * rate + in.stat_err_sq);
      return rep;
    }
    case CorollaryKind::LassoLag: {
      const double gamma_l = 0.5 * in.sigma_min;
      const double gamma_bar =
          gamma_l - in.c.c0 * in.sparsity * logd / in.n * in.zeta;
      if (gamma_bar <= 0) {
        rep.regime = Regime::OutOfRegime;
        return rep;
      }
      const double chi = in.zeta / gamma_bar * in.sparsity * logd / in.n;
      rep.chi_n = chi;
      if (in.c.c2 * chi >= 1 || in.c.c3 * chi >= 1) {
        rep.regime = Regime::OutOfRegime;
        return rep;
      }
      rep.kappa = (1 - in.sigma_min / (16 * in.sigma_max) + in.c.c1 * chi) /
                  (1 - in.c.c2 * chi);
      rep.regime =
          (rep.kappa > 0 && rep.kappa < 1) ? Regime::Ok : Regime::OutOfRegime;
      rep.tolerance_sq = (5 + in.c.c2 * chi) / (1 - in.c.c3 * chi) * in.zeta *
                         in.sparsity * logd / in.n * in.stat_err_sq;
      return rep;
    }
    case CorollaryKind::MatrixCS: {
      const double rate =
          std::pow(static_cast<double>(in.d) / in.n, 1 - in.q / 2);
      const double chi = in.c.c1 * in.zeta / in.sigma_max * in.sparsity * rate;
      ratio_kappa(chi, 4);
      rep.tolerance_sq =
          in.c.c2 * chi * (in.sparsity * rate + in.stat_err_sq);
      return rep;
    }
    case CorollaryKind::MatComp: {
      const double needed = in.c.c0 *
                            std::pow(in.sparsity, 1.0 / (1 - in.q / 2)) *
                            in.d * logd;
      rep.regime = in.n > needed ? Regime::EmpiricalOnly : Regime::OutOfRegime;
      const double rate = std::pow(
          in.alpha_spike * in.alpha_spike * in.d * logd / in.n, 1 - in.q / 2);
      rep.tolerance_sq =
          in.c.c2 * (in.sparsity * rate + in.stat_err_sq);
      return rep;
    }
    case CorollaryKind::MatDecomp: {
      rep.kappa = 0.75;
      rep.regime = Regime::Ok;
      rep.tolerance_sq =
          in.c.c2 * (in.stat_err_gamma_sq + in.alpha_spike * in.alpha_spike *
                                                in.sparsity / in.d);
      return rep;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Empirical curvature probes
// ---------------------------------------------------------------------------

/// A pair of points whose Taylor error is probed.
struct DirectionPair {
  Eigen::MatrixXd theta;
  Eigen::MatrixXd theta_prime;
};

/// Cone-constrained, dense, and trajectory direction pairs around a base
/// point; the mix covers the regions where the curvature bounds must hold.
inline std::vector<DirectionPair> sample_direction_pairs(
    const Eigen::MatrixXd& base, const SubspacePair& pair, Rng rng, int count,
    double scale = 1.0) {
  std::vector<DirectionPair> out;
  out.reserve(count);
  auto gauss = [&](Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.gaussian();
  };
  for (int i = 0; i < count; ++i) {
    Eigen::MatrixXd g(base.rows(), base.cols());
    gauss(g);
    Eigen::MatrixXd delta;
    switch (i % 3) {
      case 0:  // model-subspace direction
        delta = pair.project_raw(g, Subspace::Model);
        break;
      case 1:  // cone-like: model direction plus a small dense part
        delta = pair.project_raw(g, Subspace::Model) + 0.25 * g;
        break;
      default:  // dense direction
        delta = g;
    }
    const double nrm = delta.norm();
    if (nrm < 1e-12) continue;
    delta *= scale * (0.25 + rng.uniform()) / nrm;
    out.push_back({base + delta, base});
  }
  return out;
}

/// Adds the recorded solve trajectory as probe pairs: consecutive iterates
/// and iterate-to-reference pairs, exactly the differences the convergence
/// argument bounds.
inline void add_trajectory_pairs(std::vector<DirectionPair>& pairs,
                                 const IterateTrace& trace,
                                 const Eigen::MatrixXd& reference) {
  // Pairs much closer than the loss-evaluation noise floor carry no
  // curvature information and are skipped.
  const double cutoff = 1e-6 * (1 + reference.norm());
  for (std::size_t i = 0; i < trace.iterates.size(); ++i) {
    if ((trace.iterates[i] - reference).norm() > cutoff)
      pairs.push_back({trace.iterates[i], reference});
    if (i + 1 < trace.iterates.size() &&
        (trace.iterates[i + 1] - trace.iterates[i]).norm() > cutoff)
      pairs.push_back({trace.iterates[i + 1], trace.iterates[i]});
  }
}

struct ProbeReport {
  int samples = 0;
  int lower_violations = 0;
  int upper_violations = 0;
  double worst_lower_margin = std::numeric_limits<double>::infinity();
  double worst_upper_margin = std::numeric_limits<double>::infinity();
  double violation_fraction() const {
    return samples == 0 ? 0.0
                        : static_cast<double>(lower_violations +
                                              upper_violations) /
                              (2.0 * samples);
  }
};

/// Checks candidate curvature parameters against the sampled Taylor errors:
/// lower margin T - [(gl/2)||D||^2 - tl R^2(D) - delta], upper margin
/// [(gu/2)||D||^2 + tu R^2(D)] - T.  Negative margins are violations.
inline ProbeReport rsc_rsm_probe(const LossModel& model,
                                 const std::vector<DirectionPair>& pairs,
                                 const RegularizerSpec& spec,
                                 const RscRsmParams& params) {
  ProbeReport rep;
  for (const auto& p : pairs) {
    const double t = taylor_error(model, p.theta, p.theta_prime);
    const Eigen::MatrixXd d = p.theta - p.theta_prime;
    const double nsq = d.squaredNorm();
    const double rsq = spec.value_raw(d) * spec.value_raw(d);
    const double lower =
        0.5 * params.gamma_l * nsq - params.tau_l * rsq - params.delta;
    const double upper = 0.5 * params.gamma_u * nsq + params.tau_u * rsq;
    const double lm = t - lower;
    const double um = upper - t;
    rep.worst_lower_margin = std::min(rep.worst_lower_margin, lm);
    rep.worst_upper_margin = std::min(rep.worst_upper_margin, um);
    if (lm < -1e-10 * (1 + std::abs(t))) ++rep.lower_violations;
    if (um < -1e-10 * (1 + std::abs(t))) ++rep.upper_violations;
    ++rep.samples;
  }
  return rep;
}

enum class FitTarget {
  ScaledTolerance,  // tolerances pinned to the plug-in scaling
  Thm1,             // pick the tolerance multiplier giving the best kappa
  Thm2              // pick the multiplier meeting the composite conditions
};

struct FittedParams {
  RscRsmParams params;
  double multiplier = 1;  // tolerance multiplier actually used
  Regime regime = Regime::OutOfRegime;
};

/// Fits curvature constants from sampled Taylor errors.  For a tolerance
/// value tau the extremal valid constants are
///   gamma_l(tau) = min over samples 2 (T + tau R^2)/||D||^2,
///   gamma_u(tau) = max over samples 2 (T - tau R^2)/||D||^2.
/// ScaledTolerance pins tau to `tau_scaling` (one-parameter fit).  The
/// theorem-directed targets sweep tau over multiplier * tau_scaling for a
/// fixed multiplier grid and keep the largest multiplier whose plug-in
/// contraction machinery stays in regime; the multiplier used is reported.
inline FittedParams fit_rsc_rsm(const LossModel& model,
                                const std::vector<DirectionPair>& pairs,
                                const RegularizerSpec& spec,
                                double tau_scaling, double psi,
                                FitTarget target,
                                double lambda_n = 0, double rho_bar = 0) {
  if (pairs.empty()) throw ConfigError("curvature fit needs sample pairs");
  std::vector<double> nsq, rsq, terr;
  nsq.reserve(pairs.size());
  for (const auto& p : pairs) {
    const Eigen::MatrixXd d = p.theta - p.theta_prime;
    const double n2 = d.squaredNorm();
    // Differences at the loss-evaluation noise floor would make the
    // curvature ratios pure cancellation error.
    if (n2 < 1e-12 * (1 + p.theta_prime.squaredNorm())) continue;
    nsq.push_back(n2);
    const double r = spec.value_raw(d);
    rsq.push_back(r * r);
    terr.push_back(taylor_error(model, p.theta, p.theta_prime));
  }
  if (nsq.empty()) throw ConfigError("curvature fit needs nonzero pairs");
  auto fit_at = [&](double tau) {
    RscRsmParams p;
    p.tau_l = p.tau_u = tau;
    double gl = std::numeric_limits<double>::infinity();
    double gu = 0;
    for (std::size_t i = 0; i < nsq.size(); ++i) {
      gl = std::min(gl, 2 * (terr[i] + tau * rsq[i]) / nsq[i]);
      gu = std::max(gu, 2 * (terr[i] - tau * rsq[i]) / nsq[i]);
    }
    p.gamma_l = std::max(gl, 0.0);
    p.gamma_u = std::max(gu, p.gamma_l);
    return p;
  };

  if (target == FitTarget::ScaledTolerance) {
    FittedParams f{fit_at(tau_scaling), 1.0, Regime::Ok};
    return f;
  }

  static constexpr double kGrid[] = {1.0,   0.5,   0.25,  0.1,  0.05,
                                     0.02,  0.01,  0.005, 1e-3, 5e-4,
                                     1e-4,  1e-5,  1e-6};
  FittedParams best;
  for (double c : kGrid) {
    const double tau = c * tau_scaling;
    const RscRsmParams p = fit_at(tau);
    if (target == FitTarget::Thm1) {
      const Contraction k = contraction_thm1(p, psi);
      if (k.regime == Regime::Ok) return {p, c, Regime::Ok};
    } else {
      const CompositeContraction k = contraction_thm2(p, psi);
      if (k.regime != Regime::Ok || k.beta <= 0) continue;
      // Step-size condition on the penalty weight:
      //   32 rho_bar xi beta / (1 - kappa) <= lambda_n.
      const double need = 32 * rho_bar * k.xi * k.beta / (1 - k.kappa);
      if (lambda_n > 0 && need > lambda_n) continue;
      return {p, c, Regime::Ok};
    }
  }
  // Nothing in regime: report the pinned-scaling fit, flagged.
  best.params = fit_at(tau_scaling);
  best.multiplier = 1.0;
  best.regime = Regime::OutOfRegime;
  return best;
}

// ---------------------------------------------------------------------------
// Cone inequality checks
// ---------------------------------------------------------------------------

enum class ConeMode {
  Thm1Cone,  // constrained-run error cone
  ICB,       // iterated cone bound for composite runs
  StatCone   // statistical-error cone
};

struct ConeReport {
  std::vector<double> margins;  // slack per recorded iterate, >= 0 expected
  double min_margin = std::numeric_limits<double>::infinity();
  int violations = 0;

  void add(double m) {
    margins.push_back(m);
    min_margin = std::min(min_margin, m);
    if (m < -1e-8) ++violations;
  }
};

struct ConeInputs {
  const SubspacePair* pair = nullptr;
  ParameterPoint theta_star;
  ParameterPoint theta_hat;
  double lambda_n = 0;                // ICB
  double rho_bar = 0;                 // ICB
  double objective_at_opt = 0;        // ICB: phi(theta_hat)
};

/// Slack of the cone inequalities along a recorded trace.  Thm1Cone bounds
/// R(D_t) by 2 Psi ||D_t|| + 2 R(proj_perp theta*) + 2 R(D*) + Psi ||D*||;
/// ICB bounds it by 4 Psi ||D_t|| + 8 Psi ||D*|| + 8 R(proj_perp theta*)
/// + 2 min(excess_t/lambda_n, rho_bar); StatCone bounds R(D*) by
/// 2 Psi ||D*|| + R(proj_perp theta*).
inline ConeReport cone_check(const IterateTrace& trace,
                             const RegularizerSpec& spec,
                             const ConeInputs& in, ConeMode mode) {
  if (!in.pair) throw ConfigError("cone check needs a subspace pair");
  ConeReport rep;
  const double psi = subspace_compat(spec, *in.pair);
  const Eigen::MatrixXd proj_perp =
      in.pair->project_raw(in.theta_star.data(), Subspace::ModelPerp);
  const double reg_proj_perp = spec.value_raw(proj_perp);
  const Eigen::MatrixXd dstar = in.theta_hat.data() - in.theta_star.data();
  const double stat_norm = dstar.norm();
  const double reg_dstar = spec.value_raw(dstar);

  if (mode == ConeMode::StatCone) {
    rep.add(2 * psi * stat_norm + reg_proj_perp - reg_dstar);
    return rep;
  }
  if (trace.iterates.empty())
    throw ConfigError("cone check needs retained iterates");
  for (std::size_t i = 0; i < trace.iterates.size(); ++i) {
    const Eigen::MatrixXd d = trace.iterates[i] - in.theta_hat.data();
    const double reg_d = spec.value_raw(d);
    const double norm_d = d.norm();
    if (mode == ConeMode::Thm1Cone) {
      rep.add(2 * psi * norm_d + 2 * reg_proj_perp + 2 * reg_dstar +
              psi * stat_norm - reg_d);
    } else {
      const double excess =
          std::max(trace.rows[i].objective - in.objective_at_opt, 0.0);
      const double cap =
          in.lambda_n > 0 ? std::min(excess / in.lambda_n, in.rho_bar)
                          : in.rho_bar;
      rep.add(4 * psi * norm_d + 8 * psi * stat_norm + 8 * reg_proj_perp +
              2 * cap - reg_d);
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Geometric-rate fitting and recursion audit
// ---------------------------------------------------------------------------

enum class RateStatus { Ok, NoGeometricPhase, TooFewPoints };

struct RateFit {
  RateStatus status = RateStatus::TooFewPoints;
  double kappa_hat = std::numeric_limits<double>::quiet_NaN();
  double slope = std::numeric_limits<double>::quiet_NaN();
  double r_squared = std::numeric_limits<double>::quiet_NaN();
  double floor = std::numeric_limits<double>::quiet_NaN();
  double max_abs_residual = std::numeric_limits<double>::quiet_NaN();
  int points_used = 0;
};

/// Fits log err_t = a + b t over the iterations whose error stays above
/// floor_guard times the final error, and reports kappa_hat = exp(2 b) (the
/// squared-error convention) with the fit's R^2.  A run whose final error
/// exceeds half the initial error is declared to have no geometric phase.
inline RateFit fit_geometric_rate(
    const std::vector<std::pair<int, double>>& errors,
    double floor_guard = 3.0) {
  RateFit fit;
  std::vector<std::pair<int, double>> pos;
  for (auto [t, e] : errors)
    if (std::isfinite(e) && e > 0) pos.emplace_back(t, e);
  if (pos.size() < 2) return fit;
  const double initial = pos.front().second;
  const double final_err = pos.back().second;
  fit.floor = final_err;
  if (final_err > 0.5 * initial) {
    fit.status = RateStatus::NoGeometricPhase;
    return fit;
  }
  std::vector<double> xs, ys;
  for (auto [t, e] : pos)
    if (e > floor_guard * final_err) {
      xs.push_back(t);
      ys.push_back(std::log(e));
    }
  fit.points_used = static_cast<int>(xs.size());
  if (xs.size() < 10) {
    // A long trace that flatlined well above two decades of progress is a
    // stalled run, not a short one.
    fit.status = (pos.size() >= 30 && final_err > 1e-2 * initial)
                     ? RateStatus::NoGeometricPhase
                     : RateStatus::TooFewPoints;
    return fit;
  }
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
    syy += ys[i] * ys[i];
  }
  const double denom = n * sxx - sx * sx;
  if (denom <= 0) return fit;
  fit.slope = (n * sxy - sx * sy) / denom;
  const double intercept = (sy - fit.slope * sx) / n;
  double ss_res = 0;
  const double mean_y = sy / n;
  double ss_tot = 0;
  fit.max_abs_residual = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double pred = intercept + fit.slope * xs[i];
    ss_res += (ys[i] - pred) * (ys[i] - pred);
    ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
    fit.max_abs_residual =
        std::max(fit.max_abs_residual, std::abs(ys[i] - pred));
  }
  fit.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  fit.kappa_hat = std::exp(2 * fit.slope);
  fit.status = RateStatus::Ok;
  return fit;
}

struct RecursionAudit {
  int checked = 0;
  int holds = 0;
  double worst_violation = 0;  // largest positive excess over the bound
  double fraction_ok() const {
    return checked == 0 ? 1.0 : static_cast<double>(holds) / checked;
  }
};

/// Audits the per-iteration recursion err_{t+1}^2 <= kappa err_t^2 + eps^2
/// over the iterations whose error stays above floor_guard times the final
/// error.
inline RecursionAudit audit_recursion(
    const std::vector<std::pair<int, double>>& errors, double kappa,
    double eps_sq, double floor_guard = 3.0) {
  RecursionAudit audit;
  if (errors.size() < 2) return audit;
  const double final_err = errors.back().second;
  for (std::size_t i = 0; i + 1 < errors.size(); ++i) {
    // Only consecutive recorded iterations participate.
    if (errors[i + 1].first != errors[i].first + 1) continue;
    const double e0 = errors[i].second;
    const double e1 = errors[i + 1].second;
    if (!(e0 > floor_guard * final_err)) continue;
    ++audit.checked;
    const double bound = kappa * e0 * e0 + eps_sq;
    if (e1 * e1 <= bound * (1 + 1e-9)) {
      ++audit.holds;
    } else {
      audit.worst_violation =
          std::max(audit.worst_violation, e1 * e1 - bound);
    }
  }
  return audit;
}

}  // namespace restgrad
