#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "restgrad/losses.hpp"
#include "restgrad/parameter.hpp"
#include "restgrad/projections.hpp"
#include "restgrad/regularizers.hpp"
#include "restgrad/rng.hpp"

namespace restgrad {

enum class Method { Projected, Composite };

enum class SolveStatus { Converged, MaxIterations };

/// Algorithm parameters for one solve.  Projected mode minimizes the loss
/// over `constraint`; composite mode minimizes loss + lambda_n * R over the
/// R-ball of radius rho_bar.  A fixed step curvature gamma_u wins over the
/// doubling search when both are set.
struct SolverConfig {
  Method method = Method::Projected;
  double gamma_u = 0;      // fixed curvature; <= 0 enables doubling
  double gamma_init = 1;   // doubling start
  double lambda_n = 0;     // composite penalty weight
  ConstraintSet constraint;               // projected mode
  RegularizerSpec reg;                    // composite mode
  double rho_bar = std::numeric_limits<double>::infinity();
  int max_iters = 10000;
  double stop_tol = 1e-10;  // on iterate change, l2
  int record_every = 1;
  int trace_limit = std::numeric_limits<int>::max();  // record rows t <= limit
  bool keep_iterates = true;
  std::optional<ParameterPoint> theta0;  // default: zero (feasible for balls)

  bool auto_step() const { return gamma_u <= 0; }
};

struct TraceRow {
  int t = 0;
  double objective = 0;
  double err_to_opt = std::numeric_limits<double>::quiet_NaN();
  double err_to_truth = std::numeric_limits<double>::quiet_NaN();
  double reg_value = std::numeric_limits<double>::quiet_NaN();
  double step = 0;
};

/// Per-iteration record of a solve.  Recorded iterates are retained (when
/// enabled) so distances to a reference optimum can be filled in after the
/// reference is known.
struct IterateTrace {
  std::vector<TraceRow> rows;
  std::vector<Eigen::MatrixXd> iterates;

  void fill_err_to_opt(const ParameterPoint& ref) {
    if (iterates.size() != rows.size()) return;
    for (std::size_t i = 0; i < rows.size(); ++i)
      rows[i].err_to_opt = (iterates[i] - ref.data()).norm();
  }

  std::vector<std::pair<int, double>> error_series() const {
    std::vector<std::pair<int, double>> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.emplace_back(r.t, r.err_to_opt);
    return out;
  }
};

struct SolveResult {
  ParameterPoint final_point;
  SolveStatus status = SolveStatus::MaxIterations;
  int iterations = 0;
  double final_gamma = 0;
  IterateTrace trace;
  double reg_over_radius = std::numeric_limits<double>::quiet_NaN();
};

/// One projected-gradient update: project(theta - grad/gamma_u).
inline ParameterPoint pgd_step(const LossModel& model,
                               const ParameterPoint& theta, double gamma_u,
                               const ConstraintSet& constraint) {
  if (gamma_u <= 0) throw ConfigError("step curvature must be positive");
  const Eigen::MatrixXd g = model.gradient(theta.data());
  const Eigen::MatrixXd stepped = theta.data() - g / gamma_u;
  const Eigen::MatrixXd projected = constraint.project(stepped);
  return theta.is_vector() ? ParameterPoint::vector(projected.col(0))
                           : ParameterPoint::matrix(projected);
}

/// One composite update: the prox step on theta - grad/gamma_u with shrink
/// lambda_n/gamma_u, capped to the R-ball of radius rho_bar.
inline ParameterPoint composite_step(const LossModel& model,
                                     const ParameterPoint& theta,
                                     double gamma_u, double lambda_n,
                                     const RegularizerSpec& spec,
                                     double rho_bar) {
  if (gamma_u <= 0) throw ConfigError("step curvature must be positive");
  if (lambda_n < 0) throw ConfigError("penalty weight must be >= 0");
  const Eigen::MatrixXd g = model.gradient(theta.data());
  const Eigen::MatrixXd stepped = theta.data() - g / gamma_u;
  const Eigen::MatrixXd out =
      composite_prox(stepped, lambda_n / gamma_u, spec, rho_bar);
  return theta.is_vector() ? ParameterPoint::vector(out.col(0))
                           : ParameterPoint::matrix(out);
}

namespace detail {

inline ParameterPoint take_step(const LossModel& model,
                                const ParameterPoint& theta, double gamma,
                                const SolverConfig& cfg) {
  return cfg.method == Method::Projected
             ? pgd_step(model, theta, gamma, cfg.constraint)
             : composite_step(model, theta, gamma, cfg.lambda_n, cfg.reg,
                              cfg.rho_bar);
}

// The step map applied to a precomputed gradient.
inline Eigen::MatrixXd step_from_gradient(const Eigen::MatrixXd& theta,
                                          const Eigen::MatrixXd& grad,
                                          double gamma,
                                          const SolverConfig& cfg) {
  const Eigen::MatrixXd stepped = theta - grad / gamma;
  return cfg.method == Method::Projected
             ? cfg.constraint.project(stepped)
             : composite_prox(stepped, cfg.lambda_n / gamma, cfg.reg,
                              cfg.rho_bar);
}

inline std::pair<double, Eigen::MatrixXd> doubling_search(
    const LossModel& model, const Eigen::MatrixXd& theta, double loss_at,
    const Eigen::MatrixXd& grad, double gamma, const SolverConfig& cfg) {
  if (gamma <= 0) throw ConfigError("initial curvature must be positive");
  const double ceiling = gamma * std::pow(2.0, 40);
  for (;;) {
    Eigen::MatrixXd cand = step_from_gradient(theta, grad, gamma, cfg);
    const Eigen::MatrixXd delta = cand - theta;
    const double quad = loss_at + (grad.array() * delta.array()).sum() +
                        0.5 * gamma * delta.squaredNorm();
    const double slack = 1e-12 * (std::abs(loss_at) + 1.0);
    if (model.value(cand) <= quad + slack) return {gamma, std::move(cand)};
    gamma *= 2;
    if (gamma > ceiling)
      throw NumericError("step-size doubling exceeded its ceiling");
  }
}

}  // namespace detail

/// Doubling search for the step curvature: starting from `gamma`, doubles
/// until the local smoothness inequality
///   L(candidate) <= L(theta) + <grad, candidate - theta>
///                   + gamma/2 ||candidate - theta||^2
/// holds for the candidate recomputed at the current gamma.  Returns the
/// accepted gamma and the accepted candidate.
inline std::pair<double, ParameterPoint> auto_stepsize(
    const LossModel& model, const ParameterPoint& theta, double gamma,
    const SolverConfig& cfg) {
  const LossModel::Evaluation eval = model.value_and_gradient(theta.data());
  auto [accepted, cand] = detail::doubling_search(model, theta.data(),
                                                  eval.value, eval.gradient,
                                                  gamma, cfg);
  return {accepted, theta.is_vector() ? ParameterPoint::vector(cand.col(0))
                                      : ParameterPoint::matrix(cand)};
}

inline double solve_objective(const LossModel& model, const SolverConfig& cfg,
                              const ParameterPoint& theta) {
  double obj = model.value(theta.data());
  if (cfg.method == Method::Composite)
    obj += cfg.lambda_n * cfg.reg.value_raw(theta.data());
  return obj;
}

namespace detail {

inline double trace_reg_value(const SolverConfig& cfg,
                              const Eigen::MatrixXd& theta) {
  if (cfg.method == Method::Composite) return cfg.reg.value_raw(theta);
  const ConstraintSet* ball = cfg.constraint.find_reg_ball();
  if (ball) return ball->reg().value_raw(theta);
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

/// Runs the configured first-order method from theta0 (projected onto the
/// feasible set if needed) until the iterate change drops below stop_tol or
/// max_iters is reached.  Deterministic given (model, config, theta0).
/// Non-convergence is a reported status, not an error: undersampled
/// instances with a fixed step oscillate by design.
inline SolveResult solve(const LossModel& model, const SolverConfig& cfg,
                         const ParameterPoint* truth = nullptr) {
  if (cfg.max_iters < 1) throw ConfigError("max_iters must be >= 1");
  if (cfg.stop_tol <= 0) throw ConfigError("stop_tol must be positive");
  if (cfg.method == Method::Composite && cfg.lambda_n < 0)
    throw ConfigError("penalty weight must be >= 0");

  const bool vec = model.op().vector_param();
  ParameterPoint theta =
      cfg.theta0.has_value()
          ? *cfg.theta0
          : (vec ? ParameterPoint::vector(
                       Eigen::VectorXd::Zero(model.op().param_rows()))
                 : ParameterPoint::matrix(Eigen::MatrixXd::Zero(
                       model.op().param_rows(), model.op().param_cols())));
  // Feasibility of the start.
  if (cfg.method == Method::Projected)
    theta = cfg.constraint.project(theta);
  else if (std::isfinite(cfg.rho_bar) &&
           cfg.reg.value_raw(theta.data()) > cfg.rho_bar)
    theta = ConstraintSet::reg_ball(cfg.reg, cfg.rho_bar).project(theta);

  SolveResult result;
  double gamma = cfg.auto_step() ? cfg.gamma_init : cfg.gamma_u;

  // One observation-map pass per iterate serves both the objective record
  // and the gradient step.
  LossModel::Evaluation eval = model.value_and_gradient(theta.data());

  auto record = [&](int t, double step_used) {
    if (t > cfg.trace_limit) return;
    TraceRow row;
    row.t = t;
    row.objective = eval.value;
    if (cfg.method == Method::Composite)
      row.objective += cfg.lambda_n * cfg.reg.value_raw(theta.data());
    row.step = step_used;
    row.reg_value = detail::trace_reg_value(cfg, theta.data());
    if (truth) row.err_to_truth = (theta.data() - truth->data()).norm();
    result.trace.rows.push_back(row);
    if (cfg.keep_iterates) result.trace.iterates.push_back(theta.data());
  };

  record(0, gamma);
  int t = 0;
  for (; t < cfg.max_iters; ++t) {
    Eigen::MatrixXd next;
    if (cfg.auto_step()) {
      auto [accepted, cand] = detail::doubling_search(
          model, theta.data(), eval.value, eval.gradient, gamma, cfg);
      gamma = accepted;  // curvature estimate persists across iterations
      next = std::move(cand);
    } else {
      next = detail::step_from_gradient(theta.data(), eval.gradient, gamma,
                                        cfg);
    }
    const double change = (next - theta.data()).norm();
    theta = vec ? ParameterPoint::vector(next.col(0))
                : ParameterPoint::matrix(next);
    eval = model.value_and_gradient(theta.data());
    const int done = t + 1;
    if (done % cfg.record_every == 0 || change <= cfg.stop_tol ||
        done == cfg.max_iters)
      record(done, gamma);
    if (change <= cfg.stop_tol) {
      result.status = SolveStatus::Converged;
      result.iterations = done;
      break;
    }
    result.iterations = done;
  }
  result.final_point = theta;
  result.final_gamma = gamma;
  const ConstraintSet* ball = cfg.method == Method::Projected
                                  ? cfg.constraint.find_reg_ball()
                                  : nullptr;
  if (ball)
    result.reg_over_radius =
        ball->reg().value_raw(theta.data()) / ball->radius();
  else if (cfg.method == Method::Composite && std::isfinite(cfg.rho_bar))
    result.reg_over_radius = cfg.reg.value_raw(theta.data()) / cfg.rho_bar;
  return result;
}

struct KktReport {
  double sampled_violation = 0;  // worst variational-inequality violation
  double exact_violation =
      std::numeric_limits<double>::quiet_NaN();  // reg-ball case only
  bool reached_tol = false;
};

/// Variational-inequality residual of a candidate optimum over sampled
/// feasible directions; for a plain regularizer ball the exact residual
/// rho * R*(-grad) + <grad, theta> is reported as well.
inline KktReport kkt_residual(const LossModel& model, const SolverConfig& cfg,
                              const ParameterPoint& theta, int samples = 256,
                              std::uint64_t seed = 0x4b4b54) {
  KktReport report;
  const Eigen::MatrixXd grad = model.gradient(theta.data());
  Rng rng(seed);
  double worst = 0;
  const double scale = std::max(1.0, theta.norm());
  for (int i = 0; i < samples; ++i) {
    Eigen::MatrixXd dir(theta.rows(), theta.cols());
    for (Eigen::Index r = 0; r < dir.rows(); ++r)
      for (Eigen::Index c = 0; c < dir.cols(); ++c) dir(r, c) = rng.gaussian();
    Eigen::MatrixXd z = theta.data() + scale * dir / dir.norm();
    z = cfg.method == Method::Projected
            ? cfg.constraint.project(z)
            : (std::isfinite(cfg.rho_bar)
                   ? ConstraintSet::reg_ball(cfg.reg, cfg.rho_bar).project(z)
                   : z);
    // Optimality demands <grad phi, z - theta> >= 0 for all feasible z; for
    // the composite objective the regularizer difference joins the gradient.
    double descent = (grad.array() * (z - theta.data()).array()).sum();
    if (cfg.method == Method::Composite)
      descent += cfg.lambda_n *
                 (cfg.reg.value_raw(z) - cfg.reg.value_raw(theta.data()));
    worst = std::min(worst, descent);
  }
  report.sampled_violation = -worst;
  if (cfg.method == Method::Projected &&
      cfg.constraint.kind() == ConstraintSet::Kind::RegBall) {
    const auto& ball = cfg.constraint;
    report.exact_violation =
        ball.radius() * ball.reg().dual_value_raw(-grad) +
        (grad.array() * theta.data().array()).sum();
  }
  return report;
}

struct ReferenceOptimum {
  ParameterPoint point;
  KktReport kkt;
  SolveStatus status = SolveStatus::MaxIterations;
  int iterations = 0;
};

/// High-precision reference solve used to measure optimization error:
/// same problem, zero start, iterate-change tolerance 1e-12, at most 1e5
/// iterations, doubling step search always enabled so a misconfigured fixed
/// step cannot leave the reference oscillating.  Deterministic.
inline ReferenceOptimum reference_optimum(const LossModel& model,
                                          const SolverConfig& cfg) {
  SolverConfig ref_cfg = cfg;
  ref_cfg.stop_tol = 1e-12;
  ref_cfg.max_iters = 100000;
  ref_cfg.record_every = 1 << 30;
  ref_cfg.keep_iterates = false;
  ref_cfg.theta0.reset();
  ref_cfg.gamma_u = 0;  // doubling
  if (cfg.gamma_u > 0) ref_cfg.gamma_init = cfg.gamma_u;
  const SolveResult res = solve(model, ref_cfg);
  ReferenceOptimum out{res.final_point,
                       kkt_residual(model, ref_cfg, res.final_point),
                       res.status, res.iterations};
  out.kkt.reached_tol = res.status == SolveStatus::Converged;
  return out;
}

}  // namespace restgrad
