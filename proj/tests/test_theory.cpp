#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "oracles.hpp"
#include "restgrad/ensembles.hpp"
#include "restgrad/theory.hpp"

using namespace restgrad;

TEST_CASE("projected contraction coefficient") {
  // With a trivial subspace the coefficient is 1 - gl/gu.
  RscRsmParams p{0.5, 2.0, 0.01, 0.02};
  const Contraction k0 = contraction_thm1(p, 0.0);
  CHECK(k0.regime == Regime::Ok);
  CHECK(k0.kappa == doctest::Approx(1 - 0.5 / 2.0));

  // Perfect conditioning with no tolerances collapses to zero (and is
  // flagged, since the open interval excludes it).
  RscRsmParams ideal{2.0, 2.0, 0.0, 0.0};
  const Contraction kz = contraction_thm1(ideal, 0.0);
  CHECK(kz.kappa == doctest::Approx(0.0));
  CHECK(kz.regime == Regime::OutOfRegime);

  // Plug-in arithmetic, evaluated independently.
  RscRsmParams q{1.0, 4.0, 1.0 / 256, 1.0 / 256};
  const double psi = 2.0;  // psi^2 = 4
  const Contraction k = contraction_thm1(q, psi);
  const double expected_num = 1 - 1.0 / 4 + 16 * 4 * (2.0 / 256) / 4;
  const double expected_den = 1 - 16 * 4 * (1.0 / 256) / 4;
  CHECK(k.kappa == doctest::Approx(expected_num / expected_den));
  CHECK(expected_num == doctest::Approx(0.875));
  CHECK(expected_den == doctest::Approx(0.9375));

  // Monotonicity: nondecreasing in the tolerances and psi, nonincreasing in
  // the lower curvature.
  auto kappa_at = [](double gl, double tl, double tu, double psi_) {
    return contraction_thm1(RscRsmParams{gl, 4.0, tl, tu}, psi_).kappa;
  };
  const double base = kappa_at(1.0, 1e-3, 1e-3, 2.0);
  CHECK(kappa_at(1.0, 2e-3, 1e-3, 2.0) >= base);
  CHECK(kappa_at(1.0, 1e-3, 2e-3, 2.0) >= base);
  CHECK(kappa_at(1.0, 1e-3, 1e-3, 2.5) >= base);
  CHECK(kappa_at(1.2, 1e-3, 1e-3, 2.0) <= base);
}

TEST_CASE("projected tolerance") {
  RscRsmParams none{1.0, 4.0, 0.0, 0.0};
  CHECK(tolerance_thm1(none, 2.0, 0.5, 0.3, 0.7) == doctest::Approx(0.0));
  RscRsmParams p{1.0, 4.0, 0.01, 0.02};
  CHECK(tolerance_thm1(p, 2.0, 0.0, 0.0, 0.0) == doctest::Approx(0.0));
  // Independent evaluation of the closed form.
  const double eps = tolerance_thm1(p, 2.0, 0.5, 0.3, 0.7);
  const double bracket = 2 * 0.5 + 2.0 * 0.3 + 2 * 0.7;
  CHECK(eps == doctest::Approx(32 * 0.03 * bracket * bracket / 4.0));
}

TEST_CASE("composite contraction machinery") {
  RscRsmParams clean{1.0, 4.0, 0.0, 0.0};
  const CompositeContraction c = contraction_thm2(clean, 3.0);
  CHECK(c.regime == Regime::Ok);
  CHECK(c.gamma_bar_l == doctest::Approx(1.0));
  CHECK(c.xi == doctest::Approx(1.0));
  CHECK(c.beta == doctest::Approx(0.0));
  CHECK(c.kappa == doctest::Approx(1 - 1.0 / 16));

  RscRsmParams equal{2.0, 2.0, 0.0, 0.0};
  CHECK(contraction_thm2(equal, 1.0).kappa == doctest::Approx(0.75));

  // Independent re-evaluation with nonzero tolerances.
  RscRsmParams p{1.0, 4.0, 1e-4, 2e-4};
  const double psi = 3.0, psi2 = 9.0;
  const CompositeContraction k = contraction_thm2(p, psi);
  const double gbar = 1.0 - 64 * 1e-4 * psi2;
  const double xi = 1.0 / (1.0 - 64 * 2e-4 * psi2 / gbar);
  const double beta =
      2 * (gbar / 16 + 128 * 2e-4 * psi2 / gbar) * 1e-4 + 8 * 2e-4 + 2 * 1e-4;
  const double kappa = (1 - gbar / 16 + 64 * psi2 * 2e-4 / gbar) * xi;
  CHECK(k.gamma_bar_l == doctest::Approx(gbar));
  CHECK(k.xi == doctest::Approx(xi));
  CHECK(k.beta == doctest::Approx(beta));
  CHECK(k.kappa == doctest::Approx(kappa));

  // Compound tolerance closed form.
  const double tol = tolerance_thm2(k, psi, 0.2, 0.1);
  const double bracket = 6 * psi * 0.2 + 8 * 0.1;
  CHECK(tol == doctest::Approx(8 * xi * beta * bracket * bracket));

  // Out of regime when the effective curvature is exhausted.
  RscRsmParams bad{0.1, 4.0, 1e-2, 1e-2};
  CHECK(contraction_thm2(bad, 3.0).regime == Regime::OutOfRegime);
}

TEST_CASE("composite iteration and parameter-error bounds") {
  const double t =
      thm2_iteration_bound(0.8, 1e-3, 10.0, 5.0, 0.2);
  CHECK(std::isfinite(t));
  CHECK(t > 0);
  // More demanding tolerances need more iterations.
  CHECK(thm2_iteration_bound(0.8, 1e-5, 10.0, 5.0, 0.2) > t);

  CompositeContraction c;
  c.gamma_bar_l = 0.5;
  const double bound = thm2_param_error_bound(c, 1e-3, 1e-4, 0.2, 3.0, 0.0);
  const double expect = 2 * 1e-3 / 0.5 + 16 * 1e-3 * 1e-4 / (0.5 * 0.04) +
                        4 * 1e-4 * 18 * 18 / 0.5;
  CHECK(bound == doctest::Approx(expect));
}

TEST_CASE("corollary plug-in constants") {
  CorollaryInput in;
  in.d = 100;
  in.n = 5000;
  in.sparsity = 10;
  const TheoryReport md = corollary_constants(CorollaryKind::MatDecomp, in);
  CHECK(md.kappa == doctest::Approx(0.75));
  CHECK(md.regime == Regime::Ok);

  // Identity covariance sparse case: kappa = (1 - 1/4 + chi)/(1 - chi).
  const TheoryReport se = corollary_constants(CorollaryKind::SparseExact, in);
  const double chi = 10 * std::log(100.0) / 5000;
  CHECK(se.chi_n == doctest::Approx(chi));
  CHECK(se.kappa == doctest::Approx((1 - 0.25 + chi) / (1 - chi)));
  CHECK(se.regime == Regime::Ok);

  // Saturated chi flags out of regime.
  CorollaryInput tiny = in;
  tiny.n = 5;
  CHECK(corollary_constants(CorollaryKind::SparseExact, tiny).regime ==
        Regime::OutOfRegime);

  // Matrix completion has no closed-form rate.
  CorollaryInput mc = in;
  mc.n = 100000;
  mc.alpha_spike = 2.0;
  CHECK(corollary_constants(CorollaryKind::MatComp, mc).regime ==
        Regime::EmpiricalOnly);
}

TEST_CASE("geometric rate fitting") {
  // Exact geometric input.
  std::vector<std::pair<int, double>> series;
  for (int t = 0; t <= 40; ++t) series.emplace_back(t, std::pow(0.5, t));
  const RateFit fit = fit_geometric_rate(series);
  CHECK(fit.status == RateStatus::Ok);
  CHECK(fit.kappa_hat == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-9));

  // Constant trace: no geometric phase.
  std::vector<std::pair<int, double>> flat;
  for (int t = 0; t <= 40; ++t) flat.emplace_back(t, 1.0);
  CHECK(fit_geometric_rate(flat).status == RateStatus::NoGeometricPhase);

  // Too few points above the floor.
  std::vector<std::pair<int, double>> shorty;
  for (int t = 0; t <= 5; ++t) shorty.emplace_back(t, std::pow(0.1, t));
  CHECK(fit_geometric_rate(shorty).status == RateStatus::TooFewPoints);
}

TEST_CASE("recursion audit on synthetic series") {
  std::vector<std::pair<int, double>> series;
  double e = 1.0;
  for (int t = 0; t <= 60; ++t) {
    series.emplace_back(t, e);
    e *= std::sqrt(0.5);
  }
  const RecursionAudit good = audit_recursion(series, 0.6, 0.0);
  CHECK(good.fraction_ok() == doctest::Approx(1.0));
  CHECK(good.checked > 0);
  const RecursionAudit bad = audit_recursion(series, 0.4, 0.0);
  CHECK(bad.fraction_ok() == doctest::Approx(0.0));
}

TEST_CASE("curvature probe on exact isometries and null spaces") {
  Rng rng(3);
  const int n = 8, d = 8;
  Eigen::MatrixXd x = std::sqrt(static_cast<double>(n)) *
                      Eigen::MatrixXd::Identity(n, d);
  LossModel iso = LossModel::quadratic(
      ObservationOperator::dense_vector(x), Eigen::VectorXd::Zero(n));
  const RegularizerSpec l1 = RegularizerSpec::l1(d);
  std::vector<DirectionPair> pairs;
  for (int i = 0; i < 200; ++i) {
    Eigen::MatrixXd base = Eigen::MatrixXd::Zero(d, 1);
    pairs.push_back({oracles::random_vector(rng, d), base});
  }
  // Exact isometry: curvature one, no tolerance, no violations.
  const ProbeReport ok =
      rsc_rsm_probe(iso, pairs, l1, RscRsmParams{1.0, 1.0, 0.0, 0.0});
  CHECK(ok.lower_violations == 0);
  CHECK(ok.upper_violations == 0);

  // Undersampled design: a null-space direction defeats any tolerance-free
  // curvature claim.
  Eigen::MatrixXd x2 = oracles::random_matrix(rng, 3, 8);
  LossModel under = LossModel::quadratic(
      ObservationOperator::dense_vector(x2), Eigen::VectorXd::Zero(3));
  Eigen::FullPivLU<Eigen::MatrixXd> lu(x2);
  const Eigen::MatrixXd null_space = lu.kernel();
  std::vector<DirectionPair> null_pairs;
  null_pairs.push_back(
      {null_space.col(0), Eigen::MatrixXd::Zero(8, 1)});
  const ProbeReport viol = rsc_rsm_probe(under, null_pairs, l1,
                                         RscRsmParams{1.0, 2.0, 0.0, 0.0});
  CHECK(viol.lower_violations == 1);
}

TEST_CASE("fitted curvature constants satisfy their own probe") {
  EnsembleSpec spec;
  spec.family = Family::SparseLinear;
  spec.d = 100;
  spec.s = 10;
  spec.n = static_cast<int>(std::ceil(25.0 * 10 * std::log(100.0)));
  spec.seed = 5;
  Instance inst = gen_instance(spec);
  const double psi = subspace_compat(inst.reg, inst.truth.pair);
  const double scaling =
      inst.truth.sigma.zeta * std::log(static_cast<double>(spec.d)) / spec.n;
  std::vector<DirectionPair> pairs = sample_direction_pairs(
      inst.truth.theta_star.data(), inst.truth.pair, Rng(99), 400, 1.0);
  const FittedParams fit = fit_rsc_rsm(inst.model, pairs, inst.reg, scaling,
                                       psi, FitTarget::Thm1);
  CHECK(fit.params.gamma_l <= fit.params.gamma_u);
  CHECK(fit.params.gamma_l > 0);
  const ProbeReport probe =
      rsc_rsm_probe(inst.model, pairs, inst.reg, fit.params);
  CHECK(probe.lower_violations == 0);
  CHECK(probe.upper_violations == 0);
  CHECK(fit.regime == Regime::Ok);
  const Contraction k = contraction_thm1(fit.params, psi);
  CHECK(k.regime == Regime::Ok);

  // The pinned-scaling single-parameter fit also certifies on the samples.
  const FittedParams pinned = fit_rsc_rsm(inst.model, pairs, inst.reg,
                                          scaling, psi,
                                          FitTarget::ScaledTolerance);
  CHECK(pinned.multiplier == 1.0);
  const ProbeReport probe2 =
      rsc_rsm_probe(inst.model, pairs, inst.reg, pinned.params);
  CHECK(probe2.lower_violations == 0);
}

TEST_CASE("cone checks") {
  // At the optimum every margin is nonnegative by construction.
  EnsembleSpec spec;
  spec.family = Family::SparseLinear;
  spec.d = 60;
  spec.s = 5;
  spec.n = 600;
  spec.seed = 13;
  Instance inst = gen_instance(spec);
  SolverConfig cfg;
  cfg.constraint = inst.constraint;
  cfg.gamma_u = inst.gamma_hint;
  cfg.max_iters = 600;
  cfg.stop_tol = 1e-11;
  const ReferenceOptimum ref = reference_optimum(inst.model, cfg);
  SolveResult res = solve(inst.model, cfg, &inst.truth.theta_star);
  res.trace.fill_err_to_opt(ref.point);

  ConeInputs in;
  in.pair = &inst.truth.pair;
  in.theta_star = inst.truth.theta_star;
  in.theta_hat = ref.point;
  const ConeReport cone =
      cone_check(res.trace, inst.reg, in, ConeMode::Thm1Cone);
  CHECK(cone.violations == 0);
  CHECK(cone.min_margin >= -1e-8);

  const ConeReport stat =
      cone_check(res.trace, inst.reg, in, ConeMode::StatCone);
  CHECK(stat.violations == 0);
  // For an exactly sparse truth the statistical cone reduces to
  // ||D*||_1 <= 2 sqrt(s) ||D*||_2.
  const Eigen::MatrixXd dstar = ref.point.data() - inst.truth.theta_star.data();
  const double expect_margin =
      2 * std::sqrt(static_cast<double>(spec.s)) * dstar.norm() -
      dstar.lpNorm<1>();
  CHECK(stat.margins[0] == doctest::Approx(expect_margin).epsilon(1e-9));

  // Degenerate check: a trace sitting at the optimum has slack everywhere.
  IterateTrace at_opt;
  at_opt.rows.push_back(TraceRow{0, 0, 0, 0, 0, 0});
  at_opt.iterates.push_back(ref.point.data());
  CHECK(cone_check(at_opt, inst.reg, in, ConeMode::Thm1Cone).min_margin >=
        0.0);
}
