#include <doctest.h>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>

#include "oracles.hpp"
#include "restgrad/ensembles.hpp"
#include "restgrad/solvers.hpp"

using namespace restgrad;

TEST_CASE("autoregressive design") {
  // omega = 0 gives i.i.d. standard normal rows.
  const int d = 20, n = 4000;
  const Eigen::MatrixXd x = gen_design_ar1(d, n, 0.0, Rng(3));
  const Eigen::MatrixXd cov = x.transpose() * x / n;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      cov - Eigen::MatrixXd::Identity(d, d));
  const double op_norm =
      std::max(std::abs(es.eigenvalues().minCoeff()),
               std::abs(es.eigenvalues().maxCoeff()));
  CHECK(op_norm < 3 * std::sqrt(static_cast<double>(d) / n));

  // Interval endpoints at omega = 0.
  const SigmaSummary s0 = ar1_sigma_summary(0.0);
  CHECK(s0.interval_lo == doctest::Approx(1.0));
  CHECK(s0.interval_hi == doctest::Approx(2.0));
  CHECK(s0.zeta == doctest::Approx(1.0));

  // Eigenvalues of the exact covariance stay inside the stated interval.
  const double omega = 0.5;
  const SigmaSummary s = ar1_sigma_summary(omega);
  const Eigen::MatrixXd sigma = ar1_exact_covariance(50, omega);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> se(sigma);
  CHECK(se.eigenvalues().minCoeff() >= s.interval_lo - 1e-10);
  CHECK(se.eigenvalues().maxCoeff() <= s.interval_hi + 1e-10);
  // The tighter analytic extremes hold as well.
  CHECK(se.eigenvalues().minCoeff() >= s.smin - 1e-10);
  CHECK(se.eigenvalues().maxCoeff() <= s.smax + 1e-10);

  CHECK_THROWS_AS(gen_design_ar1(4, 4, 1.0, Rng(1)), ConfigError);
}

TEST_CASE("sparse truth generation") {
  // Full support.
  const Eigen::VectorXd dense = gen_truth_sparse(8, 8, 0, 0, Rng(5));
  for (int j = 0; j < 8; ++j) CHECK(std::abs(dense(j)) == doctest::Approx(1.0));

  // Exact support size.
  const Eigen::VectorXd sparse = gen_truth_sparse(40, 7, 0, 0, Rng(6));
  int nonzeros = 0;
  for (int j = 0; j < 40; ++j)
    if (sparse(j) != 0.0) ++nonzeros;
  CHECK(nonzeros == 7);

  // q = 1 in two dimensions: magnitudes (2/3, 1/3).
  const Eigen::VectorXd weak = gen_truth_sparse(2, 0, 1.0, 1.0, Rng(7));
  std::vector<double> mags = {std::abs(weak(0)), std::abs(weak(1))};
  std::sort(mags.begin(), mags.end(), std::greater<double>());
  CHECK(mags[0] == doctest::Approx(2.0 / 3));
  CHECK(mags[1] == doctest::Approx(1.0 / 3));

  // Soft-sparse mass sits exactly on the radius.
  const double q = 0.5, Rq = 11.0;
  const Eigen::VectorXd soft = gen_truth_sparse(300, 0, q, Rq, Rng(8));
  double mass = 0;
  for (int j = 0; j < 300; ++j) mass += std::pow(std::abs(soft(j)), q);
  CHECK(mass == doctest::Approx(Rq).epsilon(1e-12));
}

TEST_CASE("instances are deterministic and self-consistent") {
  EnsembleSpec spec;
  spec.family = Family::SparseLinear;
  spec.d = 50;
  spec.s = 5;
  spec.n = 300;
  spec.omega = 0.3;
  spec.seed = 123;
  Instance a = gen_instance(spec);
  Instance b = gen_instance(spec);
  CHECK((a.model.responses() - b.model.responses()).norm() == 0.0);
  CHECK((a.model.op().design() - b.model.op().design()).norm() == 0.0);
  CHECK((a.truth.theta_star.data() - b.truth.theta_star.data()).norm() == 0.0);

  // Radius equals the truth norm.
  CHECK(a.truth.rho ==
        doctest::Approx(a.truth.theta_star.data().lpNorm<1>()).epsilon(1e-12));
  // Recommended penalty weight matches its closed form.
  CHECK(a.truth.lambda_n ==
        doctest::Approx(6 * std::sqrt(spec.nu * std::log(50.0) / spec.n)));

  EnsembleSpec other = spec;
  other.seed = 124;
  Instance c = gen_instance(other);
  CHECK((a.model.responses() - c.model.responses()).norm() > 0.0);
}

TEST_CASE("noise scale matches at large sample sizes") {
  EnsembleSpec spec;
  spec.family = Family::SparseLinear;
  spec.d = 10;
  spec.s = 3;
  spec.n = 20000;
  spec.nu = 0.5;
  spec.seed = 9;
  Instance inst = gen_instance(spec);
  const Eigen::VectorXd w =
      inst.model.responses() -
      inst.model.op().design() * inst.truth.theta_star.data().col(0);
  const double sd = std::sqrt(w.squaredNorm() / w.size());
  CHECK(sd == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("noiseless identifiable case recovers the truth") {
  EnsembleSpec spec;
  spec.family = Family::SparseLinear;
  spec.d = 30;
  spec.s = 4;
  spec.n = 200;
  spec.nu = 0.0;
  spec.seed = 31;
  Instance inst = gen_instance(spec);
  SolverConfig cfg;
  cfg.constraint = inst.constraint;
  cfg.gamma_u = inst.gamma_hint;
  const ReferenceOptimum ref = reference_optimum(inst.model, cfg);
  CHECK((ref.point.data() - inst.truth.theta_star.data()).norm() <= 1e-6);
}

TEST_CASE("logistic instance") {
  EnsembleSpec spec;
  spec.family = Family::LogisticSparse;
  spec.d = 30;
  spec.s = 4;
  spec.n = 400;
  spec.seed = 17;
  Instance inst = gen_instance(spec);
  for (int i = 0; i < spec.n; ++i) {
    const double yi = inst.model.responses()(i);
    CHECK((yi == 0.0 || yi == 1.0));
  }
  // The feasible set keeps the truth inside.
  CHECK(inst.constraint.contains(inst.truth.theta_star.data(), 1e-9));
}

TEST_CASE("matrix compressed sensing instance") {
  EnsembleSpec spec;
  spec.family = Family::MatrixCS;
  spec.d = 12;
  spec.rank = 3;
  spec.n = 200;
  spec.seed = 21;
  Instance inst = gen_instance(spec);
  CHECK(inst.truth.pair.rank() == 3);
  CHECK(inst.truth.rho == doctest::Approx(inst.reg.value_raw(
                              inst.truth.theta_star.data())).epsilon(1e-9));
  // Flat spectrum: all nonzero singular values equal.
  const Svd s = svd_thin(inst.truth.theta_star.data());
  CHECK(s.sigma(0) == doctest::Approx(s.sigma(2)).epsilon(1e-9));
}

TEST_CASE("matrix completion instance") {
  EnsembleSpec spec;
  spec.family = Family::MatComp;
  spec.d = 60;
  spec.rank = 5;
  spec.n = static_cast<int>(std::ceil(25.0 * 5 * 60 * std::log(60.0)));
  spec.seed = 22;
  Instance inst = gen_instance(spec);
  for (auto [a, b] : inst.model.op().entries()) {
    CHECK(a >= 0);
    CHECK(a < 60);
    CHECK(b >= 0);
    CHECK(b < 60);
  }
  CHECK(inst.truth.theta_star.data().lpNorm<Eigen::Infinity>() <=
        inst.truth.alpha_spike / 60 + 1e-12);
  CHECK(inst.truth.box_bound > 0);

  // Explicit spikiness forces a rescale to the requested bound.
  EnsembleSpec tight = spec;
  tight.spikiness = 0.5 * inst.truth.alpha_spike;
  Instance rescaled = gen_instance(tight);
  CHECK(rescaled.truth.theta_star.data().lpNorm<Eigen::Infinity>() <=
        tight.spikiness / 60 + 1e-12);
}

TEST_CASE("matrix decomposition instance") {
  EnsembleSpec spec;
  spec.family = Family::MatDecomp;
  spec.d1 = 20;
  spec.d2 = 24;
  spec.rank = 3;
  spec.s = 5;
  spec.seed = 23;
  spec.n = 1;
  Instance inst = gen_instance(spec);
  const Eigen::MatrixXd stacked = inst.truth.theta_star.data();
  CHECK(stacked.cols() == 48);
  const Eigen::MatrixXd gamma = stacked.rightCols(24);
  int nonzero_cols = 0;
  for (int j = 0; j < 24; ++j) {
    const double nrm = gamma.col(j).norm();
    if (nrm > 0) {
      ++nonzero_cols;
      CHECK(nrm == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  CHECK(nonzero_cols == 5);
  CHECK(inst.truth.rho_gamma == doctest::Approx(5.0));
  // The product constraint accepts the truth.
  CHECK(inst.constraint.contains(stacked, 1e-8));
}

TEST_CASE("spec validation") {
  EnsembleSpec spec;
  spec.family = Family::SparseLinear;
  spec.d = 10;
  spec.s = 11;
  spec.n = 5;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.s = 2;
  spec.omega = 1.0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.omega = 0.0;
  spec.n = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}
