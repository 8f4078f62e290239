#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "restgrad/ensembles.hpp"
#include "restgrad/instance_io.hpp"
#include "restgrad/io.hpp"
#include "restgrad/solvers.hpp"
#include "restgrad/theory.hpp"

namespace restgrad {

struct TheoryToggles {
  bool cone_checks = false;
  bool probe = false;
  bool recursion_audit = false;
};

/// One experiment: an ensemble recipe, solver settings, replication count,
/// and the theory checks to run on each replication.  Replication k uses
/// seed = base seed XOR k.
struct ExperimentSpec {
  std::string name = "experiment";
  EnsembleSpec ensemble;
  Method method = Method::Projected;
  double gamma_override = -1;   // < 0: use the instance hint
  double lambda_override = -1;  // < 0: use the recommended weight
  int max_iters = 2000;
  double stop_tol = 1e-10;
  int record_every = 1;
  double floor_guard = 3.0;
  TheoryToggles theory;
  int reps = 1;
  std::string out_dir;  // empty: keep results in memory only
  bool gnuplot = false;
  bool save_instances = false;   // persist generated instances alongside
  std::string instance_path;     // load a persisted instance instead

  void validate() const {
    if (reps < 1) throw ConfigError("replication count must be >= 1");
    if (!instance_path.empty()) {
      if (reps != 1)
        throw ConfigError("a persisted instance runs a single replication");
      return;
    }
    ensemble.validate();
  }
};

struct RepResult {
  std::uint64_t seed = 0;
  SolveStatus status = SolveStatus::MaxIterations;
  int iterations = 0;
  double lambda_n = 0;
  double gamma_used = 0;
  double rho = 0;
  double reg_over_radius = 0;
  double stat_err = 0;  // ||theta_hat - theta*||
  double objective_at_opt = 0;
  RateFit fit;
  KktReport kkt;
  IterateTrace trace;
  ParameterPoint theta_hat;
  ParameterPoint theta_star;
  SubspacePair pair;
  RegularizerSpec reg;
  SigmaSummary sigma;
  double box_bound = 0, alpha_spike = 0, rho_gamma = 0;
  int sparsity = 0;
  // Theory outputs (when toggled)
  std::optional<ConeReport> cone_thm1, cone_icb, cone_stat;
  std::optional<FittedParams> fitted;
  std::optional<ProbeReport> probe;
  std::optional<Contraction> predicted;
  double predicted_eps_sq = std::numeric_limits<double>::quiet_NaN();
  std::optional<RecursionAudit> audit;
  TheoryReport corollary;
};

struct ExperimentResult {
  std::vector<RepResult> reps;
  std::vector<std::pair<int, double>> mean_curve;  // (t, mean log err)
  RateFit curve_fit;  // fitted on the averaged curve
  nlohmann::json summary;
};

inline int worker_cap() {
  if (const char* env = std::getenv("RESTRICTED_GRADIENT_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

inline double tau_scaling_for(const EnsembleSpec& e,
                              const SigmaSummary& sigma) {
  switch (e.family) {
    case Family::SparseLinear:
    case Family::LogisticSparse:
      return sigma.zeta * std::log(static_cast<double>(e.d)) / e.n;
    case Family::MatrixCS:
      return static_cast<double>(e.d) / e.n;
    case Family::MatComp:
      return static_cast<double>(e.d) *
             std::log(static_cast<double>(e.d)) / e.n;
    case Family::MatDecomp:
      return 1.0 / (e.d1 * e.d2);
  }
  return 1.0 / e.n;
}

inline SolverConfig make_solver_config(const ExperimentSpec& exp,
                                       const Instance& inst) {
  SolverConfig cfg;
  cfg.method = exp.method;
  cfg.max_iters = exp.max_iters;
  cfg.stop_tol = exp.stop_tol;
  cfg.record_every = exp.record_every;
  cfg.keep_iterates = true;
  if (exp.gamma_override > 0) {
    cfg.gamma_u = exp.gamma_override;
  } else if (inst.gamma_hint > 0) {
    cfg.gamma_u = inst.gamma_hint;
  } else {
    cfg.gamma_u = 0;
    cfg.gamma_init = inst.gamma_init_hint;
  }
  if (exp.method == Method::Projected) {
    cfg.constraint = inst.constraint;
  } else {
    cfg.reg = inst.reg;
    cfg.rho_bar = inst.truth.rho;
    cfg.lambda_n = exp.lambda_override >= 0 ? exp.lambda_override
                                            : inst.truth.lambda_n;
  }
  return cfg;
}

/// Runs one replication end to end: generate, solve to high precision for
/// the reference, solve with the configured settings, then the requested
/// theory checks.  The generated instance is dropped before returning.
inline CorollaryKind corollary_kind_for(const ExperimentSpec& exp) {
  switch (exp.ensemble.family) {
    case Family::SparseLinear:
    case Family::LogisticSparse:
      if (exp.method == Method::Composite) return CorollaryKind::LassoLag;
      return exp.ensemble.q > 0 ? CorollaryKind::SparseWeak
                                : CorollaryKind::SparseExact;
    case Family::MatrixCS:
      return CorollaryKind::MatrixCS;
    case Family::MatComp:
      return CorollaryKind::MatComp;
    case Family::MatDecomp:
      return CorollaryKind::MatDecomp;
  }
  return CorollaryKind::SparseExact;
}

inline RepResult run_replication(const ExperimentSpec& exp, int rep_index) {
  EnsembleSpec spec = exp.ensemble;
  spec.seed = exp.ensemble.seed ^ static_cast<std::uint64_t>(rep_index);
  Instance inst = exp.instance_path.empty() ? gen_instance(spec)
                                            : load_instance(exp.instance_path);
  if (!exp.out_dir.empty() && exp.save_instances) {
    std::filesystem::create_directories(exp.out_dir);
    save_instance(std::filesystem::path(exp.out_dir) /
                      (exp.name + "_rep" + std::to_string(rep_index)),
                  inst, spec);
  }
  const SolverConfig cfg = make_solver_config(exp, inst);

  RepResult rep;
  rep.seed = spec.seed;
  rep.theta_star = inst.truth.theta_star;
  rep.pair = inst.truth.pair;
  rep.reg = inst.reg;
  rep.sigma = inst.truth.sigma;
  rep.rho = inst.truth.rho;
  rep.rho_gamma = inst.truth.rho_gamma;
  rep.box_bound = inst.truth.box_bound;
  rep.alpha_spike = inst.truth.alpha_spike;
  rep.sparsity = inst.truth.sparsity;
  rep.lambda_n = cfg.lambda_n;

  // The measured run is a deterministic prefix of the high-precision
  // reference run (same solver, same start), so one combined solve covers
  // both; the trace is capped at the measured iteration budget.  Runs that
  // fail to converge (undersampled fixed-step instances oscillate) fall
  // back to a doubling-step reference plus a separate measured run.
  SolverConfig combined = cfg;
  combined.stop_tol = 1e-12;
  combined.max_iters = std::min(std::max(2 * cfg.max_iters, 20000), 100000);
  combined.trace_limit = cfg.max_iters;
  SolveResult res = solve(inst.model, combined, &inst.truth.theta_star);
  if (res.status == SolveStatus::Converged) {
    rep.theta_hat = res.final_point;
    rep.kkt = kkt_residual(inst.model, cfg, res.final_point);
    rep.kkt.reached_tol = true;
    rep.status = res.iterations <= cfg.max_iters ? SolveStatus::Converged
                                                 : SolveStatus::MaxIterations;
    rep.iterations = std::min(res.iterations, cfg.max_iters);
  } else {
    const ReferenceOptimum ref = reference_optimum(inst.model, cfg);
    rep.theta_hat = ref.point;
    rep.kkt = ref.kkt;
    res = solve(inst.model, cfg, &inst.truth.theta_star);
    rep.status = res.status;
    rep.iterations = res.iterations;
  }
  rep.objective_at_opt = solve_objective(inst.model, cfg, rep.theta_hat);
  rep.stat_err = (rep.theta_hat.data() - inst.truth.theta_star.data()).norm();
  res.trace.fill_err_to_opt(rep.theta_hat);
  rep.gamma_used = res.final_gamma;
  rep.reg_over_radius = res.reg_over_radius;
  rep.fit = fit_geometric_rate(res.trace.error_series(), exp.floor_guard);

  const bool matdecomp = spec.family == Family::MatDecomp;
  if (exp.theory.cone_checks && !matdecomp) {
    ConeInputs in;
    in.pair = &rep.pair;
    in.theta_star = rep.theta_star;
    in.theta_hat = rep.theta_hat;
    in.lambda_n = cfg.lambda_n;
    in.rho_bar = std::isfinite(cfg.rho_bar) ? cfg.rho_bar : rep.rho;
    in.objective_at_opt = rep.objective_at_opt;
    rep.cone_stat = cone_check(res.trace, rep.reg, in, ConeMode::StatCone);
    if (exp.method == Method::Projected)
      rep.cone_thm1 = cone_check(res.trace, rep.reg, in, ConeMode::Thm1Cone);
    else
      rep.cone_icb = cone_check(res.trace, rep.reg, in, ConeMode::ICB);
  }
  if ((exp.theory.probe || exp.theory.recursion_audit) && !matdecomp) {
    const double psi = subspace_compat(rep.reg, rep.pair);
    const double scaling = tau_scaling_for(spec, rep.sigma);
    std::vector<DirectionPair> pairs = sample_direction_pairs(
        rep.theta_hat.data(), rep.pair, Rng(spec.seed).stream(99), 240,
        std::max(rep.stat_err, 1e-3));
    add_trajectory_pairs(pairs, res.trace, rep.theta_hat.data());
    rep.fitted = fit_rsc_rsm(inst.model, pairs, rep.reg, scaling, psi,
                             exp.method == Method::Projected ? FitTarget::Thm1
                                                             : FitTarget::Thm2,
                             cfg.lambda_n, cfg.rho_bar);
    rep.probe = rsc_rsm_probe(inst.model, pairs, rep.reg, rep.fitted->params);
    if (exp.method == Method::Projected) {
      rep.predicted = contraction_thm1(rep.fitted->params, psi);
      const Eigen::MatrixXd dstar =
          rep.theta_hat.data() - rep.theta_star.data();
      const Eigen::MatrixXd perp =
          rep.pair.project_raw(rep.theta_star.data(), Subspace::ModelPerp);
      rep.predicted_eps_sq = tolerance_thm1(
          rep.fitted->params, psi, rep.reg.value_raw(perp), dstar.norm(),
          rep.reg.value_raw(dstar));
      if (exp.theory.recursion_audit && rep.predicted->regime == Regime::Ok)
        rep.audit = audit_recursion(res.trace.error_series(),
                                    rep.predicted->kappa, rep.predicted_eps_sq,
                                    exp.floor_guard);
    }
  }
  // Plug-in constants for the instance's statistical family.
  {
    CorollaryInput ci;
    ci.sigma_min = rep.sigma.smin;
    ci.sigma_max = rep.sigma.smax;
    ci.zeta = rep.sigma.zeta;
    ci.q = spec.q;
    ci.d = spec.family == Family::MatDecomp ? spec.d2 : spec.d;
    ci.n = spec.n;
    ci.alpha_spike = rep.alpha_spike;
    ci.stat_err_sq = rep.stat_err * rep.stat_err;
    switch (spec.family) {
      case Family::SparseLinear:
      case Family::LogisticSparse:
        ci.sparsity = spec.q > 0 ? spec.Rq : static_cast<double>(spec.s);
        break;
      case Family::MatrixCS:
      case Family::MatComp:
        ci.sparsity = spec.q > 0 ? spec.Rq : static_cast<double>(spec.rank);
        break;
      case Family::MatDecomp: {
        ci.sparsity = static_cast<double>(spec.s);
        const int cols = static_cast<int>(rep.theta_star.cols()) / 2;
        ci.stat_err_gamma_sq = (rep.theta_hat.data().rightCols(cols) -
                                rep.theta_star.data().rightCols(cols))
                                   .squaredNorm();
        break;
      }
    }
    rep.corollary = corollary_constants(corollary_kind_for(exp), ci);
  }

  const bool wants_iterates =
      exp.theory.cone_checks || exp.theory.probe || exp.theory.recursion_audit;
  if (!wants_iterates) res.trace.iterates.clear();
  rep.trace = std::move(res.trace);
  return rep;
}

/// Pointwise mean of log errors over the common prefix of the replications.
inline std::vector<std::pair<int, double>> mean_log_curve(
    const std::vector<RepResult>& reps) {
  std::vector<std::pair<int, double>> curve;
  if (reps.empty()) return curve;
  std::size_t len = reps[0].trace.rows.size();
  for (const auto& r : reps) len = std::min(len, r.trace.rows.size());
  for (std::size_t i = 0; i < len; ++i) {
    double sum = 0;
    bool ok = true;
    for (const auto& r : reps) {
      const double e = r.trace.rows[i].err_to_opt;
      if (!(e > 0)) {
        ok = false;
        break;
      }
      sum += std::log(e);
    }
    if (!ok) break;
    curve.emplace_back(reps[0].trace.rows[i].t,
                       sum / static_cast<double>(reps.size()));
  }
  return curve;
}

/// Rate fit of the averaged curve (errors re-exponentiated so the fitter's
/// conventions apply unchanged).
inline RateFit fit_mean_curve(const std::vector<std::pair<int, double>>& curve,
                              double floor_guard = 3.0) {
  std::vector<std::pair<int, double>> errs;
  errs.reserve(curve.size());
  for (auto [t, lg] : curve) errs.emplace_back(t, std::exp(lg));
  return fit_geometric_rate(errs, floor_guard);
}

inline nlohmann::json cone_to_json(const ConeReport& c) {
  return {{"min_margin", c.min_margin},
          {"violations", c.violations},
          {"checked", static_cast<int>(c.margins.size())}};
}

inline nlohmann::json rep_theory_json(const RepResult& rep) {
  nlohmann::json j;
  j["stat_err"] = rep.stat_err;
  j["rate_fit"] = to_json(rep.fit);
  j["corollary"] = to_json(rep.corollary);
  j["kkt_sampled_violation"] = rep.kkt.sampled_violation;
  if (rep.cone_thm1) j["cone_constrained"] = cone_to_json(*rep.cone_thm1);
  if (rep.cone_icb) j["cone_iterated"] = cone_to_json(*rep.cone_icb);
  if (rep.cone_stat) j["cone_statistical"] = cone_to_json(*rep.cone_stat);
  if (rep.fitted) {
    j["fitted_params"] = to_json(rep.fitted->params);
    j["fitted_multiplier"] = rep.fitted->multiplier;
  }
  if (rep.probe) j["probe"] = to_json(*rep.probe);
  if (rep.predicted) {
    j["predicted_kappa"] = rep.predicted->kappa;
    j["predicted_regime"] = regime_name(rep.predicted->regime);
    j["predicted_eps_sq"] = rep.predicted_eps_sq;
  }
  if (rep.audit) {
    j["audit_fraction_ok"] = rep.audit->fraction_ok();
    j["audit_checked"] = rep.audit->checked;
    j["audit_worst_violation"] = rep.audit->worst_violation;
  }
  return j;
}

/// Runs all replications (worker pool capped by RESTRICTED_GRADIENT_THREADS),
/// aggregates the averaged log-error curve and its rate fit, and writes the
/// artifacts when an output directory is set: per-replication trace CSV and
/// theory JSON, the averaged curve CSV, a fitted-rate table, and a summary
/// JSON whose numbers all trace back to those files.
inline ExperimentResult run_experiment(const ExperimentSpec& exp) {
  exp.validate();
  ExperimentResult result;
  result.reps.resize(exp.reps);

  const int workers = std::min(worker_cap(), exp.reps);
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  auto work = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= exp.reps) return;
      result.reps[i] = run_replication(exp, i);
    }
  };
  if (workers <= 1) {
    work();
  } else {
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  result.mean_curve = mean_log_curve(result.reps);
  result.curve_fit = fit_mean_curve(result.mean_curve, exp.floor_guard);

  nlohmann::json summary;
  summary["schema_version"] = 1;
  summary["name"] = exp.name;
  summary["ensemble"] = to_json(exp.ensemble);
  summary["solver"] = {
      {"method", exp.method == Method::Projected ? "projected" : "composite"},
      {"gamma_override", exp.gamma_override},
      {"lambda_override", exp.lambda_override},
      {"max_iters", exp.max_iters},
      {"stop_tol", exp.stop_tol},
      {"record_every", exp.record_every},
      {"floor_guard", exp.floor_guard}};
  summary["reps"] = exp.reps;
  summary["out_dir"] = exp.out_dir;
  if (!exp.instance_path.empty()) summary["instance"] = exp.instance_path;
  summary["curve_fit"] = to_json(result.curve_fit);
  nlohmann::json per_rep = nlohmann::json::array();
  for (int i = 0; i < exp.reps; ++i) {
    const RepResult& rep = result.reps[i];
    nlohmann::json r;
    r["rep"] = i;
    r["seed"] = rep.seed;
    r["status"] =
        rep.status == SolveStatus::Converged ? "converged" : "max_iterations";
    r["iterations"] = rep.iterations;
    r["kappa_hat"] = rep.fit.kappa_hat;
    r["r_squared"] = rep.fit.r_squared;
    r["floor"] = rep.fit.floor;
    r["stat_err"] = rep.stat_err;
    r["lambda_n"] = rep.lambda_n;
    r["gamma"] = rep.gamma_used;
    r["rho"] = rep.rho;
    r["reg_over_radius"] = rep.reg_over_radius;
    r["trace_file"] = exp.name + "_rep" + std::to_string(i) + ".csv";
    r["theory_file"] = exp.name + "_rep" + std::to_string(i) + "_theory.json";
    per_rep.push_back(r);
  }
  summary["per_rep"] = per_rep;
  summary["curve_file"] = exp.name + "_curve.csv";
  result.summary = summary;

  if (!exp.out_dir.empty()) {
    namespace fs = std::filesystem;
    const fs::path dir(exp.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec && !fs::is_directory(dir))
      throw IoError("cannot create output directory: " + dir.string());
    for (int i = 0; i < exp.reps; ++i) {
      write_trace_csv(dir / (exp.name + "_rep" + std::to_string(i) + ".csv"),
                      result.reps[i].trace);
      write_text_file(
          dir / (exp.name + "_rep" + std::to_string(i) + "_theory.json"),
          rep_theory_json(result.reps[i]).dump(2) + "\n");
    }
    write_curve_csv(dir / (exp.name + "_curve.csv"), result.mean_curve);
    write_text_file(dir / (exp.name + "_summary.json"),
                    summary.dump(2) + "\n");
    if (exp.gnuplot)
      write_text_file(dir / (exp.name + ".gp"),
                      gnuplot_script(exp.name + "_curve.csv", exp.name));
  }
  return result;
}

}  // namespace restgrad
