// Command-line experiment harness: generates seeded random instances, runs
// the projected / composite gradient solvers, applies the convergence-theory
// checks, and writes trace CSVs plus summary JSON.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "restgrad/experiment.hpp"
#include "restgrad/io.hpp"

namespace {

using namespace restgrad;

struct CommonOpts {
  int d = 200;
  int d2 = 0;
  int s = 0;
  int rank = 5;
  double q = 0;
  double Rq = 0;
  double alpha = 25;
  double omega = 0;
  double nu = 0.5;
  double spikiness = 0;
  int n = 0;
  std::uint64_t seed = 1;
  int reps = 1;
  std::string out;
  int max_iters = 2000;
  double stop_tol = 1e-10;
  int record_every = 1;
  double gamma = -1;
  double lambda = -1;
  double floor_guard = 3.0;
  bool gnuplot = false;
  bool cone_checks = false;
  bool probe = false;
  bool audit = false;
  bool save_instance = false;
  std::string instance;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--d", o.d, "ambient dimension");
  cmd->add_option("--d2", o.d2, "second dimension (decomposition)");
  cmd->add_option("--s", o.s, "sparsity (default ceil(sqrt(d)))");
  cmd->add_option("--rank", o.rank, "matrix rank");
  cmd->add_option("--q", o.q, "soft-sparsity exponent in [0,1]");
  cmd->add_option("--Rq", o.Rq, "soft-sparsity radius");
  cmd->add_option("--alpha", o.alpha, "sample-size order parameter");
  cmd->add_option("--omega", o.omega, "design autocorrelation in [0,1)");
  cmd->add_option("--nu", o.nu, "noise standard deviation");
  cmd->add_option("--spikiness", o.spikiness,
                  "spikiness bound scale (0 derives it from the truth)");
  cmd->add_option("--n", o.n, "sample size (overrides --alpha)");
  cmd->add_option("--seed", o.seed, "base seed");
  cmd->add_option("--reps", o.reps, "replications (derived seeds)");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--max-iters", o.max_iters, "iteration cap");
  cmd->add_option("--stop-tol", o.stop_tol, "iterate-change stopping tolerance");
  cmd->add_option("--record-every", o.record_every, "trace recording stride");
  cmd->add_option("--gamma", o.gamma, "fixed step curvature (overrides hint)");
  cmd->add_option("--lambda", o.lambda, "penalty weight (composite)");
  cmd->add_option("--floor-guard", o.floor_guard, "rate-fit floor guard");
  cmd->add_flag("--gnuplot-script", o.gnuplot, "also write a gnuplot script");
  cmd->add_flag("--cone-checks", o.cone_checks, "run cone-inequality checks");
  cmd->add_flag("--probe-rsc", o.probe, "fit and probe curvature constants");
  cmd->add_flag("--audit", o.audit, "audit the error recursion");
  cmd->add_flag("--save-instance", o.save_instance,
                "persist the generated instances next to the traces");
  cmd->add_option("--instance", o.instance,
                  "run a persisted instance (path prefix) instead of "
                  "generating");
}

int default_sparsity(int d) {
  return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d))));
}

ExperimentSpec build_spec(const std::string& name, Family family,
                          const CommonOpts& o) {
  ExperimentSpec exp;
  exp.name = name;
  exp.ensemble.family = family;
  exp.ensemble.seed = o.seed;
  exp.ensemble.q = o.q;
  exp.ensemble.omega = o.omega;
  exp.ensemble.nu = o.nu;
  exp.ensemble.spikiness = o.spikiness;
  exp.reps = o.reps;
  exp.out_dir = o.out;
  exp.max_iters = o.max_iters;
  exp.stop_tol = o.stop_tol;
  exp.record_every = o.record_every;
  exp.gamma_override = o.gamma;
  exp.lambda_override = o.lambda;
  exp.floor_guard = o.floor_guard;
  exp.gnuplot = o.gnuplot;
  exp.theory.cone_checks = o.cone_checks;
  exp.theory.probe = o.probe;
  exp.theory.recursion_audit = o.audit;
  exp.save_instances = o.save_instance;
  exp.instance_path = o.instance;

  const double logd = std::log(static_cast<double>(std::max(o.d, 2)));
  switch (family) {
    case Family::SparseLinear:
    case Family::LogisticSparse: {
      exp.ensemble.d = o.d;
      exp.ensemble.s = o.s > 0 ? o.s : default_sparsity(o.d);
      if (o.q > 0)
        exp.ensemble.Rq =
            o.Rq > 0 ? o.Rq : std::ceil(logd * logd);
      const double s_eff =
          o.q > 0 ? exp.ensemble.Rq : static_cast<double>(exp.ensemble.s);
      exp.ensemble.n =
          o.n > 0 ? o.n : static_cast<int>(std::ceil(o.alpha * s_eff * logd));
      break;
    }
    case Family::MatrixCS: {
      exp.ensemble.d = o.d;
      exp.ensemble.rank = o.rank;
      if (o.q > 0) exp.ensemble.Rq = o.Rq > 0 ? o.Rq : o.rank;
      exp.ensemble.n =
          o.n > 0 ? o.n
                  : static_cast<int>(std::ceil(o.alpha * o.rank * o.d));
      break;
    }
    case Family::MatComp: {
      exp.ensemble.d = o.d;
      exp.ensemble.rank = o.rank;
      exp.ensemble.n =
          o.n > 0 ? o.n
                  : static_cast<int>(std::ceil(o.alpha * o.rank * o.d * logd));
      break;
    }
    case Family::MatDecomp: {
      exp.ensemble.d1 = o.d;
      exp.ensemble.d2 = o.d2 > 0 ? o.d2 : o.d;
      exp.ensemble.rank = o.rank;
      exp.ensemble.s = o.s > 0 ? o.s : 1;
      exp.ensemble.n = exp.ensemble.d1 * exp.ensemble.d2;
      break;
    }
  }
  return exp;
}

void print_result(const ExperimentSpec& exp, const ExperimentResult& res) {
  nlohmann::json out = res.summary;
  std::cout << out.dump(2) << std::endl;
  (void)exp;
}

int run_family(const std::string& name, Family family, Method method,
               const CommonOpts& o) {
  ExperimentSpec exp = build_spec(name, family, o);
  exp.method = method;
  ExperimentResult res = run_experiment(exp);
  print_result(exp, res);
  return 0;
}

int run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "cannot open config: " << path << "\n";
    return 2;
  }
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    std::cerr << "config parse error: " << e.what() << "\n";
    return 1;
  }
  if (!cfg.contains("experiments") || cfg["experiments"].empty()) {
    std::cout << "{\"experiments\": 0}\n";
    return 0;
  }
  for (const auto& e : cfg["experiments"]) {
    ExperimentSpec exp;
    exp.name = e.value("name", std::string("experiment"));
    exp.ensemble = ensemble_from_json(e.at("ensemble"));
    if (e.contains("solver")) {
      const auto& s = e["solver"];
      const std::string method = s.value("method", std::string("projected"));
      exp.method = method == "composite" ? Method::Composite
                                         : Method::Projected;
      exp.gamma_override = s.value("gamma", -1.0);
      exp.lambda_override = s.value("lambda", -1.0);
      exp.max_iters = s.value("max_iters", 2000);
      exp.stop_tol = s.value("stop_tol", 1e-10);
      exp.record_every = s.value("record_every", 1);
      exp.floor_guard = s.value("floor_guard", 3.0);
    }
    if (e.contains("theory")) {
      const auto& t = e["theory"];
      exp.theory.cone_checks = t.value("cone_checks", false);
      exp.theory.probe = t.value("probe", false);
      exp.theory.recursion_audit = t.value("recursion_audit", false);
    }
    exp.reps = e.value("reps", 1);
    exp.out_dir = e.value("out_dir", std::string());
    exp.gnuplot = e.value("gnuplot", false);
    exp.save_instances = e.value("save_instances", false);
    exp.instance_path = e.value("instance", std::string());
    ExperimentResult res = run_experiment(exp);
    print_result(exp, res);
  }
  return 0;
}

int run_fit_rate(const std::string& trace_path, double floor_guard) {
  const auto series = read_error_series_csv(trace_path);
  const RateFit fit = fit_geometric_rate(series, floor_guard);
  std::cout << to_json(fit).dump(2) << std::endl;
  return 0;
}

int run_probe(const CommonOpts& o, Family family) {
  ExperimentSpec exp = build_spec("probe", family, o);
  Instance inst = gen_instance(exp.ensemble);
  const SolverConfig cfg = make_solver_config(exp, inst);
  const ReferenceOptimum ref = reference_optimum(inst.model, cfg);
  const double psi = subspace_compat(inst.reg, inst.truth.pair);
  const double scaling = tau_scaling_for(exp.ensemble, inst.truth.sigma);
  std::vector<DirectionPair> pairs = sample_direction_pairs(
      ref.point.data(), inst.truth.pair, Rng(exp.ensemble.seed).stream(99),
      600, std::max((ref.point.data() - inst.truth.theta_star.data()).norm(),
                    1e-3));
  const FittedParams fitted = fit_rsc_rsm(inst.model, pairs, inst.reg, scaling,
                                          psi, FitTarget::Thm1);
  const ProbeReport probe =
      rsc_rsm_probe(inst.model, pairs, inst.reg, fitted.params);
  nlohmann::json out;
  out["ensemble"] = to_json(exp.ensemble);
  out["psi"] = psi;
  out["tau_scaling"] = scaling;
  out["fitted_params"] = to_json(fitted.params);
  out["fitted_multiplier"] = fitted.multiplier;
  out["probe"] = to_json(probe);
  const Contraction k = contraction_thm1(fitted.params, psi);
  out["predicted_kappa"] = k.kappa;
  out["predicted_regime"] = regime_name(k.regime);
  std::cout << out.dump(2) << std::endl;
  if (!o.out.empty()) {
    std::filesystem::create_directories(o.out);
    write_text_file(std::filesystem::path(o.out) / "probe.json",
                    out.dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"first-order solvers for norm-constrained estimators"};
  app.require_subcommand(1);

  CommonOpts lasso_o, lasso_lag_o, logistic_o, mcs_o, mc_o, md_o, probe_o;
  std::string config_path, trace_path, probe_family = "lasso";
  double fit_floor_guard = 3.0;

  CLI::App* lasso = app.add_subcommand("lasso", "constrained sparse regression");
  add_common(lasso, lasso_o);
  CLI::App* lasso_lag =
      app.add_subcommand("lasso-lag", "penalized sparse regression");
  add_common(lasso_lag, lasso_lag_o);
  CLI::App* logistic =
      app.add_subcommand("logistic", "constrained logistic regression");
  add_common(logistic, logistic_o);
  CLI::App* mcs =
      app.add_subcommand("matrix-cs", "matrix compressed sensing");
  add_common(mcs, mcs_o);
  CLI::App* mc = app.add_subcommand("matcomp", "matrix completion");
  add_common(mc, mc_o);
  CLI::App* md = app.add_subcommand("matdecomp",
                                    "low-rank plus column-sparse decomposition");
  add_common(md, md_o);
  CLI::App* probe = app.add_subcommand("probe-rsc",
                                       "fit and probe curvature constants");
  add_common(probe, probe_o);
  probe->add_option("--family", probe_family,
                    "lasso | logistic | matrix-cs | matcomp");
  CLI::App* fit = app.add_subcommand("fit-rate",
                                     "fit a geometric rate to a trace CSV");
  fit->add_option("--trace", trace_path, "trace CSV path")->required();
  fit->add_option("--floor-guard", fit_floor_guard, "floor guard multiplier");
  CLI::App* runc = app.add_subcommand("run", "run experiments from a config");
  runc->add_option("--config", config_path, "experiment config JSON")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (lasso->parsed())
      return run_family("lasso", Family::SparseLinear, Method::Projected,
                        lasso_o);
    if (lasso_lag->parsed())
      return run_family("lasso_lag", Family::SparseLinear, Method::Composite,
                        lasso_lag_o);
    if (logistic->parsed())
      return run_family("logistic", Family::LogisticSparse, Method::Projected,
                        logistic_o);
    if (mcs->parsed())
      return run_family("matrix_cs", Family::MatrixCS, Method::Projected,
                        mcs_o);
    if (mc->parsed())
      return run_family("matcomp", Family::MatComp, Method::Projected, mc_o);
    if (md->parsed())
      return run_family("matdecomp", Family::MatDecomp, Method::Projected,
                        md_o);
    if (probe->parsed()) {
      Family fam = Family::SparseLinear;
      if (probe_family == "logistic") fam = Family::LogisticSparse;
      else if (probe_family == "matrix-cs") fam = Family::MatrixCS;
      else if (probe_family == "matcomp") fam = Family::MatComp;
      else if (probe_family != "lasso")
        throw ConfigError("unknown probe family: " + probe_family);
      return run_probe(probe_o, fam);
    }
    if (fit->parsed()) return run_fit_rate(trace_path, fit_floor_guard);
    if (runc->parsed()) return run_config(config_path);
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
