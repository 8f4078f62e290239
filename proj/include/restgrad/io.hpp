#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "restgrad/ensembles.hpp"
#include "restgrad/regularizers.hpp"
#include "restgrad/solvers.hpp"
#include "restgrad/theory.hpp"

namespace restgrad {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shortest round-trippable decimal form; keeps trace files byte-stable
/// across runs.
inline std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string trace_to_csv(const IterateTrace& trace) {
  std::ostringstream out;
  out << "t,objective,err_to_opt,err_to_truth,reg_value,step\n";
  for (const auto& r : trace.rows)
    out << r.t << ',' << fmt_double(r.objective) << ','
        << fmt_double(r.err_to_opt) << ',' << fmt_double(r.err_to_truth)
        << ',' << fmt_double(r.reg_value) << ',' << fmt_double(r.step)
        << '\n';
  return out.str();
}

inline void write_trace_csv(const std::filesystem::path& path,
                            const IterateTrace& trace) {
  write_text_file(path, trace_to_csv(trace));
}

/// Reads (t, err_to_opt) pairs back from a trace CSV.
inline std::vector<std::pair<int, double>> read_error_series_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty trace: " + path.string());
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  int t_col = -1, err_col = -1;
  for (int i = 0; i < static_cast<int>(header.size()); ++i) {
    if (header[i] == "t") t_col = i;
    if (header[i] == "err_to_opt" || header[i] == "err") err_col = i;
  }
  if (t_col < 0 || err_col < 0)
    throw IoError("trace is missing t/err_to_opt columns");
  std::vector<std::pair<int, double>> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int col = 0, t = 0;
    double err = 0;
    while (std::getline(ss, cell, ',')) {
      if (col == t_col) t = std::stoi(cell);
      if (col == err_col) err = std::stod(cell);
      ++col;
    }
    out.emplace_back(t, err);
  }
  return out;
}

inline void write_curve_csv(const std::filesystem::path& path,
                            const std::vector<std::pair<int, double>>& curve) {
  std::ostringstream out;
  out << "t,mean_log_err\n";
  for (auto [t, v] : curve) out << t << ',' << fmt_double(v) << '\n';
  write_text_file(path, out.str());
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const RegularizerSpec& spec) {
  nlohmann::json j;
  switch (spec.kind()) {
    case RegKind::L1:
      j["kind"] = "l1";
      j["d"] = spec.d1();
      break;
    case RegKind::GroupL1L2:
      j["kind"] = "group_l1l2";
      j["d"] = spec.d1();
      j["groups"] = spec.groups();
      break;
    case RegKind::Nuclear:
      j["kind"] = "nuclear";
      j["d1"] = spec.d1();
      j["d2"] = spec.d2();
      break;
    case RegKind::Column12:
      j["kind"] = "column12";
      j["d1"] = spec.d1();
      j["d2"] = spec.d2();
      break;
  }
  return j;
}

inline RegularizerSpec regularizer_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "l1") return RegularizerSpec::l1(j.at("d").get<int>());
  if (kind == "group_l1l2")
    return RegularizerSpec::group_l1l2(j.at("d").get<int>(),
                                       j.at("groups").get<GroupPartition>());
  if (kind == "nuclear")
    return RegularizerSpec::nuclear(j.at("d1").get<int>(),
                                    j.at("d2").get<int>());
  if (kind == "column12")
    return RegularizerSpec::column12(j.at("d1").get<int>(),
                                     j.at("d2").get<int>());
  throw ConfigError("unknown regularizer kind: " + kind);
}

inline nlohmann::json to_json(const EnsembleSpec& e) {
  nlohmann::json j;
  j["family"] = family_name(e.family);
  j["d"] = e.d;
  j["d1"] = e.d1;
  j["d2"] = e.d2;
  j["s"] = e.s;
  j["rank"] = e.rank;
  j["q"] = e.q;
  j["Rq"] = e.Rq;
  j["n"] = e.n;
  j["omega"] = e.omega;
  j["nu"] = e.nu;
  j["spikiness"] = e.spikiness;
  j["singular_decay"] = e.singular_decay;
  j["seed"] = e.seed;
  return j;
}

inline EnsembleSpec ensemble_from_json(const nlohmann::json& j) {
  EnsembleSpec e;
  const std::string fam = j.at("family").get<std::string>();
  if (fam == "sparse_linear") e.family = Family::SparseLinear;
  else if (fam == "logistic_sparse") e.family = Family::LogisticSparse;
  else if (fam == "matrix_cs") e.family = Family::MatrixCS;
  else if (fam == "matcomp") e.family = Family::MatComp;
  else if (fam == "matdecomp") e.family = Family::MatDecomp;
  else throw ConfigError("unknown ensemble family: " + fam);
  e.d = j.value("d", 0);
  e.d1 = j.value("d1", 0);
  e.d2 = j.value("d2", 0);
  e.s = j.value("s", 0);
  e.rank = j.value("rank", 0);
  e.q = j.value("q", 0.0);
  e.Rq = j.value("Rq", 0.0);
  e.n = j.value("n", 0);
  e.omega = j.value("omega", 0.0);
  e.nu = j.value("nu", 0.5);
  e.spikiness = j.value("spikiness", 0.0);
  e.singular_decay = j.value("singular_decay", 0.0);
  e.seed = j.value("seed", std::uint64_t{1});
  return e;
}

inline nlohmann::json to_json(const RateFit& fit) {
  nlohmann::json j;
  switch (fit.status) {
    case RateStatus::Ok: j["status"] = "ok"; break;
    case RateStatus::NoGeometricPhase: j["status"] = "no_geometric_phase"; break;
    case RateStatus::TooFewPoints: j["status"] = "too_few_points"; break;
  }
  j["kappa_hat"] = fit.kappa_hat;
  j["slope"] = fit.slope;
  j["r_squared"] = fit.r_squared;
  j["floor"] = fit.floor;
  j["max_abs_residual"] = fit.max_abs_residual;
  j["points_used"] = fit.points_used;
  return j;
}

inline nlohmann::json to_json(const TheoryReport& rep) {
  nlohmann::json j;
  switch (rep.kind) {
    case CorollaryKind::SparseExact: j["kind"] = "sparse_exact"; break;
    case CorollaryKind::SparseWeak: j["kind"] = "sparse_weak"; break;
    case CorollaryKind::LassoLag: j["kind"] = "lasso_lag"; break;
    case CorollaryKind::MatrixCS: j["kind"] = "matrix_cs"; break;
    case CorollaryKind::MatComp: j["kind"] = "matcomp"; break;
    case CorollaryKind::MatDecomp: j["kind"] = "matdecomp"; break;
  }
  j["regime"] = regime_name(rep.regime);
  j["chi_n"] = rep.chi_n;
  j["kappa"] = rep.kappa;
  j["tolerance_sq"] = rep.tolerance_sq;
  j["constants_used"] = {rep.constants_used.c0, rep.constants_used.c1,
                         rep.constants_used.c2, rep.constants_used.c3,
                         rep.constants_used.c4};
  return j;
}

inline nlohmann::json to_json(const RscRsmParams& p) {
  return {{"gamma_l", p.gamma_l},
          {"gamma_u", p.gamma_u},
          {"tau_l", p.tau_l},
          {"tau_u", p.tau_u},
          {"delta", p.delta}};
}

inline nlohmann::json to_json(const ProbeReport& p) {
  return {{"samples", p.samples},
          {"lower_violations", p.lower_violations},
          {"upper_violations", p.upper_violations},
          {"violation_fraction", p.violation_fraction()},
          {"worst_lower_margin", p.worst_lower_margin},
          {"worst_upper_margin", p.worst_upper_margin}};
}

/// A gnuplot script for the averaged log-error curve; plotting stays out of
/// process.
inline std::string gnuplot_script(const std::string& curve_csv,
                                  const std::string& title) {
  std::ostringstream out;
  out << "set datafile separator ','\n"
      << "set xlabel 'iteration'\n"
      << "set ylabel 'log ||theta_t - theta_hat||'\n"
      << "set title '" << title << "'\n"
      << "plot '" << curve_csv << "' using 1:2 with lines title 'mean log error'\n";
  return out.str();
}

}  // namespace restgrad
