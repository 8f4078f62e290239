#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "restgrad/ensembles.hpp"
#include "restgrad/io.hpp"

namespace restgrad {

// Binary container layout: magic, version, operator kind, shape, then the
// raw payload arrays (design doubles or index pairs, followed by the
// responses).  Everything little-endian doubles/int32 as written.
namespace detail {

inline constexpr std::uint32_t kInstanceMagic = 0x52474449;  // "RGDI"
inline constexpr std::uint32_t kInstanceVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("truncated instance container");
  return v;
}

}  // namespace detail

/// Writes the observation operator and responses to `<prefix>_design.bin`
/// and the truth plus metadata to `<prefix>_instance.json`, enough for an
/// exact re-run without regenerating.
inline void save_instance(const std::filesystem::path& prefix,
                          const Instance& inst, const EnsembleSpec& spec) {
  const std::filesystem::path bin =
      prefix.string() + std::string("_design.bin");
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + bin.string());
  const ObservationOperator& op = inst.model.op();
  detail::write_pod(out, detail::kInstanceMagic);
  detail::write_pod(out, detail::kInstanceVersion);
  detail::write_pod(out, static_cast<std::uint32_t>(op.kind()));
  detail::write_pod(out, static_cast<std::int32_t>(op.out_dim()));
  detail::write_pod(out, static_cast<std::int32_t>(op.param_rows()));
  detail::write_pod(out, static_cast<std::int32_t>(op.param_cols()));
  switch (op.kind()) {
    case ObservationOperator::Kind::DenseVectorDesign:
    case ObservationOperator::Kind::DenseMatrixDesign:
      out.write(reinterpret_cast<const char*>(op.design().data()),
                sizeof(double) * op.design().size());
      break;
    case ObservationOperator::Kind::EntrySampler:
      for (auto [a, b] : op.entries()) {
        detail::write_pod(out, static_cast<std::int32_t>(a));
        detail::write_pod(out, static_cast<std::int32_t>(b));
      }
      break;
    case ObservationOperator::Kind::Identity:
    case ObservationOperator::Kind::BlockSum:
      break;
  }
  out.write(reinterpret_cast<const char*>(inst.model.responses().data()),
            sizeof(double) * inst.model.responses().size());
  if (!out) throw IoError("write failed: " + bin.string());
  out.close();

  nlohmann::json j;
  j["schema_version"] = 1;
  j["ensemble"] = to_json(spec);
  j["regularizer"] = to_json(inst.reg);
  j["family"] = family_name(spec.family);
  j["loss_family"] =
      inst.model.family() == LossFamily::Quadratic ? "quadratic" : "logistic";
  j["rho"] = inst.truth.rho;
  j["rho_gamma"] = inst.truth.rho_gamma;
  j["box_bound"] = inst.truth.box_bound;
  j["alpha_spike"] = inst.truth.alpha_spike;
  j["lambda_n"] = inst.truth.lambda_n;
  j["mu_threshold"] = inst.truth.mu_threshold;
  j["gamma_hint"] = inst.gamma_hint;
  j["gamma_init_hint"] = inst.gamma_init_hint;
  const Eigen::MatrixXd& ts = inst.truth.theta_star.data();
  j["theta_star_rows"] = ts.rows();
  j["theta_star_cols"] = ts.cols();
  j["theta_star_vector"] = inst.truth.theta_star.is_vector();
  std::vector<double> flat(ts.data(), ts.data() + ts.size());
  j["theta_star"] = flat;
  write_text_file(prefix.string() + std::string("_instance.json"),
                  j.dump(2) + "\n");
}

/// Reads an instance back; the rebuilt model, truth, constraint set, and
/// hints match the saved one exactly.
inline Instance load_instance(const std::filesystem::path& prefix) {
  const std::filesystem::path bin =
      prefix.string() + std::string("_design.bin");
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw IoError("cannot open instance container: " + bin.string());
  if (detail::read_pod<std::uint32_t>(in) != detail::kInstanceMagic)
    throw IoError("not an instance container: " + bin.string());
  if (detail::read_pod<std::uint32_t>(in) != detail::kInstanceVersion)
    throw IoError("unsupported container version: " + bin.string());
  const auto kind = static_cast<ObservationOperator::Kind>(
      detail::read_pod<std::uint32_t>(in));
  const int n = detail::read_pod<std::int32_t>(in);
  const int d1 = detail::read_pod<std::int32_t>(in);
  const int d2 = detail::read_pod<std::int32_t>(in);

  ObservationOperator op;
  switch (kind) {
    case ObservationOperator::Kind::DenseVectorDesign: {
      Eigen::MatrixXd x(n, d1);
      in.read(reinterpret_cast<char*>(x.data()), sizeof(double) * x.size());
      op = ObservationOperator::dense_vector(std::move(x));
      break;
    }
    case ObservationOperator::Kind::DenseMatrixDesign: {
      Eigen::MatrixXd rows(n, static_cast<Eigen::Index>(d1) * d2);
      in.read(reinterpret_cast<char*>(rows.data()),
              sizeof(double) * rows.size());
      op = ObservationOperator::dense_matrix_flat(std::move(rows), d1, d2);
      break;
    }
    case ObservationOperator::Kind::EntrySampler: {
      std::vector<std::pair<int, int>> entries(n);
      for (int i = 0; i < n; ++i) {
        entries[i].first = detail::read_pod<std::int32_t>(in);
        entries[i].second = detail::read_pod<std::int32_t>(in);
      }
      op = ObservationOperator::entry_sampler(std::move(entries), d1, d2);
      break;
    }
    case ObservationOperator::Kind::Identity:
      op = ObservationOperator::identity(d1);
      break;
    case ObservationOperator::Kind::BlockSum:
      op = ObservationOperator::block_sum(d1, d2 / 2);
      break;
  }
  Eigen::VectorXd y(op.out_dim());
  in.read(reinterpret_cast<char*>(y.data()), sizeof(double) * y.size());
  if (!in) throw IoError("truncated instance container: " + bin.string());

  std::ifstream jin(prefix.string() + std::string("_instance.json"));
  if (!jin) throw IoError("missing instance metadata for " + prefix.string());
  const nlohmann::json j = nlohmann::json::parse(jin);

  const EnsembleSpec spec = ensemble_from_json(j.at("ensemble"));
  const bool logistic = j.at("loss_family") == "logistic";
  const bool block_sum = kind == ObservationOperator::Kind::BlockSum;
  LossModel model = logistic ? LossModel::logistic(std::move(op), std::move(y))
                             : LossModel::quadratic(std::move(op),
                                                    std::move(y));
  if (block_sum) model.set_norm_n(1.0);

  Instance inst{std::move(model), InstanceTruth{}, regularizer_from_json(
                                                       j.at("regularizer")),
                ConstraintSet{}};
  const auto flat = j.at("theta_star").get<std::vector<double>>();
  Eigen::MatrixXd ts = Eigen::Map<const Eigen::MatrixXd>(
      flat.data(), j.at("theta_star_rows").get<int>(),
      j.at("theta_star_cols").get<int>());
  inst.truth.theta_star = j.at("theta_star_vector").get<bool>()
                              ? ParameterPoint::vector(ts.col(0))
                              : ParameterPoint::matrix(ts);
  inst.truth.rho = j.at("rho").get<double>();
  inst.truth.rho_gamma = j.at("rho_gamma").get<double>();
  inst.truth.box_bound = j.at("box_bound").get<double>();
  inst.truth.alpha_spike = j.at("alpha_spike").get<double>();
  inst.truth.lambda_n = j.at("lambda_n").get<double>();
  inst.truth.mu_threshold = j.at("mu_threshold").get<double>();
  inst.gamma_hint = j.at("gamma_hint").get<double>();
  inst.gamma_init_hint = j.at("gamma_init_hint").get<double>();
  inst.truth.sigma = ar1_sigma_summary(spec.omega);

  // Rebuild the subspace pair and feasible set exactly as generation does.
  if (spec.family == Family::MatDecomp) {
    const int cols = static_cast<int>(inst.truth.theta_star.cols()) / 2;
    inst.truth.pair = SubspacePair::from_truth(
        inst.reg,
        ParameterPoint::matrix(inst.truth.theta_star.data().leftCols(cols)),
        1e-9);
    ConstraintSet theta_block = ConstraintSet::intersection(
        {ConstraintSet::reg_ball(inst.reg, inst.truth.rho),
         ConstraintSet::col2_box(inst.truth.box_bound)});
    ConstraintSet gamma_block = ConstraintSet::reg_ball(
        RegularizerSpec::column12(inst.reg.d1(), inst.reg.d2()),
        inst.truth.rho_gamma);
    inst.constraint = ConstraintSet::product(
        {std::move(theta_block), std::move(gamma_block)}, {cols, cols});
  } else {
    const double mu = spec.family == Family::SparseLinear && spec.q == 0
                          ? 0.0
                          : std::max(inst.truth.mu_threshold, 1e-9);
    inst.truth.pair =
        SubspacePair::from_truth(inst.reg, inst.truth.theta_star,
                                 spec.q == 0 && inst.reg.is_vector_kind()
                                     ? 0.0
                                     : mu);
    if (spec.family == Family::MatComp) {
      inst.constraint = ConstraintSet::intersection(
          {ConstraintSet::reg_ball(inst.reg, inst.truth.rho),
           ConstraintSet::linf_box(inst.truth.box_bound)});
    } else if (spec.family == Family::LogisticSparse) {
      const double r2 = 2 * std::max(1.0, inst.truth.theta_star.norm());
      inst.constraint = ConstraintSet::intersection(
          {ConstraintSet::reg_ball(inst.reg, inst.truth.rho),
           ConstraintSet::l2_ball(r2)});
    } else {
      inst.constraint = ConstraintSet::reg_ball(inst.reg, inst.truth.rho);
    }
  }
  inst.truth.sparsity = inst.truth.pair.model_size();
  return inst;
}

}  // namespace restgrad
