#include "gridtrip/trip_model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <utility>

#include "gridtrip/text.hpp"

namespace gridtrip {

namespace {

using nlohmann::json;

void check_dimensions(const PowerStatistics& stats, const SensitivityMatrices& sens) {
  const int n = stats.node_count();
  if (sens.R.rows() != n || sens.R.cols() != n || sens.X.rows() != n || sens.X.cols() != n) {
    throw InputError(ErrorCode::DimensionMismatch,
                     "sensitivity matrices do not match statistics node count");
  }
}

void check_lambda(const Eigen::VectorXd& lambda, int n) {
  if (lambda.size() != n) {
    throw InputError(ErrorCode::DimensionMismatch, "lambda has wrong size");
  }
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void MicroState::validate() const {
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (!(lambda(i) >= 0.0) || !(lambda(i) <= 1.0)) {
      throw InputError(ErrorCode::InvalidArgument,
                       "micro-state entry " + std::to_string(i) + " outside [0,1]: " +
                           format_value(lambda(i)));
    }
  }
}

Eigen::VectorXd voltage_mean(const Eigen::VectorXd& lambda,
                             const PowerStatistics& stats,
                             const SensitivityMatrices& sens,
                             double v0) {
  check_dimensions(stats, sens);
  check_lambda(lambda, stats.node_count());
  return sens.R * lambda.cwiseProduct(stats.mean_p) +
         sens.X * lambda.cwiseProduct(stats.mean_q) +
         Eigen::VectorXd::Constant(stats.node_count(), v0);
}

Eigen::VectorXd voltage_variance(const Eigen::VectorXd& lambda,
                                 const PowerStatistics& stats,
                                 const SensitivityMatrices& sens) {
  check_dimensions(stats, sens);
  check_lambda(lambda, stats.node_count());
  const int n = stats.node_count();

  // Direct accumulation of per-node and pairwise contributions. Switching is
  // Bernoulli(lambda_j), independent across nodes and of the powers, which
  // yields a linear lambda term for the gated second moment minus a quadratic
  // one for the squared gated mean.
  Eigen::VectorXd variance(n);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) {
      const double r = sens.R(i, j);
      const double x = sens.X(i, j);
      const double second =
          r * r * (stats.p_plus(j) + stats.p_minus(j)) +
          x * x * (stats.q_plus(j) + stats.q_minus(j)) +
          2.0 * r * x * (stats.mean_p(j) * stats.mean_q(j) + stats.cov_pq_self(j));
      const double mean_term = r * stats.mean_p(j) + x * stats.mean_q(j);
      acc += lambda(j) * second - lambda(j) * lambda(j) * mean_term * mean_term;
    }
    for (int j = 0; j < n; ++j) {
      const double mj = sens.R(i, j) * stats.mean_p(j) + sens.X(i, j) * stats.mean_q(j);
      for (int k = 0; k < j; ++k) {
        const double pair_second =
            sens.R(i, j) * sens.R(i, k) * (stats.cov_pp(j, k) + stats.mean_p(j) * stats.mean_p(k)) +
            sens.R(i, j) * sens.X(i, k) * (stats.cov_pq(j, k) + stats.mean_p(j) * stats.mean_q(k)) +
            sens.X(i, j) * sens.R(i, k) * (stats.cov_qp(j, k) + stats.mean_q(j) * stats.mean_p(k)) +
            sens.X(i, j) * sens.X(i, k) * (stats.cov_qq(j, k) + stats.mean_q(j) * stats.mean_q(k));
        const double mk = sens.R(i, k) * stats.mean_p(k) + sens.X(i, k) * stats.mean_q(k);
        acc += 2.0 * lambda(j) * lambda(k) * (pair_second - mj * mk);
      }
    }
    if (acc < 0.0) {
      if (acc < -1e-12) {
        throw InputError(ErrorCode::NegativeVariance,
                         "voltage variance " + format_value(acc) + " at node index " +
                             std::to_string(i));
      }
      acc = 0.0;
    }
    variance(i) = acc;
  }
  return variance;
}

VoltageStatistics voltage_statistics(const Eigen::VectorXd& lambda,
                                     const PowerStatistics& stats,
                                     const SensitivityMatrices& sens,
                                     double v0) {
  return VoltageStatistics{voltage_mean(lambda, stats, sens, v0),
                           voltage_variance(lambda, stats, sens)};
}

double chebyshev_raw(double mean, double variance, const VoltageBand& band) {
  band.validate();
  if (variance < 0.0) {
    throw InputError(ErrorCode::NegativeVariance,
                     "negative variance " + format_value(variance));
  }
  const double h = band.half_width();
  const double off = mean - band.center();
  return 1.0 - (variance + off * off) / (h * h);
}

double chebyshev_bound(double mean, double variance, const VoltageBand& band) {
  return std::clamp(chebyshev_raw(mean, variance, band), 0.0, 1.0);
}

ModelBuilder::ModelBuilder(const PowerStatistics& stats,
                           const SensitivityMatrices& sens,
                           VoltageBand band,
                           std::vector<bool> switched_mask)
    : band_(band), switched_mask_(std::move(switched_mask)) {
  check_dimensions(stats, sens);
  band_.validate();
  const int n = stats.node_count();
  if (static_cast<int>(switched_mask_.size()) != n) {
    throw InputError(ErrorCode::DimensionMismatch, "switched mask has wrong size");
  }

  // Per-pair kernels reused for every reference voltage.
  mean_drop_ = sens.R * stats.mean_p.asDiagonal() + sens.X * stats.mean_q.asDiagonal();
  const Eigen::VectorXd p2 = stats.p_plus + stats.p_minus;
  const Eigen::VectorXd q2 = stats.q_plus + stats.q_minus;
  const Eigen::VectorXd pq =
      stats.mean_p.cwiseProduct(stats.mean_q) + stats.cov_pq_self;
  gamma1_ = sens.R.cwiseAbs2() * p2.asDiagonal() + sens.X.cwiseAbs2() * q2.asDiagonal() +
            2.0 * sens.R.cwiseProduct(sens.X) * pq.asDiagonal();

  // Second-moment matrices feeding the pairwise coupling.
  const Eigen::MatrixXd spp = stats.cov_pp + stats.mean_p * stats.mean_p.transpose();
  const Eigen::MatrixXd spq = stats.cov_pq + stats.mean_p * stats.mean_q.transpose();
  const Eigen::MatrixXd sqp = stats.cov_qp + stats.mean_q * stats.mean_p.transpose();
  const Eigen::MatrixXd sqq = stats.cov_qq + stats.mean_q * stats.mean_q.transpose();

  const double h = band_.half_width();
  const double inv_h2 = 1.0 / (h * h);
  c_.resize(n);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd r = sens.R.row(i).transpose();
    const Eigen::VectorXd x = sens.X.row(i).transpose();
    Eigen::MatrixXd ci = (r * r.transpose()).cwiseProduct(spp) +
                         (r * x.transpose()).cwiseProduct(spq) +
                         (x * r.transpose()).cwiseProduct(sqp) +
                         (x * x.transpose()).cwiseProduct(sqq);
    ci *= -inv_h2;
    ci.diagonal().setZero();
    c_[i] = std::move(ci);
  }
}

TrippingModelParams ModelBuilder::params(double v0) const {
  const double h = band_.half_width();
  const double d = v0 - band_.center();
  const int n = static_cast<int>(switched_mask_.size());

  TrippingModelParams out;
  out.a0 = Eigen::VectorXd::Constant(n, 1.0 - (d / h) * (d / h));
  out.B = -(gamma1_ + 2.0 * d * mean_drop_) / (h * h);
  out.C = c_;
  out.switched_mask = switched_mask_;
  return out;
}

TrippingModelParams build_params(const PowerStatistics& stats,
                                 const SensitivityMatrices& sens,
                                 const VoltageBand& band,
                                 double v0,
                                 const std::vector<bool>& switched_mask) {
  return ModelBuilder(stats, sens, band, switched_mask).params(v0);
}

Eigen::VectorXd evaluate_map(const TrippingModelParams& params,
                             const Eigen::VectorXd& lambda) {
  const int n = params.node_count();
  check_lambda(lambda, n);
  if (static_cast<int>(params.C.size()) != n ||
      static_cast<int>(params.switched_mask.size()) != n || params.B.rows() != n ||
      params.B.cols() != n) {
    throw InputError(ErrorCode::DimensionMismatch, "model parameters are inconsistent");
  }
  Eigen::VectorXd value = params.a0 + params.B * lambda;
  for (int i = 0; i < n; ++i) {
    value(i) += lambda.dot(params.C[i] * lambda);
  }
  return value;
}

MicroState ones_state(const TrippingModelParams& params) {
  return MicroState{Eigen::VectorXd::Ones(params.node_count()), MicroStateKind::ModelBound};
}

FixedPointResult solve_fixed_point(const TrippingModelParams& params,
                                   const MicroState& init,
                                   const SolverOptions& options) {
  const int n = params.node_count();
  check_lambda(init.lambda, n);
  init.validate();
  if (!(options.damping > 0.0) || options.damping > 1.0) {
    throw InputError(ErrorCode::InvalidArgument, "damping must be in (0, 1]");
  }
  if (!(options.tol > 0.0) || options.max_iter < 1) {
    throw InputError(ErrorCode::InvalidArgument, "tolerance and max_iter must be positive");
  }

  Eigen::VectorXd lambda = init.lambda;
  for (int i = 0; i < n; ++i) {
    if (!params.switched_mask[i]) lambda(i) = 1.0;
  }

  FixedPointResult result;
  result.micro.kind = MicroStateKind::ModelBound;
  for (int iter = 0;; ++iter) {
    const Eigen::VectorXd raw = evaluate_map(params, lambda);
    const Eigen::VectorXd clipped = raw.cwiseMax(0.0).cwiseMin(1.0);
    double residual = 0.0;
    double residual_raw = 0.0;
    // Pinned nodes are not equations of the system; only switched entries
    // count toward convergence.
    for (int i = 0; i < n; ++i) {
      if (!params.switched_mask[i]) continue;
      residual = std::max(residual, std::abs(lambda(i) - clipped(i)));
      residual_raw = std::max(residual_raw, std::abs(lambda(i) - raw(i)));
    }
    result.iterations = iter;
    result.residual = residual;
    result.residual_raw = residual_raw;
    if (residual < options.tol) {
      result.converged = true;
      break;
    }
    if (iter >= options.max_iter) {
      result.converged = false;  // best-effort iterate, flagged
      break;
    }
    lambda = (1.0 - options.damping) * lambda + options.damping * clipped;
    for (int i = 0; i < n; ++i) {
      if (!params.switched_mask[i]) lambda(i) = 1.0;
    }
  }
  result.micro.lambda = std::move(lambda);
  return result;
}

MacroState macro_state(const MicroState& micro, const std::vector<bool>& switched_mask) {
  if (micro.lambda.size() != static_cast<Eigen::Index>(switched_mask.size())) {
    throw InputError(ErrorCode::DimensionMismatch, "mask does not match micro-state");
  }
  int switched = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < switched_mask.size(); ++i) {
    if (!switched_mask[i]) continue;
    ++switched;
    sum += micro.lambda(static_cast<Eigen::Index>(i));
  }
  if (switched == 0) {
    throw InputError(ErrorCode::ZeroSwitchedNodes,
                     "macro-state needs at least one switched node");
  }
  return MacroState{sum, 100.0 * sum / static_cast<double>(switched)};
}

std::string model_to_json(const TrippingModelParams& params,
                          const ModelProvenance& provenance) {
  json doc;
  json a0 = json::array();
  for (Eigen::Index i = 0; i < params.a0.size(); ++i) a0.push_back(params.a0(i));
  doc["a0"] = std::move(a0);
  doc["B"] = matrix_to_json(params.B);
  json c = json::array();
  for (const auto& ci : params.C) c.push_back(matrix_to_json(ci));
  doc["C"] = std::move(c);
  json mask = json::array();
  for (bool b : params.switched_mask) mask.push_back(b);
  doc["switched_mask"] = std::move(mask);
  doc["provenance"] = {{"feeder_hash", provenance.feeder_hash},
                       {"stats_window", provenance.stats_window}};
  return doc.dump(2) + "\n";
}

}  // namespace gridtrip
