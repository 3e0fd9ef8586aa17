#include "gridtrip/mitigate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <utility>

#include "gridtrip/rng.hpp"
#include "gridtrip/text.hpp"

namespace gridtrip {

void MitigationConfig::validate() const {
  band.validate();
  if (!(v0_initial > 0.0)) {
    throw InputError(ErrorCode::InvalidArgument, "initial v0 must be positive");
  }
  if (!(rate_min <= 0.0) || !(rate_max >= 0.0)) {
    throw InputError(ErrorCode::InvalidArgument,
                     "rate band must satisfy rate_min <= 0 <= rate_max");
  }
  if (grid_points < 1) {
    throw InputError(ErrorCode::InvalidArgument, "grid needs at least one point");
  }
}

RiskAssessment quantify_risk(const TrippingModelParams& params,
                             const Eigen::VectorXd& mean_p,
                             int multistart,
                             std::uint64_t seed,
                             const SolverOptions& options) {
  if (multistart < 1) {
    throw InputError(ErrorCode::InvalidArgument, "multistart must be at least 1");
  }
  if (mean_p.size() != params.a0.size()) {
    throw InputError(ErrorCode::DimensionMismatch, "mean power vector has wrong size");
  }
  const int n = params.node_count();

  // Deterministic start list: the all-ones state first, then seeded uniform
  // starts. Among converged equilibria the first strict maximum of the
  // expected delivered power wins, so results are reproducible bit-for-bit.
  std::mt19937_64 gen(seed);
  RiskAssessment best;
  bool have_best = false;
  for (int start = 0; start < multistart; ++start) {
    MicroState init = ones_state(params);
    if (start > 0) {
      for (int i = 0; i < n; ++i) {
        if (params.switched_mask[i]) init.lambda(i) = uniform01(gen);
      }
    }
    FixedPointResult solve = solve_fixed_point(params, init, options);
    if (!solve.converged) continue;
    const double objective = mean_p.dot(solve.micro.lambda);
    if (!have_best || objective > best.objective) {
      best.micro = solve.micro;
      best.objective = objective;
      best.solve = std::move(solve);
      have_best = true;
    }
    ++best.converged_starts;
  }
  if (!have_best) {
    throw ConvergenceError(ErrorCode::NoEquilibrium,
                           "no equilibrium found in " + std::to_string(multistart) +
                               " starts (max_iter " + std::to_string(options.max_iter) + ")");
  }
  return best;
}

CountermeasureResult design_countermeasure(const PowerStatistics& stats,
                                           const SensitivityMatrices& sens,
                                           const MitigationConfig& config,
                                           const std::vector<bool>& switched_mask,
                                           const SolverOptions& options) {
  config.validate();
  const double lo = std::max(config.band.v_min, config.v0_initial + config.rate_min);
  const double hi = std::min(config.band.v_max, config.v0_initial + config.rate_max);
  if (lo > hi) {
    throw InfeasibleError(
        ErrorCode::EmptyFeasibleSet,
        "reference-voltage interval is empty: band [" + format_value(config.band.v_min) +
            ", " + format_value(config.band.v_max) + "] does not intersect [" +
            format_value(config.v0_initial + config.rate_min) + ", " +
            format_value(config.v0_initial + config.rate_max) + "]");
  }

  const ModelBuilder builder(stats, sens, config.band, switched_mask);
  CountermeasureResult result;
  result.grid.reserve(config.grid_points);
  bool have_best = false;
  int converged_points = 0;
  for (int g = 0; g < config.grid_points; ++g) {
    const double v0 = config.grid_points == 1
                          ? lo
                          : lo + (hi - lo) * static_cast<double>(g) /
                                     static_cast<double>(config.grid_points - 1);
    GridPointRecord record;
    record.v0 = v0;
    const TrippingModelParams params = builder.params(v0);
    const FixedPointResult solve = solve_fixed_point(params, ones_state(params), options);
    record.converged = solve.converged;
    if (solve.converged) {
      ++converged_points;
      record.objective = stats.mean_p.dot(solve.micro.lambda);
      const Eigen::VectorXd mu = voltage_mean(solve.micro.lambda, stats, sens, v0);
      double worst = 0.0;
      for (Eigen::Index i = 0; i < mu.size(); ++i) {
        worst = std::max({worst, config.band.v_min - mu(i), mu(i) - config.band.v_max});
      }
      record.worst_violation = worst;
      record.feasible = worst <= 0.0;
      // Ascending grid + strict improvement = smallest v0 wins exact ties.
      if (record.feasible && (!have_best || record.objective > result.objective)) {
        result.v0_star = v0;
        result.micro = solve.micro;
        result.mu_v = mu;
        result.objective = record.objective;
        have_best = true;
      }
    }
    result.grid.push_back(record);
  }
  if (!have_best) {
    std::ostringstream message;
    message << "no feasible reference voltage among " << config.grid_points
            << " grid points in [" << format_value(lo) << ", " << format_value(hi)
            << "]; " << converged_points << " converged";
    double least_violation = std::numeric_limits<double>::infinity();
    double at_v0 = lo;
    for (const auto& record : result.grid) {
      if (record.converged && record.worst_violation < least_violation) {
        least_violation = record.worst_violation;
        at_v0 = record.v0;
      }
    }
    if (converged_points > 0) {
      message << "; smallest band violation " << format_value(least_violation) << " at v0 "
              << format_value(at_v0);
    }
    throw InfeasibleError(ErrorCode::EmptyFeasibleSet, message.str());
  }
  return result;
}

CountermeasureResult design_countermeasure(const FeederModel& feeder,
                                           const PowerStatistics& stats,
                                           const MitigationConfig& config,
                                           const SolverOptions& options) {
  return design_countermeasure(stats, path_impedances(feeder), config,
                               feeder.switched_mask(), options);
}

RelaxationSlacks RelaxationSlacks::uniform(int nodes, double plus, double minus) {
  return RelaxationSlacks{Eigen::VectorXd::Constant(nodes, plus),
                          Eigen::VectorXd::Constant(nodes, minus)};
}

RelaxationCertificate certify_relaxation(const TrippingModelParams& params,
                                         const MicroState& micro,
                                         const Eigen::MatrixXd& Lambda,
                                         const RelaxationSlacks& slacks,
                                         double feasibility_tol) {
  const int n = params.node_count();
  if (micro.lambda.size() != n || Lambda.rows() != n || Lambda.cols() != n ||
      slacks.eps_plus.size() != n || slacks.eps_minus.size() != n) {
    throw InputError(ErrorCode::DimensionMismatch, "certificate inputs disagree on size");
  }
  if ((slacks.eps_plus.array() < 0.0).any() || (slacks.eps_minus.array() > 0.0).any()) {
    throw InputError(ErrorCode::InvalidArgument,
                     "slacks need eps_plus >= 0 and eps_minus <= 0");
  }

  RelaxationCertificate cert;
  cert.Lambda = Lambda;
  cert.eps_plus = slacks.eps_plus;
  cert.eps_minus = slacks.eps_minus;

  // base_i = a0_i + ((B - I) lambda)_i + <C_i, Lambda>, the bilinear map with
  // the quadratic term lifted onto Lambda.
  Eigen::VectorXd base = params.a0 + params.B * micro.lambda - micro.lambda;
  for (int i = 0; i < n; ++i) {
    base(i) += params.C[i].cwiseProduct(Lambda).sum();
  }
  cert.upper_residual = base - slacks.eps_plus;
  cert.lower_residual = -base + slacks.eps_minus;

  cert.parabolic_diff_residual.resize(n, n);
  cert.parabolic_sum_residual.resize(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double li = micro.lambda(i);
      const double lj = micro.lambda(j);
      const double diff = li - lj;
      const double sum = li + lj;
      cert.parabolic_diff_residual(i, j) =
          diff * diff - (Lambda(i, i) + Lambda(j, j) - 2.0 * Lambda(i, j));
      cert.parabolic_sum_residual(i, j) =
          sum * sum - (Lambda(i, i) + Lambda(j, j) + 2.0 * Lambda(i, j));
    }
  }
  cert.max_residual = std::max({cert.upper_residual.maxCoeff(),
                                cert.lower_residual.maxCoeff(),
                                cert.parabolic_diff_residual.maxCoeff(),
                                cert.parabolic_sum_residual.maxCoeff()});
  cert.feasible = cert.max_residual <= feasibility_tol;
  return cert;
}

}  // namespace gridtrip
