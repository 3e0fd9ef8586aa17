#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "gridtrip/feeder.hpp"
#include "gridtrip/power_stats.hpp"
#include "gridtrip/trip_model.hpp"

namespace gridtrip {

// Knobs for the reference-voltage countermeasure search.
struct MitigationConfig {
  double v0_initial = 1.0;  // squared pu operating point before mitigation
  double rate_min = -0.1;   // largest allowed decrease of v0 (<= 0), squared pu
  double rate_max = 0.1;    // largest allowed increase of v0 (>= 0), squared pu
  int grid_points = 401;    // candidate v0 values across the feasible interval
  VoltageBand band;

  void validate() const;  // InputError(InvalidArgument) on a bad range
};

struct RiskAssessment {
  MicroState micro;          // equilibrium maximizing expected delivered power
  double objective = 0.0;    // mean_p' * lambda
  int converged_starts = 0;  // multistart solves that converged
  FixedPointResult solve;    // full result backing `micro`
};

// Solves the bound system from the all-ones start plus (multistart - 1)
// seeded random starts and keeps the converged equilibrium with the largest
// expected delivered power mean_p' * lambda. Throws
// ConvergenceError(NoEquilibrium) when no start converges.
[[nodiscard]] RiskAssessment quantify_risk(const TrippingModelParams& params,
                                           const Eigen::VectorXd& mean_p,
                                           int multistart,
                                           std::uint64_t seed,
                                           const SolverOptions& options = {});

// One candidate reference voltage examined by design_countermeasure.
struct GridPointRecord {
  double v0 = 0.0;
  bool converged = false;
  bool feasible = false;          // all equilibrium voltage means inside band
  double objective = 0.0;         // mean_p' * lambda when converged
  double worst_violation = 0.0;   // largest distance of a voltage mean outside band
};

struct CountermeasureResult {
  double v0_star = 0.0;
  MicroState micro;        // equilibrium at v0_star
  Eigen::VectorXd mu_v;    // voltage means at v0_star
  double objective = 0.0;
  std::vector<GridPointRecord> grid;
};

// Grid search over reference voltages inside
//   [v_min, v_max] intersect [v0_initial + rate_min, v0_initial + rate_max]
// maximizing expected delivered power subject to every equilibrium voltage
// mean staying inside the band. Ties prefer the smallest v0. Throws
// InfeasibleError(EmptyFeasibleSet) when the interval is empty or every grid
// point is infeasible (message summarizes per-point violations).
[[nodiscard]] CountermeasureResult design_countermeasure(const FeederModel& feeder,
                                                         const PowerStatistics& stats,
                                                         const MitigationConfig& config,
                                                         const SolverOptions& options = {});
[[nodiscard]] CountermeasureResult design_countermeasure(const PowerStatistics& stats,
                                                         const SensitivityMatrices& sens,
                                                         const MitigationConfig& config,
                                                         const std::vector<bool>& switched_mask,
                                                         const SolverOptions& options = {});

// Slack variables for the inequality relaxation of the bound system.
struct RelaxationSlacks {
  Eigen::VectorXd eps_plus;   // >= 0, upper family
  Eigen::VectorXd eps_minus;  // <= 0, lower family

  static RelaxationSlacks uniform(int nodes, double plus = 1e-6, double minus = -1e-6);
};

// Feasibility check of a candidate (lambda, Lambda) pair for the lifted
// relaxation, where Lambda stands in for the rank-one product lambda*lambda'.
// Residuals are positive where a constraint is violated.
struct RelaxationCertificate {
  Eigen::MatrixXd Lambda;
  Eigen::VectorXd eps_plus;
  Eigen::VectorXd eps_minus;
  Eigen::VectorXd upper_residual;            // a0 + (B - I) lambda + [C_i . Lambda] - eps_plus
  Eigen::VectorXd lower_residual;            // -(a0 + (B - I) lambda + [C_i . Lambda]) + eps_minus
  Eigen::MatrixXd parabolic_diff_residual;   // (lambda_i - lambda_j)^2 - (Lambda_ii + Lambda_jj - 2 Lambda_ij)
  Eigen::MatrixXd parabolic_sum_residual;    // (lambda_i + lambda_j)^2 - (Lambda_ii + Lambda_jj + 2 Lambda_ij)
  double max_residual = 0.0;
  bool feasible = false;
};

[[nodiscard]] RelaxationCertificate certify_relaxation(const TrippingModelParams& params,
                                                       const MicroState& micro,
                                                       const Eigen::MatrixXd& Lambda,
                                                       const RelaxationSlacks& slacks,
                                                       double feasibility_tol = 1e-10);

}  // namespace gridtrip
