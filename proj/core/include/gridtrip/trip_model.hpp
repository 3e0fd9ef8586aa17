#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "gridtrip/errors.hpp"
#include "gridtrip/feeder.hpp"
#include "gridtrip/power_stats.hpp"

namespace gridtrip {

enum class MicroStateKind {
  ModelBound,  // per-node lower bounds on stay-connected probability
  Empirical,   // per-node ON frequencies measured from a simulation trace
};

// Per-node stay-connected probabilities lambda in [0,1].
struct MicroState {
  Eigen::VectorXd lambda;
  MicroStateKind kind = MicroStateKind::ModelBound;

  void validate() const;  // InputError(InvalidArgument) outside [0,1]
};

// Aggregate of a micro-state over the switched nodes.
struct MacroState {
  double s_hat = 0.0;      // expected number of connected switched nodes
  double s_percent = 0.0;  // 100 * s_hat / switched-count
};

// Mean of squared voltage at every node given stay-connected probabilities:
//   mu_v(i) = sum_j lambda_j * (R_ij * P_j + X_ij * Q_j) + v0
[[nodiscard]] Eigen::VectorXd voltage_mean(const Eigen::VectorXd& lambda,
                                           const PowerStatistics& stats,
                                           const SensitivityMatrices& sens,
                                           double v0);

// Variance of squared voltage under independent switching, accounting for
// power covariances within and across nodes. Tiny negative results from
// rounding are clamped to zero; materially negative values throw
// InputError(NegativeVariance).
[[nodiscard]] Eigen::VectorXd voltage_variance(const Eigen::VectorXd& lambda,
                                               const PowerStatistics& stats,
                                               const SensitivityMatrices& sens);

struct VoltageStatistics {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
};

[[nodiscard]] VoltageStatistics voltage_statistics(const Eigen::VectorXd& lambda,
                                                   const PowerStatistics& stats,
                                                   const SensitivityMatrices& sens,
                                                   double v0);

// One-sided concentration bound on Pr{v inside band} from mean and variance:
//   1 - (var + (mu - center)^2) / half_width^2
// chebyshev_raw returns the possibly-negative raw value; chebyshev_bound
// clips it to [0,1]. Requires var >= 0 and a valid band.
[[nodiscard]] double chebyshev_raw(double mean, double variance, const VoltageBand& band);
[[nodiscard]] double chebyshev_bound(double mean, double variance, const VoltageBand& band);

// Coefficients of the self-consistent bound system
//   lambda_i >= a0(i) + sum_j B(i,j) lambda_j + sum_{j != k} C_i(j,k) lambda_j lambda_k
// C_i matrices are symmetric with zero diagonal; rows exist for every node
// while non-switched nodes are treated as lambda == 1 by the solver.
struct TrippingModelParams {
  Eigen::VectorXd a0;
  Eigen::MatrixXd B;
  std::vector<Eigen::MatrixXd> C;
  std::vector<bool> switched_mask;

  [[nodiscard]] int node_count() const { return static_cast<int>(a0.size()); }
};

[[nodiscard]] TrippingModelParams build_params(const PowerStatistics& stats,
                                               const SensitivityMatrices& sens,
                                               const VoltageBand& band,
                                               double v0,
                                               const std::vector<bool>& switched_mask);

// Precomputes everything in build_params that does not depend on the
// reference voltage, so sweeps over v0 can rebuild a0 and B cheaply while
// sharing the C tensors.
class ModelBuilder {
 public:
  ModelBuilder(const PowerStatistics& stats,
               const SensitivityMatrices& sens,
               VoltageBand band,
               std::vector<bool> switched_mask);

  [[nodiscard]] TrippingModelParams params(double v0) const;
  [[nodiscard]] const VoltageBand& band() const { return band_; }

 private:
  VoltageBand band_;
  std::vector<bool> switched_mask_;
  Eigen::MatrixXd gamma1_;      // per-pair second-moment kernels
  Eigen::MatrixXd mean_drop_;   // R_ij P_j + X_ij Q_j
  std::vector<Eigen::MatrixXd> c_;
};

// Unclipped right-hand side F(lambda) = a0 + B*lambda + [lambda' C_i lambda].
[[nodiscard]] Eigen::VectorXd evaluate_map(const TrippingModelParams& params,
                                           const Eigen::VectorXd& lambda);

struct SolverOptions {
  double damping = 0.5;  // in (0, 1]
  double tol = 1e-9;     // max-norm residual on the clipped map
  int max_iter = 10000;
};

struct FixedPointResult {
  MicroState micro;
  double residual = 0.0;      // max |lambda - clip(F(lambda))| over switched nodes
  double residual_raw = 0.0;  // same without clipping the map
  int iterations = 0;
  bool converged = false;     // false results are best-effort iterates
};

// Damped fixed-point iteration lambda <- (1-d) lambda + d clip(F(lambda), 0, 1)
// with non-switched entries pinned to 1. Never throws on non-convergence;
// callers must check .converged.
[[nodiscard]] FixedPointResult solve_fixed_point(const TrippingModelParams& params,
                                                 const MicroState& init,
                                                 const SolverOptions& options = {});

// All-ones start respecting the pinned entries.
[[nodiscard]] MicroState ones_state(const TrippingModelParams& params);

// Sums lambda over switched nodes. Throws InputError(ZeroSwitchedNodes) when
// the mask has no switched node.
[[nodiscard]] MacroState macro_state(const MicroState& micro,
                                     const std::vector<bool>& switched_mask);

struct ModelProvenance {
  std::string feeder_hash;
  std::string stats_window;
};

// Structured-text (JSON) dump of a0, B, C and the switched mask.
[[nodiscard]] std::string model_to_json(const TrippingModelParams& params,
                                        const ModelProvenance& provenance);

}  // namespace gridtrip
