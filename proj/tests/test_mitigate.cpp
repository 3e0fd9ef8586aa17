#include <doctest.h>

#include <Eigen/Core>

#include <cmath>
#include <random>
#include <vector>

#include "gridtrip/errors.hpp"
#include "gridtrip/feeder.hpp"
#include "gridtrip/mitigate.hpp"
#include "gridtrip/power_stats.hpp"
#include "gridtrip/trip_model.hpp"
#include "support/fixtures.hpp"

using namespace gridtrip;

namespace {

TrippingModelParams scalar_params(double a0, double b) {
  TrippingModelParams params;
  params.a0 = Eigen::VectorXd::Constant(1, a0);
  params.B = Eigen::MatrixXd::Constant(1, 1, b);
  params.C = {Eigen::MatrixXd::Zero(1, 1)};
  params.switched_mask = {true};
  return params;
}

PowerStatistics constant_mean_stats(int n, double mean_p) {
  PowerStatistics stats;
  stats.mean_p = Eigen::VectorXd::Constant(n, mean_p);
  stats.mean_q = Eigen::VectorXd::Zero(n);
  stats.var_p = Eigen::VectorXd::Zero(n);
  stats.var_q = Eigen::VectorXd::Zero(n);
  stats.p_plus = mean_p >= 0.0 ? Eigen::VectorXd::Constant(n, mean_p * mean_p)
                               : Eigen::VectorXd::Zero(n);
  stats.p_minus = mean_p >= 0.0 ? Eigen::VectorXd::Zero(n)
                                : Eigen::VectorXd::Constant(n, mean_p * mean_p);
  stats.q_plus = Eigen::VectorXd::Zero(n);
  stats.q_minus = Eigen::VectorXd::Zero(n);
  stats.cov_pq_self = Eigen::VectorXd::Zero(n);
  stats.cov_pp = Eigen::MatrixXd::Zero(n, n);
  stats.cov_pq = Eigen::MatrixXd::Zero(n, n);
  stats.cov_qp = Eigen::MatrixXd::Zero(n, n);
  stats.cov_qq = Eigen::MatrixXd::Zero(n, n);
  return stats;
}

}  // namespace

TEST_CASE("risk assessment matches the scalar closed form") {
  const TrippingModelParams params = scalar_params(0.9975, -0.1);
  const Eigen::VectorXd mean_p = Eigen::VectorXd::Constant(1, 0.5);

  SolverOptions options;
  options.tol = 1e-13;
  const RiskAssessment risk = quantify_risk(params, mean_p, 4, 1, options);

  CHECK(std::abs(risk.micro.lambda(0) - 0.9975 / 1.1) <= 1e-12);
  CHECK(std::abs(risk.objective - 0.5 * 0.9975 / 1.1) <= 1e-12);
  CHECK(risk.converged_starts == 4);
  CHECK(risk.solve.converged);

  SUBCASE("multistart count does not move a unique equilibrium") {
    const RiskAssessment single = quantify_risk(params, mean_p, 1, 1, options);
    CHECK(std::abs(single.micro.lambda(0) - risk.micro.lambda(0)) <= 1e-10);
  }
  SUBCASE("repeat runs are bit-identical") {
    const RiskAssessment again = quantify_risk(params, mean_p, 4, 1, options);
    CHECK(again.objective == risk.objective);
    CHECK(again.micro.lambda(0) == risk.micro.lambda(0));
  }
  SUBCASE("input validation") {
    CHECK_THROWS_AS(quantify_risk(params, mean_p, 0, 1), InputError);
    CHECK_THROWS_AS(quantify_risk(params, Eigen::VectorXd::Zero(2), 1, 1), InputError);
  }
}

TEST_CASE("assessment without any equilibrium is a convergence error") {
  // F(lambda) = 1.5 - 3 lambda flips between the clip rails; undamped sweeps
  // can never settle.
  const TrippingModelParams params = scalar_params(1.5, -3.0);
  SolverOptions options;
  options.damping = 1.0;
  options.max_iter = 50;
  try {
    (void)quantify_risk(params, Eigen::VectorXd::Ones(1), 3, 7, options);
    FAIL("expected a convergence error");
  } catch (const ConvergenceError& e) {
    CHECK(e.code() == ErrorCode::NoEquilibrium);
  }
}

TEST_CASE("mitigation config validation") {
  MitigationConfig config;
  config.band = VoltageBand{0.81, 1.21};
  config.validate();

  MitigationConfig bad = config;
  bad.v0_initial = 0.0;
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad = config;
  bad.rate_min = 0.05;
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad = config;
  bad.rate_max = -0.05;
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad = config;
  bad.grid_points = 0;
  CHECK_THROWS_AS(bad.validate(), InputError);
}

TEST_CASE("ties in the curtailment objective resolve to the smallest setpoint") {
  // No injections at all: every grid point is feasible and the objective is
  // identically zero, so the first (smallest) setpoint must win.
  const PowerStatistics stats = constant_mean_stats(2, 0.0);
  SensitivityMatrices sens;
  sens.R = Eigen::MatrixXd::Constant(2, 2, 0.1);
  sens.X = Eigen::MatrixXd::Constant(2, 2, 0.2);

  MitigationConfig config;
  config.band = VoltageBand{0.81, 1.21};
  config.v0_initial = 1.0;
  config.rate_min = -0.05;
  config.rate_max = 0.05;
  config.grid_points = 11;

  const double floor = std::max(config.band.v_min, config.v0_initial + config.rate_min);
  const CountermeasureResult result =
      design_countermeasure(stats, sens, config, {true, true}, {});
  CHECK(result.v0_star == floor);
  CHECK(result.objective == 0.0);
  REQUIRE(result.grid.size() == 11);
  for (const auto& record : result.grid) {
    CHECK(record.converged);
    CHECK(record.feasible);
    CHECK(record.worst_violation <= 0.0);
  }
  CHECK(result.grid.front().v0 == floor);
  CHECK(std::abs(result.grid.back().v0 - 1.05) <= 1e-12);
  CHECK((result.mu_v.array() == floor).all());

  SUBCASE("a single grid point sits at the interval floor") {
    MitigationConfig point = config;
    point.grid_points = 1;
    const CountermeasureResult one =
        design_countermeasure(stats, sens, point, {true, true}, {});
    REQUIRE(one.grid.size() == 1);
    CHECK(one.v0_star == floor);
  }
}

TEST_CASE("setpoint designs maximize delivered power over the feasible grid") {
  std::mt19937_64 rng(17);
  int successes = 0;
  for (int trial = 0; trial < 12; ++trial) {
    const FeederModel feeder = testfix::random_feeder(rng);
    const int n = feeder.node_count();
    const SensitivityMatrices sens = path_impedances(feeder);
    const PowerStatistics stats = testfix::random_statistics(rng, n, 0.3);

    MitigationConfig config;
    config.band = feeder.band();
    config.v0_initial = feeder.reference_v0();
    config.rate_min = -0.06;
    config.rate_max = 0.06;
    config.grid_points = 41;

    CountermeasureResult result;
    try {
      result = design_countermeasure(stats, sens, config, feeder.switched_mask(), {});
    } catch (const InfeasibleError&) {
      continue;
    } catch (const ConvergenceError&) {
      continue;
    }
    ++successes;

    REQUIRE(result.grid.size() == 41);
    const double lo = std::max(config.band.v_min, config.v0_initial + config.rate_min);
    const double hi = std::min(config.band.v_max, config.v0_initial + config.rate_max);
    CHECK(result.v0_star >= lo);
    CHECK(result.v0_star <= hi);
    for (std::size_t g = 1; g < result.grid.size(); ++g) {
      CHECK(result.grid[g].v0 > result.grid[g - 1].v0);
    }

    // The winner is the first feasible point attaining the best objective.
    bool seen_star = false;
    for (const auto& record : result.grid) {
      if (record.converged && record.feasible) {
        CHECK(record.objective <= result.objective);
        if (!seen_star && record.objective == result.objective) {
          CHECK(record.v0 == result.v0_star);
          seen_star = true;
        }
      }
    }
    CHECK(seen_star);

    // Feasibility means the predicted voltage profile sits inside the band.
    CHECK((result.mu_v.array() >= config.band.v_min - 1e-12).all());
    CHECK((result.mu_v.array() <= config.band.v_max + 1e-12).all());
    result.micro.validate();
    CHECK(std::abs(result.objective - stats.mean_p.dot(result.micro.lambda)) == 0.0);
  }
  CHECK(successes > 0);
}

TEST_CASE("an empty setpoint interval is reported as infeasible") {
  const PowerStatistics stats = constant_mean_stats(1, 0.0);
  SensitivityMatrices sens;
  sens.R = Eigen::MatrixXd::Constant(1, 1, 0.2);
  sens.X = Eigen::MatrixXd::Constant(1, 1, 0.4);

  MitigationConfig config;
  config.band = VoltageBand{0.81, 1.21};
  config.v0_initial = 1.5;  // ramp limits keep the band out of reach
  config.rate_min = -0.1;
  config.rate_max = 0.1;

  try {
    (void)design_countermeasure(stats, sens, config, {true}, {});
    FAIL("expected an infeasibility error");
  } catch (const InfeasibleError& e) {
    CHECK(e.code() == ErrorCode::EmptyFeasibleSet);
    CHECK(std::string(e.what()).find("interval is empty") != std::string::npos);
  }
}

TEST_CASE("a fixed load no setpoint can cover is reported as infeasible") {
  // One non-switched node drawing far more than the band tolerates: every
  // grid point converges (nothing to solve) yet violates the band.
  const PowerStatistics stats = constant_mean_stats(1, -5.0);
  SensitivityMatrices sens;
  sens.R = Eigen::MatrixXd::Constant(1, 1, 0.2);
  sens.X = Eigen::MatrixXd::Constant(1, 1, 0.4);

  MitigationConfig config;
  config.band = VoltageBand{0.81, 1.21};
  config.v0_initial = 1.0;
  config.rate_min = -0.1;
  config.rate_max = 0.1;
  config.grid_points = 11;

  try {
    (void)design_countermeasure(stats, sens, config, {false}, {});
    FAIL("expected an infeasibility error");
  } catch (const InfeasibleError& e) {
    CHECK(e.code() == ErrorCode::EmptyFeasibleSet);
    const std::string message = e.what();
    CHECK(message.find("no feasible reference voltage") != std::string::npos);
    CHECK(message.find("smallest band violation") != std::string::npos);
  }
}

TEST_CASE("lifting the equilibrium onto the pair matrix satisfies the relaxation") {
  SUBCASE("two-node interior equilibrium") {
    TrippingModelParams params;
    params.a0 = Eigen::VectorXd::Constant(2, 0.9);
    params.B = -0.05 * Eigen::MatrixXd::Identity(2, 2);
    params.C = {Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 2)};
    params.switched_mask = {true, true};

    SolverOptions options;
    options.tol = 1e-14;
    const FixedPointResult solve = solve_fixed_point(params, ones_state(params), options);
    REQUIRE(solve.converged);
    REQUIRE(solve.residual_raw <= 1e-13);

    const Eigen::MatrixXd lift = solve.micro.lambda * solve.micro.lambda.transpose();
    const RelaxationCertificate cert = certify_relaxation(
        params, solve.micro, lift, RelaxationSlacks::uniform(2, 0.0, 0.0));
    CHECK(cert.feasible);
    CHECK(cert.max_residual <= 1e-10);
    CHECK(cert.parabolic_diff_residual.cwiseAbs().maxCoeff() <= 1e-14);
    CHECK(cert.parabolic_sum_residual.cwiseAbs().maxCoeff() <= 1e-14);

    SUBCASE("default slacks widen the corridor") {
      const RelaxationCertificate wide = certify_relaxation(
          params, solve.micro, lift, RelaxationSlacks::uniform(2, 1e-6, -1e-6));
      CHECK(wide.feasible);
    }
    SUBCASE("a perturbed pair matrix breaks the parabolic cuts") {
      Eigen::MatrixXd off = lift;
      off(0, 1) += 1e-3;
      const RelaxationCertificate broken = certify_relaxation(
          params, solve.micro, off, RelaxationSlacks::uniform(2, 1e-6, -1e-6));
      CHECK_FALSE(broken.feasible);
      CHECK(broken.max_residual >= 1e-3);
    }
  }

  SUBCASE("random all-switched instances") {
    std::mt19937_64 rng(404);
    int certified = 0;
    for (int trial = 0; trial < 20; ++trial) {
      testfix::RandomFeederOptions shape;
      shape.switched_fraction = 1.0;
      const FeederModel feeder = testfix::random_feeder(rng, shape);
      const int n = feeder.node_count();
      const SensitivityMatrices sens = path_impedances(feeder);
      const PowerStatistics stats = testfix::random_statistics(rng, n, 0.25);
      const TrippingModelParams params = build_params(
          stats, sens, feeder.band(), feeder.reference_v0(), feeder.switched_mask());

      SolverOptions options;
      options.tol = 1e-13;
      const FixedPointResult solve =
          solve_fixed_point(params, ones_state(params), options);
      // Only an equilibrium the clipping never touches equates the lifted
      // system exactly.
      if (!solve.converged || solve.residual_raw > 1e-12) continue;

      const Eigen::MatrixXd lift = solve.micro.lambda * solve.micro.lambda.transpose();
      const RelaxationCertificate cert = certify_relaxation(
          params, solve.micro, lift, RelaxationSlacks::uniform(n, 0.0, 0.0));
      CHECK(cert.feasible);
      CHECK(cert.max_residual <= 1e-10);
      ++certified;
    }
    CHECK(certified > 0);
  }

  SUBCASE("slack validation") {
    const TrippingModelParams params = scalar_params(0.9, -0.1);
    const MicroState micro{Eigen::VectorXd::Constant(1, 0.8), MicroStateKind::ModelBound};
    const Eigen::MatrixXd lift = Eigen::MatrixXd::Constant(1, 1, 0.64);
    CHECK_THROWS_AS(
        certify_relaxation(params, micro, lift, RelaxationSlacks::uniform(1, -1e-6, 0.0)),
        InputError);
    CHECK_THROWS_AS(
        certify_relaxation(params, micro, lift, RelaxationSlacks::uniform(1, 0.0, 1e-6)),
        InputError);
    CHECK_THROWS_AS(
        certify_relaxation(params, micro, Eigen::MatrixXd::Zero(2, 2),
                           RelaxationSlacks::uniform(1, 0.0, 0.0)),
        InputError);
  }
}
