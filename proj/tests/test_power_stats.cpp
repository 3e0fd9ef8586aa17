#include <doctest.h>

#include <Eigen/Dense>

#include <random>
#include <string>

#include "gridtrip/power_stats.hpp"
#include "support/fixtures.hpp"

using namespace gridtrip;

namespace {

const char* kSeriesText =
    "time,node_id,p_pu,q_pu\n"
    "0,a,1.0,0.5\n"
    "0,b,-0.5,0.0\n"
    "1,a,-1.0,0.5\n"
    "1,b,0.5,-0.2\n";

}  // namespace

TEST_CASE("parses a well-formed series") {
  const auto series = parse_series_text(kSeriesText);
  REQUIRE(series.step_count() == 2);
  REQUIRE(series.node_count() == 2);
  CHECK(series.node_ids == std::vector<std::string>{"a", "b"});
  CHECK(series.times == std::vector<double>{0.0, 1.0});
  CHECK(series.p(0, 0) == 1.0);
  CHECK(series.p(1, 0) == -1.0);
  CHECK(series.q(1, 1) == -0.2);
}

TEST_CASE("series parsing rejects malformed input") {
  SUBCASE("wrong header") {
    CHECK_THROWS_AS(parse_series_text("time,node,p,q\n0,a,1,1\n"), InputError);
  }
  SUBCASE("missing node at a timestamp") {
    CHECK_THROWS_WITH_AS(
        parse_series_text("time,node_id,p_pu,q_pu\n0,a,1,0\n0,b,1,0\n1,a,1,0\n"),
        doctest::Contains("1 of 2"), InputError);
  }
  SUBCASE("duplicate node per timestamp") {
    CHECK_THROWS_AS(parse_series_text("time,node_id,p_pu,q_pu\n0,a,1,0\n0,a,2,0\n"),
                    InputError);
  }
  SUBCASE("non-increasing timestamps per node") {
    CHECK_THROWS_AS(
        parse_series_text("time,node_id,p_pu,q_pu\n1,a,1,0\n0,a,2,0\n"), InputError);
  }
  SUBCASE("non-numeric field") {
    CHECK_THROWS_AS(parse_series_text("time,node_id,p_pu,q_pu\n0,a,zap,0\n"), InputError);
  }
  SUBCASE("empty body") {
    CHECK_THROWS_AS(parse_series_text("time,node_id,p_pu,q_pu\n"), InputError);
  }
  SUBCASE("crlf line endings are accepted") {
    const auto series =
        parse_series_text("time,node_id,p_pu,q_pu\r\n0,a,1,0\r\n1,a,2,0\r\n");
    CHECK(series.step_count() == 2);
    CHECK(series.p(1, 0) == 2.0);
  }
}

TEST_CASE("align_series reorders columns") {
  const auto series = parse_series_text(kSeriesText);
  const auto aligned = align_series(series, {"b", "a"});
  CHECK(aligned.node_ids == std::vector<std::string>{"b", "a"});
  CHECK(aligned.p(0, 1) == 1.0);
  CHECK(aligned.p(0, 0) == -0.5);
  CHECK(aligned.q(1, 0) == -0.2);

  CHECK_THROWS_AS(align_series(series, {"a"}), InputError);
  CHECK_THROWS_AS(align_series(series, {"a", "ghost"}), InputError);
  CHECK_THROWS_AS(align_series(series, {"a", "b", "c"}), InputError);
}

TEST_CASE("slice_series takes a contiguous window") {
  const auto series = parse_series_text(kSeriesText);
  const auto window = slice_series(series, 1, 1);
  CHECK(window.step_count() == 1);
  CHECK(window.times == std::vector<double>{1.0});
  CHECK(window.p(0, 0) == -1.0);
  CHECK_THROWS_AS(slice_series(series, 1, 2), InputError);
  CHECK_THROWS_AS(slice_series(series, -1, 1), InputError);
}

TEST_CASE("two-sample moments match the hand calculation") {
  Eigen::MatrixXd p(2, 1);
  p << 1.0, -1.0;
  Eigen::MatrixXd q(2, 1);
  q << 0.5, 0.5;
  const auto stats = estimate_statistics(p, q);
  CHECK(stats.mean_p(0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(stats.var_p(0) == doctest::Approx(1.0).epsilon(1e-15));  // population 1/T
  CHECK(stats.p_plus(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(stats.p_minus(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(stats.mean_q(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(stats.var_q(0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(stats.q_plus(0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(stats.q_minus(0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(stats.cov_pq_self(0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_NOTHROW(stats.validate());
}

TEST_CASE("zero samples sit on the nonnegative side of the split") {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(3, 1);
  Eigen::MatrixXd q(3, 1);
  q << -1.0, 0.0, 1.0;
  const auto stats = estimate_statistics(p, q);
  CHECK(stats.p_plus(0) == 0.0);
  CHECK(stats.p_minus(0) == 0.0);
  CHECK(stats.q_plus(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(stats.q_minus(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("estimation needs at least two rows") {
  Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 2);
  CHECK_THROWS_AS(estimate_statistics(one, one), InputError);
  Eigen::MatrixXd p(2, 2), q(2, 3);
  p.setZero();
  q.setZero();
  CHECK_THROWS_AS(estimate_statistics(p, q), InputError);
}

TEST_CASE("estimated statistics satisfy every invariant") {
  std::mt19937_64 rng(333);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = uniform_int(rng, 1, 8);
    const auto stats = testfix::random_statistics(rng, n);
    CHECK_NOTHROW(stats.validate());

    for (int j = 0; j < n; ++j) {
      const double second = stats.var_p(j) + stats.mean_p(j) * stats.mean_p(j);
      CHECK(stats.p_plus(j) + stats.p_minus(j) == doctest::Approx(second).epsilon(1e-9));
      CHECK(stats.p_plus(j) >= 0.0);
      CHECK(stats.p_minus(j) >= 0.0);
    }
    CHECK((stats.cov_pq - stats.cov_qp.transpose()).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((stats.cov_pp - stats.cov_pp.transpose()).cwiseAbs().maxCoeff() <= 1e-15);

    // Full 2n x 2n second-moment matrix is positive semidefinite.
    Eigen::MatrixXd big(2 * n, 2 * n);
    big << stats.cov_pp, stats.cov_pq, stats.cov_qp, stats.cov_qq;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(big);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("validate rejects broken statistics") {
  std::mt19937_64 rng(11);
  auto stats = testfix::random_statistics(rng, 3);
  SUBCASE("negative variance") {
    stats.var_p(1) = -0.5;
    stats.cov_pp(1, 1) = -0.5;
    CHECK_THROWS_AS(stats.validate(), InputError);
  }
  SUBCASE("broken split identity") {
    stats.p_plus(0) += 0.1;
    CHECK_THROWS_AS(stats.validate(), InputError);
  }
  SUBCASE("asymmetric covariance") {
    stats.cov_pp(0, 1) += 0.2;
    CHECK_THROWS_AS(stats.validate(), InputError);
  }
  SUBCASE("cov_qp not the transpose of cov_pq") {
    stats.cov_qp(0, 1) += 0.2;
    CHECK_THROWS_AS(stats.validate(), InputError);
  }
  SUBCASE("dimension mismatch") {
    stats.mean_q.resize(2);
    CHECK_THROWS_AS(stats.validate(), InputError);
  }
}

TEST_CASE("voltage-dependent resources shift mean injections") {
  const VoltageBand band{0.81, 1.21};
  Eigen::MatrixXd p(2, 2), q(2, 2);
  p << 0.4, -0.3, 0.4, -0.3;
  q << 0.0, -0.1, 0.2, -0.1;
  auto stats = estimate_statistics(p, q, {"pv", "load"});

  SUBCASE("zip load active-power shift") {
    VoltageDependentResource zip;
    zip.node_id = "load";
    zip.kind = ResourceKind::ZipLoad;
    zip.zip_b = 0.6;
    zip.zip_c = 0.2;  // b + 2c = 1.0
    zip.v_nominal = 1.0;
    zip.v_eval = 1.1;
    const auto shifted = surrogate_injections({zip}, stats, band);
    // (b + 2c) / (2 v_nom) * dv * mean_p = 0.5 * 0.1 * (-0.3)
    CHECK(shifted.mean_p(1) == doctest::Approx(-0.3 - 0.015).epsilon(1e-12));
    CHECK(shifted.mean_p(0) == stats.mean_p(0));
    CHECK(shifted.mean_q(1) == stats.mean_q(1));
    CHECK_NOTHROW(shifted.validate());
  }
  SUBCASE("droop inverter reactive shift") {
    VoltageDependentResource droop;
    droop.node_id = "pv";
    droop.kind = ResourceKind::DroopInverter;
    droop.droop_k = -2.0;
    droop.v_nominal = 1.0;
    droop.v_eval = 1.05;
    const auto shifted = surrogate_injections({droop}, stats, band);
    CHECK(shifted.mean_q(0) == doctest::Approx(0.1 - 0.1).epsilon(1e-12));
    CHECK(shifted.mean_p(0) == stats.mean_p(0));
    CHECK_NOTHROW(shifted.validate());
  }
  SUBCASE("positive droop slope is rejected") {
    VoltageDependentResource droop;
    droop.node_id = "pv";
    droop.kind = ResourceKind::DroopInverter;
    droop.droop_k = 2.0;
    CHECK_THROWS_AS(surrogate_injections({droop}, stats, band), InputError);
  }
  SUBCASE("evaluation voltage outside the band is rejected") {
    VoltageDependentResource droop;
    droop.node_id = "pv";
    droop.kind = ResourceKind::DroopInverter;
    droop.droop_k = -1.0;
    droop.v_eval = 1.5;
    CHECK_THROWS_AS(surrogate_injections({droop}, stats, band), InputError);
  }
  SUBCASE("unknown node is rejected") {
    VoltageDependentResource droop;
    droop.node_id = "ghost";
    droop.kind = ResourceKind::DroopInverter;
    droop.droop_k = -1.0;
    CHECK_THROWS_AS(surrogate_injections({droop}, stats, band), InputError);
  }
}

TEST_CASE("statistics JSON round-trips the mean and variance") {
  std::mt19937_64 rng(5);
  const auto stats = testfix::random_statistics(rng, 2);
  const auto text = statistics_to_json(stats);
  CHECK(text.find("\"mean_p\"") != std::string::npos);
  CHECK(text.find("\"cov_qq\"") != std::string::npos);
  CHECK(text.back() == '\n');
}
