#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gridtrip/errors.hpp"
#include "gridtrip/feeder.hpp"

namespace gridtrip {

// Nodal active/reactive power series. Rows are time steps, columns follow
// node_ids. Power is injection-positive: generation > 0, consumption < 0.
struct TimeSeries {
  std::vector<double> times;
  std::vector<std::string> node_ids;
  Eigen::MatrixXd p;  // steps x nodes, per-unit
  Eigen::MatrixXd q;

  [[nodiscard]] int step_count() const { return static_cast<int>(times.size()); }
  [[nodiscard]] int node_count() const { return static_cast<int>(node_ids.size()); }
};

// Parses delimited text with header time,node_id,p_pu,q_pu (one row per node
// per timestamp). Requires every timestamp to carry every node exactly once
// and timestamps to increase strictly.
[[nodiscard]] TimeSeries parse_series(const std::filesystem::path& path);
[[nodiscard]] TimeSeries parse_series_text(std::string_view text,
                                           std::string_view origin = "<inline>");

// Reorders columns to match node_order; throws InputError(MismatchedSeries)
// unless the series holds exactly that node set.
[[nodiscard]] TimeSeries align_series(const TimeSeries& series,
                                      const std::vector<std::string>& node_order);

// Contiguous window [begin, begin + count) of a series.
[[nodiscard]] TimeSeries slice_series(const TimeSeries& series, int begin, int count);

// Second-order description of nodal power over one estimation window.
// p_plus/p_minus split the second moment by sign of the sample:
// p_plus = mean of p^2 over samples with p >= 0 (zeros elsewhere), so
// p_plus + p_minus == var_p + mean_p^2 up to rounding.
struct PowerStatistics {
  std::vector<std::string> node_ids;  // may be empty for synthetic inputs
  Eigen::VectorXd mean_p;
  Eigen::VectorXd mean_q;
  Eigen::VectorXd var_p;
  Eigen::VectorXd var_q;
  Eigen::VectorXd p_plus;
  Eigen::VectorXd p_minus;
  Eigen::VectorXd q_plus;
  Eigen::VectorXd q_minus;
  Eigen::VectorXd cov_pq_self;  // cov(p_j, q_j) per node
  Eigen::MatrixXd cov_pp;       // cross-node covariances, diagonals match var
  Eigen::MatrixXd cov_pq;       // cov(p_j, q_k)
  Eigen::MatrixXd cov_qp;       // cov(q_j, p_k) == cov_pq transposed
  Eigen::MatrixXd cov_qq;

  [[nodiscard]] int node_count() const { return static_cast<int>(mean_p.size()); }

  // Checks symmetry, transpose pairing, nonnegative variances, the sign-split
  // identity, and positive-semidefinite per-node 2x2 self blocks.
  void validate() const;
};

// Population moments (1/T normalization) over all rows of p and q.
// Requires at least 2 rows.
[[nodiscard]] PowerStatistics estimate_statistics(
    const Eigen::Ref<const Eigen::MatrixXd>& p,
    const Eigen::Ref<const Eigen::MatrixXd>& q,
    std::vector<std::string> node_ids = {});
[[nodiscard]] PowerStatistics estimate_statistics(const TimeSeries& series);
[[nodiscard]] PowerStatistics estimate_statistics(const TimeSeries& series,
                                                  int begin, int count);

enum class ResourceKind {
  ZipLoad,        // polynomial load model; voltage moves its active power
  DroopInverter,  // volt-var droop; voltage moves its reactive power
};

// First-order voltage dependence of a resource, used to shift mean injections
// when the operating voltage differs from nominal. Voltages are squared pu.
struct VoltageDependentResource {
  std::string node_id;
  ResourceKind kind = ResourceKind::DroopInverter;
  double zip_b = 0.0;     // ZIP current-term coefficient
  double zip_c = 0.0;     // ZIP impedance-term coefficient
  double droop_k = 0.0;   // droop slope, negative (absorbs var above nominal)
  double v_nominal = 1.0; // squared pu voltage the stats were estimated at
  double v_eval = 1.0;    // squared pu voltage to evaluate at

  // Throws InputError unless v_nominal > 0, v_eval lies inside band, and a
  // droop slope is negative.
  void validate(const VoltageBand& band) const;
};

// Returns a copy of stats with mean injections shifted to v_eval:
//   zip-load:       mean_p += (zip_b + 2*zip_c) / (2*v_nominal) * (v_eval - v_nominal) * mean_p
//   droop-inverter: mean_q += droop_k * (v_eval - v_nominal)
// Second moments are left untouched. Throws InputError(UnknownNode) when a
// resource names a node absent from stats.node_ids.
[[nodiscard]] PowerStatistics surrogate_injections(
    const std::vector<VoltageDependentResource>& resources,
    const PowerStatistics& stats,
    const VoltageBand& band);

// Parses a JSON list of resources (fields: node, kind, b, c, k, v_nominal,
// v_eval; kind is "zip-load" or "droop-inverter").
[[nodiscard]] std::vector<VoltageDependentResource> parse_resources(
    const std::filesystem::path& path);

// Structured-text (JSON) mirror of every PowerStatistics field.
[[nodiscard]] std::string statistics_to_json(const PowerStatistics& stats);

}  // namespace gridtrip
