#include "gridtrip/power_stats.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <unordered_map>
#include <utility>

#include "gridtrip/text.hpp"

namespace gridtrip {

namespace {

using nlohmann::json;

constexpr double kMomentTol = 1e-9;  // slack for rounding in moment identities

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

double parse_double(std::string_view text, const std::string& where) {
  try {
    std::size_t used = 0;
    const std::string owned(text);
    const double value = std::stod(owned, &used);
    if (used != owned.size()) throw std::invalid_argument("trailing characters");
    return value;
  } catch (const std::exception&) {
    throw InputError(ErrorCode::ParseFailure,
                     where + ": not a number: \"" + std::string(text) + "\"");
  }
}

json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
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

TimeSeries parse_series(const std::filesystem::path& path) {
  return parse_series_text(read_file(path), path.string());
}

TimeSeries parse_series_text(std::string_view text, std::string_view origin) {
  const std::string where(origin);

  struct Sample {
    double p;
    double q;
  };
  std::vector<std::string> node_ids;
  std::unordered_map<std::string, int> node_index;
  std::vector<double> last_time;  // per node, for the monotonicity check
  // time -> node -> sample; std::map keeps the timeline sorted.
  std::map<double, std::unordered_map<int, Sample>> rows;

  std::size_t line_no = 0;
  std::size_t start = 0;
  bool saw_header = false;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      if (start > text.size()) break;
      continue;
    }
    const std::string at = where + ":" + std::to_string(line_no);
    if (!saw_header) {
      if (line != "time,node_id,p_pu,q_pu") {
        throw InputError(ErrorCode::ParseFailure,
                         at + ": expected header \"time,node_id,p_pu,q_pu\"");
      }
      saw_header = true;
      continue;
    }
    const auto fields = split_csv_line(line);
    if (fields.size() != 4) {
      throw InputError(ErrorCode::ParseFailure, at + ": expected 4 fields");
    }
    const double time = parse_double(fields[0], at);
    const std::string node(fields[1]);
    if (node.empty()) {
      throw InputError(ErrorCode::ParseFailure, at + ": empty node_id");
    }
    auto [it, inserted] = node_index.try_emplace(node, static_cast<int>(node_ids.size()));
    if (inserted) {
      node_ids.push_back(node);
      last_time.push_back(-std::numeric_limits<double>::infinity());
    }
    if (time <= last_time[it->second]) {
      throw InputError(ErrorCode::ParseFailure,
                       at + ": timestamps must increase strictly per node (node \"" +
                           node + "\")");
    }
    last_time[it->second] = time;
    auto& row = rows[time];
    if (!row.try_emplace(it->second,
                         Sample{parse_double(fields[2], at), parse_double(fields[3], at)})
             .second) {
      throw InputError(ErrorCode::MismatchedSeries,
                       at + ": duplicate sample for node \"" + node + "\"");
    }
  }
  if (!saw_header) {
    throw InputError(ErrorCode::ParseFailure, where + ": empty series");
  }
  if (rows.empty()) {
    throw InputError(ErrorCode::InsufficientSamples, where + ": no samples");
  }

  TimeSeries series;
  series.node_ids = node_ids;
  const int nodes = static_cast<int>(node_ids.size());
  const int steps = static_cast<int>(rows.size());
  series.times.reserve(steps);
  series.p.resize(steps, nodes);
  series.q.resize(steps, nodes);
  int t = 0;
  for (const auto& [time, row] : rows) {
    if (static_cast<int>(row.size()) != nodes) {
      throw InputError(ErrorCode::MismatchedSeries,
                       where + ": timestamp " + format_value(time) + " has " +
                           std::to_string(row.size()) + " of " + std::to_string(nodes) +
                           " nodes");
    }
    series.times.push_back(time);
    for (const auto& [node, sample] : row) {
      series.p(t, node) = sample.p;
      series.q(t, node) = sample.q;
    }
    ++t;
  }
  return series;
}

TimeSeries align_series(const TimeSeries& series, const std::vector<std::string>& node_order) {
  if (series.node_ids.size() != node_order.size()) {
    throw InputError(ErrorCode::MismatchedSeries,
                     "series has " + std::to_string(series.node_ids.size()) +
                         " nodes, expected " + std::to_string(node_order.size()));
  }
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < series.node_ids.size(); ++i) {
    index.emplace(series.node_ids[i], static_cast<int>(i));
  }
  TimeSeries aligned;
  aligned.times = series.times;
  aligned.node_ids = node_order;
  aligned.p.resize(series.p.rows(), series.p.cols());
  aligned.q.resize(series.q.rows(), series.q.cols());
  for (std::size_t j = 0; j < node_order.size(); ++j) {
    const auto it = index.find(node_order[j]);
    if (it == index.end()) {
      throw InputError(ErrorCode::MismatchedSeries,
                       "series is missing node \"" + node_order[j] + "\"");
    }
    aligned.p.col(static_cast<Eigen::Index>(j)) = series.p.col(it->second);
    aligned.q.col(static_cast<Eigen::Index>(j)) = series.q.col(it->second);
  }
  return aligned;
}

TimeSeries slice_series(const TimeSeries& series, int begin, int count) {
  if (begin < 0 || count < 1 || begin + count > series.step_count()) {
    throw InputError(ErrorCode::InvalidArgument,
                     "window [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside series of " +
                         std::to_string(series.step_count()) + " steps");
  }
  TimeSeries out;
  out.node_ids = series.node_ids;
  out.times.assign(series.times.begin() + begin, series.times.begin() + begin + count);
  out.p = series.p.middleRows(begin, count);
  out.q = series.q.middleRows(begin, count);
  return out;
}

void PowerStatistics::validate() const {
  const int n = node_count();
  const auto check_dim = [&](Eigen::Index size, const char* name) {
    if (size != n) {
      throw InputError(ErrorCode::DimensionMismatch,
                       std::string("statistics field ") + name + " has wrong size");
    }
  };
  check_dim(mean_q.size(), "mean_q");
  check_dim(var_p.size(), "var_p");
  check_dim(var_q.size(), "var_q");
  check_dim(p_plus.size(), "p_plus");
  check_dim(p_minus.size(), "p_minus");
  check_dim(q_plus.size(), "q_plus");
  check_dim(q_minus.size(), "q_minus");
  check_dim(cov_pq_self.size(), "cov_pq_self");
  if (cov_pp.rows() != n || cov_pp.cols() != n || cov_pq.rows() != n ||
      cov_pq.cols() != n || cov_qp.rows() != n || cov_qp.cols() != n ||
      cov_qq.rows() != n || cov_qq.cols() != n) {
    throw InputError(ErrorCode::DimensionMismatch, "covariance blocks have wrong shape");
  }
  if (!node_ids.empty() && static_cast<int>(node_ids.size()) != n) {
    throw InputError(ErrorCode::DimensionMismatch, "node_ids length mismatch");
  }

  const auto rel_tol = [](double a, double b) {
    return kMomentTol * std::max({1.0, std::abs(a), std::abs(b)});
  };
  for (int j = 0; j < n; ++j) {
    if (var_p(j) < -kMomentTol || var_q(j) < -kMomentTol || p_plus(j) < -kMomentTol ||
        p_minus(j) < -kMomentTol || q_plus(j) < -kMomentTol || q_minus(j) < -kMomentTol) {
      throw InputError(ErrorCode::NegativeVariance,
                       "negative second moment at node index " + std::to_string(j));
    }
    const double p2 = var_p(j) + mean_p(j) * mean_p(j);
    if (std::abs(p_plus(j) + p_minus(j) - p2) > rel_tol(p_plus(j) + p_minus(j), p2)) {
      throw InputError(ErrorCode::InvalidArgument,
                       "p_plus + p_minus must equal var_p + mean_p^2 at node index " +
                           std::to_string(j));
    }
    const double q2 = var_q(j) + mean_q(j) * mean_q(j);
    if (std::abs(q_plus(j) + q_minus(j) - q2) > rel_tol(q_plus(j) + q_minus(j), q2)) {
      throw InputError(ErrorCode::InvalidArgument,
                       "q_plus + q_minus must equal var_q + mean_q^2 at node index " +
                           std::to_string(j));
    }
    // Per-node [p q] covariance must be positive semidefinite.
    const double det = var_p(j) * var_q(j) - cov_pq_self(j) * cov_pq_self(j);
    if (det < -kMomentTol) {
      throw InputError(ErrorCode::InvalidArgument,
                       "indefinite p/q covariance at node index " + std::to_string(j));
    }
  }
  const double asym_pp = (cov_pp - cov_pp.transpose()).cwiseAbs().maxCoeff();
  const double asym_qq = (cov_qq - cov_qq.transpose()).cwiseAbs().maxCoeff();
  const double asym_x = (cov_qp - cov_pq.transpose()).cwiseAbs().maxCoeff();
  if (asym_pp > kMomentTol || asym_qq > kMomentTol || asym_x > kMomentTol) {
    throw InputError(ErrorCode::InvalidArgument,
                     "covariance blocks must satisfy cov_pp = cov_pp', cov_qq = cov_qq', "
                     "cov_qp = cov_pq'");
  }
}

PowerStatistics estimate_statistics(const Eigen::Ref<const Eigen::MatrixXd>& p,
                                    const Eigen::Ref<const Eigen::MatrixXd>& q,
                                    std::vector<std::string> node_ids) {
  if (p.rows() != q.rows() || p.cols() != q.cols()) {
    throw InputError(ErrorCode::DimensionMismatch, "p and q sample blocks disagree");
  }
  const int steps = static_cast<int>(p.rows());
  const int n = static_cast<int>(p.cols());
  if (steps < 2) {
    throw InputError(ErrorCode::InsufficientSamples,
                     "need at least 2 samples per node, got " + std::to_string(steps));
  }
  if (!node_ids.empty() && static_cast<int>(node_ids.size()) != n) {
    throw InputError(ErrorCode::DimensionMismatch, "node_ids length mismatch");
  }

  PowerStatistics stats;
  stats.node_ids = std::move(node_ids);
  const double inv_t = 1.0 / static_cast<double>(steps);
  stats.mean_p = p.colwise().mean();
  stats.mean_q = q.colwise().mean();

  // Population (1/T) central moments.
  const Eigen::MatrixXd dp = p.rowwise() - stats.mean_p.transpose();
  const Eigen::MatrixXd dq = q.rowwise() - stats.mean_q.transpose();
  stats.cov_pp = dp.transpose() * dp * inv_t;
  stats.cov_pq = dp.transpose() * dq * inv_t;
  stats.cov_qp = stats.cov_pq.transpose();
  stats.cov_qq = dq.transpose() * dq * inv_t;
  stats.var_p = stats.cov_pp.diagonal();
  stats.var_q = stats.cov_qq.diagonal();
  stats.cov_pq_self = stats.cov_pq.diagonal();

  // Sign-split second moments: mean of x^2 over samples on each side of zero
  // (zeros count to the plus side), so plus + minus recovers the full second
  // moment exactly.
  stats.p_plus = Eigen::VectorXd::Zero(n);
  stats.p_minus = Eigen::VectorXd::Zero(n);
  stats.q_plus = Eigen::VectorXd::Zero(n);
  stats.q_minus = Eigen::VectorXd::Zero(n);
  for (int j = 0; j < n; ++j) {
    for (int t = 0; t < steps; ++t) {
      const double pv = p(t, j);
      const double qv = q(t, j);
      (pv >= 0.0 ? stats.p_plus(j) : stats.p_minus(j)) += pv * pv;
      (qv >= 0.0 ? stats.q_plus(j) : stats.q_minus(j)) += qv * qv;
    }
    stats.p_plus(j) *= inv_t;
    stats.p_minus(j) *= inv_t;
    stats.q_plus(j) *= inv_t;
    stats.q_minus(j) *= inv_t;
  }
  return stats;
}

PowerStatistics estimate_statistics(const TimeSeries& series) {
  return estimate_statistics(series.p, series.q, series.node_ids);
}

PowerStatistics estimate_statistics(const TimeSeries& series, int begin, int count) {
  const TimeSeries window = slice_series(series, begin, count);
  return estimate_statistics(window.p, window.q, window.node_ids);
}

void VoltageDependentResource::validate(const VoltageBand& band) const {
  if (!(v_nominal > 0.0)) {
    throw InputError(ErrorCode::InvalidArgument,
                     "resource at \"" + node_id + "\": v_nominal must be positive");
  }
  if (!band.contains(v_eval)) {
    throw InputError(ErrorCode::InvalidArgument,
                     "resource at \"" + node_id + "\": evaluation voltage " +
                         format_value(v_eval) + " outside band");
  }
  if (kind == ResourceKind::DroopInverter && !(droop_k < 0.0)) {
    throw InputError(ErrorCode::InvalidArgument,
                     "resource at \"" + node_id + "\": droop slope must be negative");
  }
}

PowerStatistics surrogate_injections(const std::vector<VoltageDependentResource>& resources,
                                     const PowerStatistics& stats,
                                     const VoltageBand& band) {
  PowerStatistics out = stats;
  for (const auto& resource : resources) {
    resource.validate(band);
    int index = -1;
    for (std::size_t j = 0; j < stats.node_ids.size(); ++j) {
      if (stats.node_ids[j] == resource.node_id) {
        index = static_cast<int>(j);
        break;
      }
    }
    if (index < 0) {
      throw InputError(ErrorCode::UnknownNode,
                       "resource names unknown node \"" + resource.node_id + "\"");
    }
    const double dv = resource.v_eval - resource.v_nominal;
    switch (resource.kind) {
      case ResourceKind::ZipLoad:
        out.mean_p(index) += (resource.zip_b + 2.0 * resource.zip_c) /
                             (2.0 * resource.v_nominal) * dv * stats.mean_p(index);
        break;
      case ResourceKind::DroopInverter:
        out.mean_q(index) += resource.droop_k * dv;
        break;
    }
  }
  // Mean shifts move the sign-split moments off the estimated samples; keep
  // the identity intact by re-deriving the splits from the shifted means.
  for (int j = 0; j < out.node_count(); ++j) {
    const double p2 = out.var_p(j) + out.mean_p(j) * out.mean_p(j);
    const double p_plus_share =
        stats.p_plus(j) + stats.p_minus(j) > 0.0
            ? stats.p_plus(j) / (stats.p_plus(j) + stats.p_minus(j))
            : 1.0;
    out.p_plus(j) = p2 * p_plus_share;
    out.p_minus(j) = p2 * (1.0 - p_plus_share);
    const double q2 = out.var_q(j) + out.mean_q(j) * out.mean_q(j);
    const double q_plus_share =
        stats.q_plus(j) + stats.q_minus(j) > 0.0
            ? stats.q_plus(j) / (stats.q_plus(j) + stats.q_minus(j))
            : 1.0;
    out.q_plus(j) = q2 * q_plus_share;
    out.q_minus(j) = q2 * (1.0 - q_plus_share);
  }
  return out;
}

std::vector<VoltageDependentResource> parse_resources(const std::filesystem::path& path) {
  const std::string where = path.string();
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw InputError(ErrorCode::ParseFailure, where + ": " + e.what());
  }
  if (!doc.is_array()) {
    throw InputError(ErrorCode::ParseFailure, where + ": top level must be an array");
  }
  std::vector<VoltageDependentResource> resources;
  for (const auto& entry : doc) {
    if (!entry.is_object()) {
      throw InputError(ErrorCode::ParseFailure, where + ": resource entries must be objects");
    }
    VoltageDependentResource resource;
    for (const auto& item : entry.items()) {
      const auto& key = item.key();
      if (key == "node") {
        resource.node_id = item.value().get<std::string>();
      } else if (key == "kind") {
        const auto kind = item.value().get<std::string>();
        if (kind == "zip-load") {
          resource.kind = ResourceKind::ZipLoad;
        } else if (kind == "droop-inverter") {
          resource.kind = ResourceKind::DroopInverter;
        } else {
          throw InputError(ErrorCode::ParseFailure,
                           where + ": unknown resource kind \"" + kind + "\"");
        }
      } else if (key == "b") {
        resource.zip_b = item.value().get<double>();
      } else if (key == "c") {
        resource.zip_c = item.value().get<double>();
      } else if (key == "k") {
        resource.droop_k = item.value().get<double>();
      } else if (key == "v_nominal") {
        resource.v_nominal = item.value().get<double>();
      } else if (key == "v_eval") {
        resource.v_eval = item.value().get<double>();
      } else {
        throw InputError(ErrorCode::ParseFailure, where + ": unknown key \"" + key + "\"");
      }
    }
    if (resource.node_id.empty()) {
      throw InputError(ErrorCode::ParseFailure, where + ": resource without node");
    }
    resources.push_back(std::move(resource));
  }
  return resources;
}

std::string statistics_to_json(const PowerStatistics& stats) {
  json doc;
  doc["node_ids"] = stats.node_ids;
  doc["mean_p"] = vector_to_json(stats.mean_p);
  doc["mean_q"] = vector_to_json(stats.mean_q);
  doc["var_p"] = vector_to_json(stats.var_p);
  doc["var_q"] = vector_to_json(stats.var_q);
  doc["p_plus"] = vector_to_json(stats.p_plus);
  doc["p_minus"] = vector_to_json(stats.p_minus);
  doc["q_plus"] = vector_to_json(stats.q_plus);
  doc["q_minus"] = vector_to_json(stats.q_minus);
  doc["cov_pq_self"] = vector_to_json(stats.cov_pq_self);
  doc["cov_pp"] = matrix_to_json(stats.cov_pp);
  doc["cov_pq"] = matrix_to_json(stats.cov_pq);
  doc["cov_qp"] = matrix_to_json(stats.cov_qp);
  doc["cov_qq"] = matrix_to_json(stats.cov_qq);
  return doc.dump(2) + "\n";
}

}  // namespace gridtrip
