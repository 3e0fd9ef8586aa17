#include "gridtrip/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <utility>

#include "gridtrip/text.hpp"

namespace gridtrip {

namespace {

// Runs fn(0..count-1) on up to `threads` workers. Results must be written to
// per-index slots; the first exception wins and cancels remaining work.
template <typename Fn>
void parallel_for_ordered(int count, int threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> cancel{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (!cancel.load(std::memory_order_relaxed)) {
      const int i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= count) break;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        cancel.store(true, std::memory_order_relaxed);
      }
    }
  };
  std::vector<std::thread> pool;
  const int workers = std::min(threads, count);
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

double percent_margin(const Eigen::VectorXd& lambda_empirical,
                      const std::vector<bool>& mask, int window) {
  // Three binomial standard errors on the windowed ON frequencies, with a 1/T
  // variance floor per node so all-ON windows keep a nonzero allowance.
  double variance_sum = 0.0;
  int switched = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++switched;
    const double le = lambda_empirical(static_cast<Eigen::Index>(i));
    variance_sum += std::max(le * (1.0 - le), 1.0 / window) / window;
  }
  if (switched == 0) return 0.0;
  return 100.0 * 3.0 * std::sqrt(variance_sum) / switched;
}

double reactive_slope(double pf) {
  if (!(pf > 0.0) || pf > 1.0) {
    throw InputError(ErrorCode::InvalidArgument,
                     "power factor must lie in (0, 1], got " + format_value(pf));
  }
  return -std::tan(std::acos(pf));
}

}  // namespace

void ExperimentSpec::validate() const {
  if (window < 1) {
    throw InputError(ErrorCode::InvalidArgument, "window must be at least 1 step");
  }
  if (!(alpha >= 0.0)) {
    throw InputError(ErrorCode::InvalidArgument, "alpha must be nonnegative");
  }
  (void)reactive_slope(power_factor);
  if (band_override) band_override->validate();
}

TimeSeries scale_pv_series(const TimeSeries& series, const std::vector<bool>& mask,
                           double alpha) {
  if (mask.size() != static_cast<std::size_t>(series.node_count())) {
    throw InputError(ErrorCode::DimensionMismatch, "mask does not match series");
  }
  if (!(alpha >= 0.0)) {
    throw InputError(ErrorCode::InvalidArgument, "alpha must be nonnegative");
  }
  TimeSeries out = series;
  for (int j = 0; j < series.node_count(); ++j) {
    if (!mask[j]) continue;
    out.p.col(j) *= alpha;
    out.q.col(j) *= alpha;
  }
  return out;
}

PowerStatistics scale_pv_statistics(const PowerStatistics& stats,
                                    const std::vector<bool>& mask, double alpha) {
  if (mask.size() != static_cast<std::size_t>(stats.node_count())) {
    throw InputError(ErrorCode::DimensionMismatch, "mask does not match statistics");
  }
  if (!(alpha >= 0.0)) {
    throw InputError(ErrorCode::InvalidArgument, "alpha must be nonnegative");
  }
  const int n = stats.node_count();
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(n);
  for (int j = 0; j < n; ++j) {
    if (mask[j]) scale(j) = alpha;
  }
  PowerStatistics out = stats;
  out.mean_p = stats.mean_p.cwiseProduct(scale);
  out.mean_q = stats.mean_q.cwiseProduct(scale);
  const Eigen::VectorXd scale2 = scale.cwiseAbs2();
  out.var_p = stats.var_p.cwiseProduct(scale2);
  out.var_q = stats.var_q.cwiseProduct(scale2);
  out.p_plus = stats.p_plus.cwiseProduct(scale2);
  out.p_minus = stats.p_minus.cwiseProduct(scale2);
  out.q_plus = stats.q_plus.cwiseProduct(scale2);
  out.q_minus = stats.q_minus.cwiseProduct(scale2);
  out.cov_pq_self = stats.cov_pq_self.cwiseProduct(scale2);
  out.cov_pp = scale.asDiagonal() * stats.cov_pp * scale.asDiagonal();
  out.cov_pq = scale.asDiagonal() * stats.cov_pq * scale.asDiagonal();
  out.cov_qp = scale.asDiagonal() * stats.cov_qp * scale.asDiagonal();
  out.cov_qq = scale.asDiagonal() * stats.cov_qq * scale.asDiagonal();
  return out;
}

TimeSeries apply_power_factor_series(const TimeSeries& series,
                                     const std::vector<bool>& mask, double pf) {
  if (mask.size() != static_cast<std::size_t>(series.node_count())) {
    throw InputError(ErrorCode::DimensionMismatch, "mask does not match series");
  }
  const double c = reactive_slope(pf);
  TimeSeries out = series;
  for (int j = 0; j < series.node_count(); ++j) {
    if (!mask[j]) continue;
    out.q.col(j) = c * series.p.col(j);
  }
  return out;
}

PowerStatistics apply_power_factor_statistics(const PowerStatistics& stats,
                                              const std::vector<bool>& mask, double pf) {
  if (mask.size() != static_cast<std::size_t>(stats.node_count())) {
    throw InputError(ErrorCode::DimensionMismatch, "mask does not match statistics");
  }
  const double c = reactive_slope(pf);
  const int n = stats.node_count();
  PowerStatistics out = stats;
  for (int j = 0; j < n; ++j) {
    if (!mask[j]) continue;
    out.mean_q(j) = c * stats.mean_p(j);
    // q = c*p with c <= 0 mirrors the sign split: nonnegative q comes from
    // nonpositive p.
    out.q_plus(j) = c * c * stats.p_minus(j);
    out.q_minus(j) = c * c * stats.p_plus(j);
    if (c == 0.0) {
      out.q_plus(j) = 0.0;
      out.q_minus(j) = 0.0;
    }
  }
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      // cov(p_a, q_b): a masked column substitution happens on the q side only.
      out.cov_pq(a, b) = mask[b] ? c * stats.cov_pp(a, b) : stats.cov_pq(a, b);
      if (mask[a] && mask[b]) {
        out.cov_qq(a, b) = c * c * stats.cov_pp(a, b);
      } else if (mask[a]) {
        out.cov_qq(a, b) = c * stats.cov_pq(a, b);
      } else if (mask[b]) {
        out.cov_qq(a, b) = c * stats.cov_qp(a, b);
      }
    }
  }
  out.cov_qp = out.cov_pq.transpose();
  out.var_q = out.cov_qq.diagonal();
  out.cov_pq_self = out.cov_pq.diagonal();
  return out;
}

VoltageBand scale_band_width(const VoltageBand& band, double factor) {
  if (!(factor > 0.0)) {
    throw InputError(ErrorCode::InvalidArgument, "band width factor must be positive");
  }
  const double center = band.center();
  const double half = band.half_width() * factor;
  VoltageBand scaled{center - half, center + half};
  scaled.validate();
  return scaled;
}

std::vector<double> linear_grid(double start, double stop, int steps) {
  if (steps < 1) {
    throw InputError(ErrorCode::InvalidArgument, "grid needs at least one point");
  }
  std::vector<double> grid;
  grid.reserve(steps);
  if (steps == 1) {
    grid.push_back(start);
    return grid;
  }
  for (int i = 0; i < steps; ++i) {
    grid.push_back(start + (stop - start) * static_cast<double>(i) /
                               static_cast<double>(steps - 1));
  }
  return grid;
}

std::vector<double> parse_grid(std::string_view text) {
  const auto first = text.find(':');
  const auto second = text.find(':', first == std::string_view::npos ? first : first + 1);
  if (first == std::string_view::npos || second == std::string_view::npos) {
    throw InputError(ErrorCode::ParseFailure,
                     "grid must be START:STOP:STEPS, got \"" + std::string(text) + "\"");
  }
  try {
    const double start = std::stod(std::string(text.substr(0, first)));
    const double stop = std::stod(std::string(text.substr(first + 1, second - first - 1)));
    const int steps = std::stoi(std::string(text.substr(second + 1)));
    return linear_grid(start, stop, steps);
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    throw InputError(ErrorCode::ParseFailure,
                     "grid must be START:STOP:STEPS, got \"" + std::string(text) + "\"");
  }
}

SweepAxis parse_axis(std::string_view text) {
  if (text == "penetration") return SweepAxis::Penetration;
  if (text == "pf") return SweepAxis::PowerFactor;
  if (text == "deadband") return SweepAxis::DeadBand;
  throw InputError(ErrorCode::ParseFailure,
                   "unknown sweep axis \"" + std::string(text) +
                       "\" (expected penetration, pf, or deadband)");
}

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Penetration: return "penetration";
    case SweepAxis::PowerFactor: return "pf";
    case SweepAxis::DeadBand: return "deadband";
  }
  return "unknown";
}

ValidationRun run_validation(const FeederModel& feeder,
                             const TimeSeries& aligned_series,
                             int window,
                             int multistart,
                             std::uint64_t seed,
                             const SolverOptions& solver) {
  if (window < 1 || window > aligned_series.step_count()) {
    throw InputError(ErrorCode::InvalidArgument,
                     "window of " + std::to_string(window) +
                         " steps does not fit series of " +
                         std::to_string(aligned_series.step_count()) + " steps");
  }
  const SensitivityMatrices sens = path_impedances(feeder);
  const auto mask = feeder.switched_mask();

  ValidationRun run;
  run.trace = simulate(aligned_series, feeder, sens);
  run.empirical = empirical_micro_state(run.trace, window);

  const int windows = static_cast<int>(run.empirical.size());
  run.windows.reserve(windows);
  for (int w = 0; w < windows; ++w) {
    const PowerStatistics stats = estimate_statistics(aligned_series, w * window, window);
    const TrippingModelParams params =
        build_params(stats, sens, feeder.band(), feeder.reference_v0(), mask);
    const RiskAssessment risk =
        quantify_risk(params, stats.mean_p, multistart, seed + static_cast<std::uint64_t>(w),
                      solver);

    WindowReport report;
    report.index = w;
    report.start_time = aligned_series.times[static_cast<std::size_t>(w) * window];
    report.lambda_empirical = run.empirical[w].lambda;
    report.lambda_model = risk.micro.lambda;
    report.s_p_empirical = macro_state(run.empirical[w], mask).s_percent;
    report.s_p_model = macro_state(risk.micro, mask).s_percent;
    report.gap = report.s_p_empirical - report.s_p_model;
    report.margin = percent_margin(run.empirical[w].lambda, mask, window);
    report.violation = report.s_p_model > report.s_p_empirical + report.margin;
    run.windows.push_back(std::move(report));
  }
  return run;
}

std::vector<SweepPoint> run_sweep(const FeederModel& feeder,
                                  const TimeSeries& aligned_series,
                                  const SweepOptions& options) {
  if (options.grid.empty()) {
    throw InputError(ErrorCode::InvalidArgument, "sweep grid is empty");
  }
  if (options.window < 1 || options.window > aligned_series.step_count()) {
    throw InputError(ErrorCode::InvalidArgument,
                     "window of " + std::to_string(options.window) +
                         " steps does not fit series of " +
                         std::to_string(aligned_series.step_count()) + " steps");
  }
  const SensitivityMatrices sens = path_impedances(feeder);
  const auto mask = feeder.switched_mask();
  const int windows = aligned_series.step_count() / options.window;

  std::vector<SweepPoint> points(options.grid.size());
  auto evaluate = [&](int g) {
    const double value = options.grid[g];
    TimeSeries mutated = aligned_series;
    FeederModel setup = feeder;
    switch (options.axis) {
      case SweepAxis::Penetration:
        mutated = scale_pv_series(aligned_series, mask, value);
        break;
      case SweepAxis::PowerFactor:
        mutated = apply_power_factor_series(aligned_series, mask, value);
        break;
      case SweepAxis::DeadBand:
        setup = with_band(feeder, scale_band_width(feeder.band(), value));
        break;
    }

    const SimulationTrace trace = simulate(mutated, setup, sens);
    const auto empirical = empirical_micro_state(trace, options.window);

    double realized = 0.0;
    double available = 0.0;
    for (const auto& step : trace.steps) {
      for (int i = 0; i < setup.node_count(); ++i) {
        if (!mask[i]) continue;
        realized += step.p_inj(i);
        available += step.p(i);
      }
    }

    double model_realized = 0.0;
    double model_available = 0.0;
    double gap_min = std::numeric_limits<double>::infinity();
    double gap_max = -std::numeric_limits<double>::infinity();
    double gap_sum = 0.0;
    for (int w = 0; w < windows; ++w) {
      PowerStatistics stats;
      if (options.restat_from_series) {
        stats = estimate_statistics(mutated, w * options.window, options.window);
      } else {
        stats = estimate_statistics(aligned_series, w * options.window, options.window);
        switch (options.axis) {
          case SweepAxis::Penetration:
            stats = scale_pv_statistics(stats, mask, value);
            break;
          case SweepAxis::PowerFactor:
            stats = apply_power_factor_statistics(stats, mask, value);
            break;
          case SweepAxis::DeadBand:
            break;
        }
      }
      const TrippingModelParams params =
          build_params(stats, sens, setup.band(), setup.reference_v0(), mask);
      const RiskAssessment risk =
          quantify_risk(params, stats.mean_p, options.multistart,
                        options.seed + static_cast<std::uint64_t>(w), options.solver);
      for (int i = 0; i < setup.node_count(); ++i) {
        if (!mask[i]) continue;
        model_realized += stats.mean_p(i) * risk.micro.lambda(i);
        model_available += stats.mean_p(i);
      }
      const double gap = macro_state(empirical[w], mask).s_percent -
                         macro_state(risk.micro, mask).s_percent;
      gap_min = std::min(gap_min, gap);
      gap_max = std::max(gap_max, gap);
      gap_sum += gap;
    }

    SweepPoint point;
    point.axis_value = value;
    point.empirical_ratio = available != 0.0 ? realized / available : 1.0;
    point.model_ratio = model_available != 0.0 ? model_realized / model_available : 1.0;
    point.gap_min = gap_min;
    point.gap_mean = gap_sum / windows;
    point.gap_max = gap_max;
    points[g] = point;
  };
  parallel_for_ordered(static_cast<int>(options.grid.size()),
                       std::max(1, options.threads), evaluate);
  return points;
}

std::vector<MitigationWindow> run_mitigation(const FeederModel& feeder,
                                             const TimeSeries& aligned_series,
                                             const MitigationRunOptions& options) {
  options.config.validate();
  if (options.window < 1 || options.window > aligned_series.step_count()) {
    throw InputError(ErrorCode::InvalidArgument,
                     "window of " + std::to_string(options.window) +
                         " steps does not fit series of " +
                         std::to_string(aligned_series.step_count()) + " steps");
  }
  const SensitivityMatrices sens = path_impedances(feeder);
  const auto mask = feeder.switched_mask();
  const int windows = aligned_series.step_count() / options.window;

  std::vector<MitigationWindow> result;
  result.reserve(windows);
  double v0_current = options.config.v0_initial;
  for (int w = 0; w < windows; ++w) {
    const PowerStatistics stats =
        estimate_statistics(aligned_series, w * options.window, options.window);

    const TrippingModelParams before_params =
        build_params(stats, sens, options.config.band, v0_current, mask);
    const RiskAssessment before =
        quantify_risk(before_params, stats.mean_p, options.multistart,
                      options.seed + static_cast<std::uint64_t>(w), options.solver);

    MitigationConfig window_config = options.config;
    window_config.v0_initial = v0_current;
    CountermeasureResult detail =
        design_countermeasure(stats, sens, window_config, mask, options.solver);

    MitigationWindow entry;
    entry.index = w;
    entry.start_time = aligned_series.times[static_cast<std::size_t>(w) * options.window];
    entry.v0_before = v0_current;
    entry.v0_star = detail.v0_star;
    entry.s_p_before = macro_state(before.micro, mask).s_percent;
    entry.s_p_after = macro_state(detail.micro, mask).s_percent;
    entry.objective_before = before.objective;
    entry.objective_after = detail.objective;
    entry.detail = std::move(detail);
    result.push_back(std::move(entry));

    if (options.carry_forward) v0_current = result.back().v0_star;
  }
  return result;
}

}  // namespace gridtrip
