#include "gridtrip/ground_truth.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <string>
#include <utility>

#include "gridtrip/text.hpp"

namespace gridtrip {

namespace {

std::string config_bits(const SwitchConfig& config) {
  std::string bits;
  bits.reserve(config.s.size());
  for (auto v : config.s) bits.push_back(v ? '1' : '0');
  return bits;
}

// v and s agree: every switched node is ON exactly when inside the band.
bool consistent(const SwitchConfig& config, const Eigen::VectorXd& v,
                const std::vector<bool>& mask, const VoltageBand& band) {
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const bool inside = band.contains(v(static_cast<Eigen::Index>(i)));
    if (inside != (config.s[i] == 1)) return false;
  }
  return true;
}

void check_snapshot(const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                    const FeederModel& model, const SensitivityMatrices& sens) {
  const int n = model.node_count();
  if (p.size() != n || q.size() != n) {
    throw InputError(ErrorCode::DimensionMismatch, "power snapshot has wrong size");
  }
  if (sens.R.rows() != n || sens.R.cols() != n || sens.X.rows() != n ||
      sens.X.cols() != n) {
    throw InputError(ErrorCode::DimensionMismatch,
                     "sensitivity matrices do not match the feeder");
  }
}

}  // namespace

int SwitchConfig::on_count() const {
  int count = 0;
  for (auto v : s) count += v ? 1 : 0;
  return count;
}

std::string_view to_string(ResolutionMethod method) {
  switch (method) {
    case ResolutionMethod::Iterative: return "iterative";
    case ResolutionMethod::ExhaustiveFallback: return "exhaustive-fallback";
  }
  return "unknown";
}

Eigen::VectorXd gated_voltage(const Eigen::VectorXd& p,
                              const Eigen::VectorXd& q,
                              const SwitchConfig& config,
                              const SensitivityMatrices& sens,
                              double v0) {
  const auto n = static_cast<Eigen::Index>(config.s.size());
  if (p.size() != n || q.size() != n || sens.R.rows() != n) {
    throw InputError(ErrorCode::DimensionMismatch, "gated voltage inputs disagree");
  }
  Eigen::VectorXd gate(n);
  for (Eigen::Index i = 0; i < n; ++i) gate(i) = config.s[i] ? 1.0 : 0.0;
  return sens.R * p.cwiseProduct(gate) + sens.X * q.cwiseProduct(gate) +
         Eigen::VectorXd::Constant(n, v0);
}

ResolveOutcome resolve_config(const Eigen::VectorXd& p,
                              const Eigen::VectorXd& q,
                              const FeederModel& model,
                              const SensitivityMatrices& sens,
                              const ResolveOptions& options) {
  check_snapshot(p, q, model, sens);
  const int n = model.node_count();
  const auto mask = model.switched_mask();
  const int switched = model.switched_count();
  const VoltageBand& band = model.band();

  SwitchConfig config{std::vector<std::uint8_t>(n, 1)};
  if (switched == 0) {
    // Nothing can trip; the all-ON profile is the answer by definition.
    return ResolveOutcome{config, gated_voltage(p, q, config, sens, model.reference_v0()),
                          0, ResolutionMethod::Iterative};
  }

  // Synchronous sweeps from all-ON. Each sweep recomputes voltages under the
  // current configuration and flips every switched node to match its band
  // test. A revisited configuration proves a limit cycle.
  std::set<std::vector<std::uint8_t>> visited{config.s};
  std::vector<std::vector<std::uint8_t>> sequence{config.s};
  const int sweep_cap = 2 * switched;
  int sweeps = 0;
  while (true) {
    const Eigen::VectorXd v = gated_voltage(p, q, config, sens, model.reference_v0());
    SwitchConfig next = config;
    for (int i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      next.s[i] = band.contains(v(i)) ? 1 : 0;
    }
    if (next.s == config.s) {
      return ResolveOutcome{config, v, sweeps, ResolutionMethod::Iterative};
    }
    ++sweeps;
    const bool revisit = !visited.insert(next.s).second;
    sequence.push_back(next.s);
    config = std::move(next);
    if (revisit || sweeps >= sweep_cap) break;
  }

  // Limit cycle (or sweep budget exhausted): enumerate.
  if (switched > options.exhaustive_limit) {
    throw InputError(ErrorCode::ExhaustiveLimitExceeded,
                     "enumeration over " + std::to_string(switched) +
                         " switched nodes exceeds limit " +
                         std::to_string(options.exhaustive_limit));
  }
  const auto consistent_configs =
      oracle_enumerate(p, q, model, sens, options.exhaustive_limit);
  if (consistent_configs.empty()) {
    std::ostringstream message;
    message << "no consistent switch configuration; iteration cycle:";
    for (const auto& s : sequence) {
      message << ' ' << config_bits(SwitchConfig{s});
    }
    throw ConvergenceError(ErrorCode::NoConsistentConfig, message.str());
  }
  // Maximum ON count, ties by lexicographically largest pattern.
  const SwitchConfig* best = &consistent_configs.front();
  for (const auto& candidate : consistent_configs) {
    if (candidate.on_count() > best->on_count() ||
        (candidate.on_count() == best->on_count() && candidate.s > best->s)) {
      best = &candidate;
    }
  }
  return ResolveOutcome{*best, gated_voltage(p, q, *best, sens, model.reference_v0()),
                        sweeps, ResolutionMethod::ExhaustiveFallback};
}

std::vector<SwitchConfig> oracle_enumerate(const Eigen::VectorXd& p,
                                           const Eigen::VectorXd& q,
                                           const FeederModel& model,
                                           const SensitivityMatrices& sens,
                                           int exhaustive_limit) {
  check_snapshot(p, q, model, sens);
  const int n = model.node_count();
  const auto mask = model.switched_mask();
  std::vector<int> switched_nodes;
  for (int i = 0; i < n; ++i) {
    if (mask[i]) switched_nodes.push_back(i);
  }
  const int k = static_cast<int>(switched_nodes.size());
  if (k > exhaustive_limit) {
    throw InputError(ErrorCode::ExhaustiveLimitExceeded,
                     "enumeration over " + std::to_string(k) + " switched nodes exceeds limit " +
                         std::to_string(exhaustive_limit));
  }

  std::vector<SwitchConfig> consistent_configs;
  const std::uint64_t total = 1ull << k;
  for (std::uint64_t bits = 0; bits < total; ++bits) {
    SwitchConfig config{std::vector<std::uint8_t>(n, 1)};
    for (int b = 0; b < k; ++b) {
      config.s[switched_nodes[b]] = (bits >> b) & 1u ? 1 : 0;
    }
    const Eigen::VectorXd v = gated_voltage(p, q, config, sens, model.reference_v0());
    if (consistent(config, v, mask, model.band())) {
      consistent_configs.push_back(std::move(config));
    }
  }
  std::sort(consistent_configs.begin(), consistent_configs.end(),
            [](const SwitchConfig& a, const SwitchConfig& b) { return a.s < b.s; });
  return consistent_configs;
}

SimulationTrace simulate(const TimeSeries& series,
                         const FeederModel& model,
                         const SensitivityMatrices& sens,
                         const ResolveOptions& options) {
  if (series.node_count() != model.node_count()) {
    throw InputError(ErrorCode::MismatchedSeries,
                     "series node count does not match the feeder");
  }
  SimulationTrace trace;
  trace.node_ids = series.node_ids;
  trace.steps.reserve(series.step_count());
  for (int t = 0; t < series.step_count(); ++t) {
    const Eigen::VectorXd p = series.p.row(t).transpose();
    const Eigen::VectorXd q = series.q.row(t).transpose();
    ResolveOutcome outcome;
    try {
      outcome = resolve_config(p, q, model, sens, options);
    } catch (const ConvergenceError& e) {
      throw ConvergenceError(e.code(), "t=" + format_value(series.times[t]) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(e.code(), "t=" + format_value(series.times[t]) + ": " + e.what());
    }
    TraceStep step;
    step.time = series.times[t];
    step.p = p;
    step.q = q;
    Eigen::VectorXd gate(model.node_count());
    for (int i = 0; i < model.node_count(); ++i) gate(i) = outcome.config.s[i] ? 1.0 : 0.0;
    step.p_inj = p.cwiseProduct(gate);
    step.q_inj = q.cwiseProduct(gate);
    step.v = outcome.v;
    step.config = std::move(outcome.config);
    step.iterations = outcome.iterations;
    step.method = outcome.method;
    trace.steps.push_back(std::move(step));
  }
  return trace;
}

std::vector<MicroState> empirical_micro_state(const SimulationTrace& trace, int window) {
  if (window < 1 || window > trace.step_count()) {
    throw InputError(ErrorCode::InvalidArgument,
                     "window of " + std::to_string(window) + " steps does not fit trace of " +
                         std::to_string(trace.step_count()));
  }
  const int n = trace.steps.empty() ? 0 : static_cast<int>(trace.steps.front().config.s.size());
  const int windows = trace.step_count() / window;
  std::vector<MicroState> result;
  result.reserve(windows);
  for (int w = 0; w < windows; ++w) {
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(n);
    for (int t = w * window; t < (w + 1) * window; ++t) {
      for (int i = 0; i < n; ++i) {
        lambda(i) += trace.steps[t].config.s[i] ? 1.0 : 0.0;
      }
    }
    lambda /= static_cast<double>(window);
    result.push_back(MicroState{std::move(lambda), MicroStateKind::Empirical});
  }
  return result;
}

void write_trace(const std::filesystem::path& path, const SimulationTrace& trace) {
  std::string out = "t,node_id,p,q,p_inj,q_inj,v,s,method\n";
  for (const auto& step : trace.steps) {
    for (std::size_t i = 0; i < trace.node_ids.size(); ++i) {
      const auto idx = static_cast<Eigen::Index>(i);
      out += format_value(step.time);
      out += ',';
      out += trace.node_ids[i];
      out += ',';
      out += format_value(step.p(idx));
      out += ',';
      out += format_value(step.q(idx));
      out += ',';
      out += format_value(step.p_inj(idx));
      out += ',';
      out += format_value(step.q_inj(idx));
      out += ',';
      out += format_value(step.v(idx));
      out += ',';
      out += step.config.s[i] ? '1' : '0';
      out += ',';
      out += to_string(step.method);
      out += '\n';
    }
  }
  write_file(path, out);
}

void write_windowed_lambda(const std::filesystem::path& path,
                           const SimulationTrace& trace,
                           const std::vector<MicroState>& windows,
                           int window) {
  std::string out = "window_start,node_id,lambda\n";
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const double start = trace.steps[w * static_cast<std::size_t>(window)].time;
    for (std::size_t i = 0; i < trace.node_ids.size(); ++i) {
      out += format_value(start);
      out += ',';
      out += trace.node_ids[i];
      out += ',';
      out += format_value(windows[w].lambda(static_cast<Eigen::Index>(i)));
      out += '\n';
    }
  }
  write_file(path, out);
}

}  // namespace gridtrip
