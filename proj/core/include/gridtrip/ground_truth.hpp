#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "gridtrip/feeder.hpp"
#include "gridtrip/power_stats.hpp"
#include "gridtrip/trip_model.hpp"

namespace gridtrip {

// ON/OFF pattern over all nodes; non-switched nodes are always 1.
struct SwitchConfig {
  std::vector<std::uint8_t> s;

  [[nodiscard]] int on_count() const;
  bool operator==(const SwitchConfig&) const = default;
};

enum class ResolutionMethod {
  Iterative,           // synchronous sweeps reached a fixed configuration
  ExhaustiveFallback,  // cycle detected; config picked by enumeration
};

[[nodiscard]] std::string_view to_string(ResolutionMethod method);

struct ResolveOptions {
  // Largest switched-node count enumeration will attempt.
  int exhaustive_limit = 20;
};

struct ResolveOutcome {
  SwitchConfig config;
  Eigen::VectorXd v;  // squared voltages consistent with config
  int iterations = 0;
  ResolutionMethod method = ResolutionMethod::Iterative;
};

// Finds a switch configuration consistent with the protection band for one
// snapshot of available powers: every switched node is ON exactly when its
// voltage (computed from the gated injections) lies inside the band.
// Iterates synchronously from all-ON; on a revisited configuration or after
// 2 * switched-count sweeps falls back to exhaustive enumeration and picks
// the consistent config with maximum ON count (ties: lexicographically
// largest s). Throws ConvergenceError(NoConsistentConfig) when none exists
// and InputError(ExhaustiveLimitExceeded) when enumeration would exceed the
// limit.
[[nodiscard]] ResolveOutcome resolve_config(const Eigen::VectorXd& p,
                                            const Eigen::VectorXd& q,
                                            const FeederModel& model,
                                            const SensitivityMatrices& sens,
                                            const ResolveOptions& options = {});

// Every consistent configuration for the snapshot, sorted lexicographically
// ascending by s. An empty result means no configuration is consistent.
[[nodiscard]] std::vector<SwitchConfig> oracle_enumerate(const Eigen::VectorXd& p,
                                                         const Eigen::VectorXd& q,
                                                         const FeederModel& model,
                                                         const SensitivityMatrices& sens,
                                                         int exhaustive_limit = 20);

// Gated squared-voltage profile v = R (p .* s) + X (q .* s) + v0.
[[nodiscard]] Eigen::VectorXd gated_voltage(const Eigen::VectorXd& p,
                                            const Eigen::VectorXd& q,
                                            const SwitchConfig& config,
                                            const SensitivityMatrices& sens,
                                            double v0);

struct TraceStep {
  double time = 0.0;
  Eigen::VectorXd p;      // available power
  Eigen::VectorXd q;
  Eigen::VectorXd p_inj;  // realized injection (gated by s)
  Eigen::VectorXd q_inj;
  Eigen::VectorXd v;
  SwitchConfig config;
  int iterations = 0;
  ResolutionMethod method = ResolutionMethod::Iterative;
};

struct SimulationTrace {
  std::vector<TraceStep> steps;
  std::vector<std::string> node_ids;

  [[nodiscard]] int step_count() const { return static_cast<int>(steps.size()); }
};

// Resolves every step of the series (columns already aligned to the feeder).
// Errors from resolve_config are rethrown with the offending timestamp in
// the message.
[[nodiscard]] SimulationTrace simulate(const TimeSeries& series,
                                       const FeederModel& model,
                                       const SensitivityMatrices& sens,
                                       const ResolveOptions& options = {});

// Per-node ON frequency over consecutive complete windows of `window` steps;
// a trailing partial window is dropped. Requires 1 <= window <= step count.
[[nodiscard]] std::vector<MicroState> empirical_micro_state(const SimulationTrace& trace,
                                                            int window);

// Delimited export, one row per node per step:
// t,node_id,p,q,p_inj,q_inj,v,s,method
void write_trace(const std::filesystem::path& path, const SimulationTrace& trace);

// Delimited export of windowed ON frequencies: window_start,node_id,lambda
void write_windowed_lambda(const std::filesystem::path& path,
                           const SimulationTrace& trace,
                           const std::vector<MicroState>& windows,
                           int window);

}  // namespace gridtrip
