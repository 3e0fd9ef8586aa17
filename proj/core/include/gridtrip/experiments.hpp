#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "gridtrip/feeder.hpp"
#include "gridtrip/ground_truth.hpp"
#include "gridtrip/mitigate.hpp"
#include "gridtrip/power_stats.hpp"
#include "gridtrip/trip_model.hpp"

namespace gridtrip {

// Shared experiment knobs carried by the CLI commands.
struct ExperimentSpec {
  int window = 60;                          // steps per estimation window
  double alpha = 1.0;                       // PV scaling factor
  double power_factor = 1.0;                // inverter PF setpoint, (0, 1]
  std::optional<VoltageBand> band_override; // replaces the feeder band

  void validate() const;  // window >= 1, alpha >= 0, 0 < pf <= 1
};

// --- input mutations used by sweeps -----------------------------------------
// Each mutation exists twice: on raw series and analytically on statistics.
// The pairs must agree exactly (up to rounding) when the statistics are
// estimated from the mutated series.

// Scales p and q of masked nodes by alpha.
[[nodiscard]] TimeSeries scale_pv_series(const TimeSeries& series,
                                         const std::vector<bool>& mask,
                                         double alpha);
// Means scale by alpha, (co)variances and second moments by alpha^2.
[[nodiscard]] PowerStatistics scale_pv_statistics(const PowerStatistics& stats,
                                                  const std::vector<bool>& mask,
                                                  double alpha);

// Repins masked nodes to a constant power factor by absorbing reactive power
// proportionally to generation: q_j(t) = -p_j(t) * tan(acos(pf)). The minus
// sign counteracts the voltage rise caused by active injection; at pf == 1
// the reactive contribution vanishes.
[[nodiscard]] TimeSeries apply_power_factor_series(const TimeSeries& series,
                                                   const std::vector<bool>& mask,
                                                   double pf);
[[nodiscard]] PowerStatistics apply_power_factor_statistics(const PowerStatistics& stats,
                                                            const std::vector<bool>& mask,
                                                            double pf);

// Rescales the band width around its center.
[[nodiscard]] VoltageBand scale_band_width(const VoltageBand& band, double factor);

// Inclusive linear grid with `steps` points from start to stop.
[[nodiscard]] std::vector<double> linear_grid(double start, double stop, int steps);
// Parses "START:STOP:STEPS".
[[nodiscard]] std::vector<double> parse_grid(std::string_view text);

// --- windowed model-vs-simulation comparison --------------------------------

struct WindowReport {
  int index = 0;
  double start_time = 0.0;
  Eigen::VectorXd lambda_empirical;
  Eigen::VectorXd lambda_model;
  double s_p_empirical = 0.0;
  double s_p_model = 0.0;
  double gap = 0.0;     // empirical - model; conservative models keep this >= -margin
  double margin = 0.0;  // sampling margin on the empirical percentage
  bool violation = false;
};

struct ValidationRun {
  SimulationTrace trace;
  std::vector<MicroState> empirical;
  std::vector<WindowReport> windows;
};

// Simulates the series, then per complete window estimates statistics,
// quantifies the model bound, and compares macro-states. The margin is three
// binomial standard errors of the windowed ON frequencies (with a 1/T
// variance floor per node), expressed in percent.
[[nodiscard]] ValidationRun run_validation(const FeederModel& feeder,
                                           const TimeSeries& aligned_series,
                                           int window,
                                           int multistart,
                                           std::uint64_t seed,
                                           const SolverOptions& solver = {});

// --- sweeps ------------------------------------------------------------------

enum class SweepAxis {
  Penetration,  // scale PV injections by alpha
  PowerFactor,  // repin PV reactive power to a PF setpoint
  DeadBand,     // scale protection band width
};

[[nodiscard]] SweepAxis parse_axis(std::string_view text);
[[nodiscard]] std::string_view to_string(SweepAxis axis);

struct SweepOptions {
  SweepAxis axis = SweepAxis::Penetration;
  std::vector<double> grid;
  int window = 60;
  int multistart = 4;
  std::uint64_t seed = 1;
  SolverOptions solver;
  // false: mutate statistics analytically (default); true: re-estimate them
  // from the mutated series. Both paths agree up to rounding.
  bool restat_from_series = false;
  int threads = 1;
};

struct SweepPoint {
  double axis_value = 0.0;
  double empirical_ratio = 0.0;  // realized / available PV energy in simulation
  double model_ratio = 0.0;      // bound-weighted / available PV power
  double gap_min = 0.0;          // window gap statistics (percent)
  double gap_mean = 0.0;
  double gap_max = 0.0;
};

// Evaluates every grid point (optionally on a bounded worker pool; results
// are ordered by grid index regardless of thread count).
[[nodiscard]] std::vector<SweepPoint> run_sweep(const FeederModel& feeder,
                                                const TimeSeries& aligned_series,
                                                const SweepOptions& options);

// --- windowed mitigation ------------------------------------------------------

struct MitigationRunOptions {
  MitigationConfig config;   // v0_initial applies to the first window
  int window = 60;
  int multistart = 4;
  std::uint64_t seed = 1;
  SolverOptions solver;
  bool carry_forward = true;  // window w+1 starts from window w's chosen v0
};

struct MitigationWindow {
  int index = 0;
  double start_time = 0.0;
  double v0_before = 0.0;
  double v0_star = 0.0;
  double s_p_before = 0.0;
  double s_p_after = 0.0;
  double objective_before = 0.0;
  double objective_after = 0.0;
  CountermeasureResult detail;
};

// Designs a reference-voltage countermeasure per complete window, chaining
// the chosen v0 into the next window when carry_forward is set.
[[nodiscard]] std::vector<MitigationWindow> run_mitigation(const FeederModel& feeder,
                                                           const TimeSeries& aligned_series,
                                                           const MitigationRunOptions& options);

}  // namespace gridtrip
