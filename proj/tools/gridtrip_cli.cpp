// Command-line front end: risk assessment, simulator validation, parameter
// sweeps, reference-voltage mitigation, and the exhaustive switching oracle.
//
// Exit codes: 0 success, 2 input error, 3 infeasible, 4 non-convergence.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gridtrip/experiments.hpp"
#include "gridtrip/ground_truth.hpp"
#include "gridtrip/mitigate.hpp"
#include "gridtrip/text.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string feeder_path;
  std::string series_path;
  std::string out_dir = ".";
  std::string band;  // "VMIN,VMAX" in plain per-unit, empty = feeder band
  int window = 60;
  std::uint64_t seed = 1;
  int multistart = 4;
  gridtrip::SolverOptions solver;
};

void add_common_options(CLI::App& cmd, CommonOptions& opts, bool with_window) {
  cmd.add_option("--feeder", opts.feeder_path, "Feeder description (JSON)")
      ->required();
  cmd.add_option("--series", opts.series_path, "Nodal power series (CSV)")
      ->required();
  cmd.add_option("--out", opts.out_dir, "Output directory (created if missing)")
      ->capture_default_str();
  cmd.add_option("--band", opts.band,
                 "Protection band override VMIN,VMAX in per-unit voltage");
  if (with_window) {
    cmd.add_option("--window", opts.window, "Steps per estimation window")
        ->capture_default_str();
  }
  cmd.add_option("--seed", opts.seed, "Seed for multistart sampling")
      ->capture_default_str();
  cmd.add_option("--multistart", opts.multistart,
                 "Fixed-point starts per solve (first is all-ON)")
      ->capture_default_str();
  cmd.add_option("--damping", opts.solver.damping, "Fixed-point damping in (0,1]")
      ->capture_default_str();
  cmd.add_option("--tol", opts.solver.tol, "Fixed-point residual tolerance")
      ->capture_default_str();
  cmd.add_option("--max-iter", opts.solver.max_iter, "Fixed-point iteration cap")
      ->capture_default_str();
}

std::pair<double, double> parse_pair(const std::string& text, const char* what) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) {
    throw gridtrip::InputError(gridtrip::ErrorCode::ParseFailure,
                               std::string(what) + " must be MIN,MAX, got \"" + text + "\"");
  }
  try {
    return {std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
  } catch (const std::exception&) {
    throw gridtrip::InputError(gridtrip::ErrorCode::ParseFailure,
                               std::string(what) + " must be MIN,MAX, got \"" + text + "\"");
  }
}

gridtrip::FeederModel load_feeder(const CommonOptions& opts) {
  gridtrip::FeederModel feeder = gridtrip::parse_feeder(opts.feeder_path);
  if (!opts.band.empty()) {
    const auto [lo, hi] = parse_pair(opts.band, "--band");
    feeder = with_band(feeder, gridtrip::VoltageBand::from_voltage_pu(lo, hi));
  }
  return feeder;
}

gridtrip::TimeSeries load_series(const CommonOptions& opts,
                                 const gridtrip::FeederModel& feeder) {
  return align_series(gridtrip::parse_series(opts.series_path), feeder.node_ids());
}

fs::path prepare_out_dir(const CommonOptions& opts) {
  fs::path out(opts.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) {
    throw gridtrip::InputError(gridtrip::ErrorCode::ParseFailure,
                               "cannot create output directory " + out.string() +
                                   ": " + ec.message());
  }
  return out;
}

std::string config_bits(const gridtrip::SwitchConfig& config) {
  std::string bits;
  bits.reserve(config.s.size());
  for (const auto b : config.s) bits.push_back(b ? '1' : '0');
  return bits;
}

int cmd_assess(const CommonOptions& opts, const std::string& resources_path) {
  const auto feeder = load_feeder(opts);
  const auto series = load_series(opts, feeder);
  const auto out = prepare_out_dir(opts);

  gridtrip::PowerStatistics stats = estimate_statistics(series);
  if (!resources_path.empty()) {
    stats = surrogate_injections(gridtrip::parse_resources(resources_path), stats,
                                 feeder.band());
  }

  const auto sens = path_impedances(feeder);
  const auto mask = feeder.switched_mask();
  const auto params =
      build_params(stats, sens, feeder.band(), feeder.reference_v0(), mask);
  const auto risk =
      quantify_risk(params, stats.mean_p, opts.multistart, opts.seed, opts.solver);
  const auto macro = macro_state(risk.micro, mask);

  std::string csv = "record,node_id,lambda_hat,s_hat,s_percent,objective\n";
  for (int i = 0; i < feeder.node_count(); ++i) {
    csv += "node," + feeder.node(i).id + "," +
           gridtrip::format_value(risk.micro.lambda(i)) + ",,,\n";
  }
  csv += "summary,,," + gridtrip::format_value(macro.s_hat) + "," +
         gridtrip::format_value(macro.s_percent) + "," +
         gridtrip::format_value(risk.objective) + "\n";
  gridtrip::write_file(out / "assess.csv", csv);
  gridtrip::write_file(out / "stats.json", statistics_to_json(stats));

  gridtrip::ModelProvenance provenance;
  provenance.feeder_hash = gridtrip::fnv1a_hex(gridtrip::read_file(opts.feeder_path));
  provenance.stats_window = std::to_string(series.step_count()) + " steps";
  gridtrip::write_file(out / "model.json", model_to_json(params, provenance));

  std::printf("assess: S=%s (%s%%), objective %s, %d/%d starts converged\n",
              gridtrip::format_value(macro.s_hat).c_str(),
              gridtrip::format_value(macro.s_percent).c_str(),
              gridtrip::format_value(risk.objective).c_str(), risk.converged_starts,
              opts.multistart);
  return 0;
}

int cmd_validate(const CommonOptions& opts) {
  const auto feeder = load_feeder(opts);
  const auto series = load_series(opts, feeder);
  const auto out = prepare_out_dir(opts);

  gridtrip::ExperimentSpec spec;
  spec.window = opts.window;
  spec.validate();

  const auto run = run_validation(feeder, series, opts.window, opts.multistart,
                                  opts.seed, opts.solver);

  std::string csv = "window_index,window_start,s_p_empirical,s_p_model,gap,violation\n";
  int violations = 0;
  for (const auto& w : run.windows) {
    csv += std::to_string(w.index) + "," + gridtrip::format_value(w.start_time) + "," +
           gridtrip::format_value(w.s_p_empirical) + "," +
           gridtrip::format_value(w.s_p_model) + "," + gridtrip::format_value(w.gap) +
           "," + (w.violation ? "1" : "0") + "\n";
    violations += w.violation ? 1 : 0;
  }
  gridtrip::write_file(out / "validate.csv", csv);
  write_trace(out / "trace.csv", run.trace);
  write_windowed_lambda(out / "lambda_windows.csv", run.trace, run.empirical,
                        opts.window);

  std::printf("validate: %zu windows, %d violation flags\n", run.windows.size(),
              violations);
  return 0;
}

int cmd_sweep(const CommonOptions& opts, const std::string& axis_text,
              const std::string& grid_text, bool restat, int threads) {
  const auto feeder = load_feeder(opts);
  const auto series = load_series(opts, feeder);
  const auto out = prepare_out_dir(opts);

  gridtrip::ExperimentSpec spec;
  spec.window = opts.window;
  spec.validate();

  gridtrip::SweepOptions sweep;
  sweep.axis = gridtrip::parse_axis(axis_text);
  sweep.grid = gridtrip::parse_grid(grid_text);
  sweep.window = opts.window;
  sweep.multistart = opts.multistart;
  sweep.seed = opts.seed;
  sweep.solver = opts.solver;
  sweep.restat_from_series = restat;
  sweep.threads = threads;

  const auto points = run_sweep(feeder, series, sweep);

  std::string csv = "axis_value,empirical_ratio,model_ratio,gap_min,gap_mean,gap_max\n";
  for (const auto& pt : points) {
    csv += gridtrip::format_value(pt.axis_value) + "," +
           gridtrip::format_value(pt.empirical_ratio) + "," +
           gridtrip::format_value(pt.model_ratio) + "," +
           gridtrip::format_value(pt.gap_min) + "," +
           gridtrip::format_value(pt.gap_mean) + "," +
           gridtrip::format_value(pt.gap_max) + "\n";
  }
  gridtrip::write_file(out / "sweep.csv", csv);

  std::printf("sweep: axis %s, %zu points\n",
              std::string(to_string(sweep.axis)).c_str(), points.size());
  return 0;
}

int cmd_mitigate(const CommonOptions& opts, const std::optional<double>& v0_initial,
                 const std::string& rate_band, int grid_points, bool no_carry) {
  const auto feeder = load_feeder(opts);
  const auto series = load_series(opts, feeder);
  const auto out = prepare_out_dir(opts);

  gridtrip::ExperimentSpec spec;
  spec.window = opts.window;
  spec.validate();

  gridtrip::MitigationRunOptions mopts;
  mopts.config.band = feeder.band();
  mopts.config.v0_initial = v0_initial.value_or(feeder.reference_v0());
  if (!rate_band.empty()) {
    const auto [lo, hi] = parse_pair(rate_band, "--rate-band");
    mopts.config.rate_min = lo;
    mopts.config.rate_max = hi;
  }
  mopts.config.grid_points = grid_points;
  mopts.window = opts.window;
  mopts.multistart = opts.multistart;
  mopts.seed = opts.seed;
  mopts.solver = opts.solver;
  mopts.carry_forward = !no_carry;

  const auto windows = run_mitigation(feeder, series, mopts);

  std::string csv =
      "window_index,window_start,v0_initial,v0_star,s_p_before,s_p_after,"
      "objective_before,objective_after\n";
  nlohmann::json report;
  report["windows"] = nlohmann::json::array();
  for (const auto& w : windows) {
    csv += std::to_string(w.index) + "," + gridtrip::format_value(w.start_time) + "," +
           gridtrip::format_value(w.v0_before) + "," +
           gridtrip::format_value(w.v0_star) + "," +
           gridtrip::format_value(w.s_p_before) + "," +
           gridtrip::format_value(w.s_p_after) + "," +
           gridtrip::format_value(w.objective_before) + "," +
           gridtrip::format_value(w.objective_after) + "\n";

    nlohmann::json entry;
    entry["index"] = w.index;
    entry["start_time"] = w.start_time;
    entry["v0_before"] = w.v0_before;
    entry["v0_star"] = w.v0_star;
    entry["s_p_before"] = w.s_p_before;
    entry["s_p_after"] = w.s_p_after;
    entry["objective_before"] = w.objective_before;
    entry["objective_after"] = w.objective_after;
    entry["lambda"] = std::vector<double>(
        w.detail.micro.lambda.data(), w.detail.micro.lambda.data() + w.detail.micro.lambda.size());
    entry["mu_v"] = std::vector<double>(w.detail.mu_v.data(),
                                        w.detail.mu_v.data() + w.detail.mu_v.size());
    entry["grid"] = nlohmann::json::array();
    for (const auto& g : w.detail.grid) {
      entry["grid"].push_back({{"v0", g.v0},
                               {"converged", g.converged},
                               {"feasible", g.feasible},
                               {"objective", g.objective},
                               {"worst_violation", g.worst_violation}});
    }
    report["windows"].push_back(std::move(entry));
  }
  gridtrip::write_file(out / "mitigation.csv", csv);
  gridtrip::write_file(out / "mitigation.json", report.dump(2) + "\n");

  std::printf("mitigate: %zu windows\n", windows.size());
  return 0;
}

int cmd_oracle(const CommonOptions& opts, int step, int exhaustive_limit) {
  const auto feeder = load_feeder(opts);
  const auto series = load_series(opts, feeder);
  const auto out = prepare_out_dir(opts);
  const auto sens = path_impedances(feeder);

  if (step >= series.step_count()) {
    throw gridtrip::InputError(gridtrip::ErrorCode::InvalidArgument,
                               "--step " + std::to_string(step) +
                                   " outside series of " +
                                   std::to_string(series.step_count()) + " steps");
  }

  gridtrip::ResolveOptions resolve_opts;
  resolve_opts.exhaustive_limit = exhaustive_limit;

  std::string csv = "t,config_index,on_count,s,chosen\n";
  long long rows = 0;
  for (int t = 0; t < series.step_count(); ++t) {
    if (step >= 0 && t != step) continue;
    const Eigen::VectorXd p = series.p.row(t);
    const Eigen::VectorXd q = series.q.row(t);
    const auto configs = oracle_enumerate(p, q, feeder, sens, exhaustive_limit);
    const auto outcome = resolve_config(p, q, feeder, sens, resolve_opts);
    for (std::size_t i = 0; i < configs.size(); ++i) {
      csv += gridtrip::format_value(series.times[t]) + "," + std::to_string(i) + "," +
             std::to_string(configs[i].on_count()) + "," + config_bits(configs[i]) +
             "," + (configs[i] == outcome.config ? "1" : "0") + "\n";
      ++rows;
    }
  }
  gridtrip::write_file(out / "oracle.csv", csv);

  std::printf("oracle: %lld consistent configurations listed\n", rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Voltage-driven PV tripping risk: assessment, validation, sweeps, and "
      "mitigation on radial feeders"};
  app.require_subcommand(1);

  CommonOptions assess_opts;
  std::string resources_path;
  auto* assess = app.add_subcommand(
      "assess", "Bound per-node stay-connected probabilities from one window");
  add_common_options(*assess, assess_opts, /*with_window=*/false);
  assess->add_option("--resources", resources_path,
                     "Voltage-dependent resource list (JSON) shifting mean injections");

  CommonOptions validate_opts;
  auto* validate = app.add_subcommand(
      "validate", "Compare the model bound against the switching simulator per window");
  add_common_options(*validate, validate_opts, /*with_window=*/true);

  CommonOptions sweep_opts;
  std::string axis_text = "penetration";
  std::string grid_text;
  bool restat = false;
  int threads = 1;
  auto* sweep = app.add_subcommand(
      "sweep", "Re-run the validation across a grid of one scenario parameter");
  add_common_options(*sweep, sweep_opts, /*with_window=*/true);
  sweep->add_option("--axis", axis_text, "penetration, pf, or deadband")
      ->capture_default_str();
  sweep->add_option("--grid", grid_text, "Axis grid START:STOP:STEPS")->required();
  sweep->add_flag("--restat-from-series", restat,
                  "Re-estimate statistics from mutated series instead of scaling them");
  sweep->add_option("--threads", threads, "Worker threads across grid points")
      ->capture_default_str();

  CommonOptions mitigate_opts;
  std::optional<double> v0_initial;
  std::string rate_band;
  int grid_points = 401;
  bool no_carry = false;
  auto* mitigate = app.add_subcommand(
      "mitigate", "Choose per-window reference voltages maximizing delivered PV power");
  add_common_options(*mitigate, mitigate_opts, /*with_window=*/true);
  mitigate->add_option("--v0-initial", v0_initial,
                       "Starting reference voltage (squared per-unit); default: feeder v0");
  mitigate->add_option("--rate-band", rate_band,
                       "Allowed v0 change MIN,MAX per window (squared per-unit)");
  mitigate->add_option("--grid-points", grid_points, "Candidate v0 values per window")
      ->capture_default_str();
  mitigate->add_flag("--no-carry-forward", no_carry,
                     "Restart every window from --v0-initial instead of chaining");

  CommonOptions oracle_opts;
  int step = -1;
  int exhaustive_limit = 20;
  auto* oracle = app.add_subcommand(
      "oracle", "Enumerate every band-consistent switch configuration per step");
  add_common_options(*oracle, oracle_opts, /*with_window=*/false);
  oracle->add_option("--step", step, "Restrict to one step index (default: all)")
      ->capture_default_str();
  oracle->add_option("--exhaustive-limit", exhaustive_limit,
                     "Largest switched-node count to enumerate")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(assess)) return cmd_assess(assess_opts, resources_path);
    if (app.got_subcommand(validate)) return cmd_validate(validate_opts);
    if (app.got_subcommand(sweep)) {
      return cmd_sweep(sweep_opts, axis_text, grid_text, restat, threads);
    }
    if (app.got_subcommand(mitigate)) {
      return cmd_mitigate(mitigate_opts, v0_initial, rate_band, grid_points, no_carry);
    }
    if (app.got_subcommand(oracle)) {
      return cmd_oracle(oracle_opts, step, exhaustive_limit);
    }
  } catch (const gridtrip::InfeasibleError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const gridtrip::ConvergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const gridtrip::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
