#pragma once

// Seeded generators for random feeders, statistics, and synthetic series used
// across the test binaries. Everything is deterministic given the engine
// state.

#include <Eigen/Core>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "gridtrip/feeder.hpp"
#include "gridtrip/power_stats.hpp"
#include "gridtrip/rng.hpp"

namespace testfix {

struct RandomFeederOptions {
  int min_nodes = 4;
  int max_nodes = 10;
  double switched_fraction = 0.7;  // probability a node hosts switched PV
  double impedance_min = 0.01;
  double impedance_max = 0.08;
  gridtrip::VoltageBand band{0.81, 1.21};
  double v0 = 1.0;
};

// Random tree: node i attaches to a uniformly chosen earlier node (or the
// reference), guaranteeing radial structure by construction. At least one
// node is switched.
inline gridtrip::FeederModel random_feeder(std::mt19937_64& rng,
                                           const RandomFeederOptions& options = {}) {
  const int n = gridtrip::uniform_int(rng, options.min_nodes, options.max_nodes);
  std::vector<gridtrip::FeederNode> nodes;
  std::vector<int> parent;
  std::vector<double> r;
  std::vector<double> x;
  bool any_switched = false;
  for (int i = 0; i < n; ++i) {
    gridtrip::FeederNode node;
    node.id = "n" + std::to_string(i + 1);
    const bool switched = gridtrip::uniform01(rng) < options.switched_fraction;
    node.role = switched ? gridtrip::NodeRole::SwitchedPv : gridtrip::NodeRole::FixedLoad;
    any_switched = any_switched || switched;
    node.phase = "a";
    nodes.push_back(node);
    parent.push_back(i == 0 ? -1 : gridtrip::uniform_int(rng, -1, i - 1));
    r.push_back(gridtrip::uniform(rng, options.impedance_min, options.impedance_max));
    x.push_back(gridtrip::uniform(rng, options.impedance_min, options.impedance_max));
  }
  if (!any_switched) nodes.front().role = gridtrip::NodeRole::SwitchedPv;
  return gridtrip::FeederModel("ref", std::move(nodes), std::move(parent), std::move(r),
                               std::move(x), options.v0, options.band);
}

// Valid-by-construction statistics: estimate them from a short correlated
// sample so every invariant (PSD blocks, split identity) holds automatically.
inline gridtrip::PowerStatistics random_statistics(std::mt19937_64& rng, int n,
                                                   double scale = 0.4) {
  const int t = 48;
  Eigen::MatrixXd loading_p(n, n);
  Eigen::MatrixXd loading_q(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      loading_p(i, j) = gridtrip::uniform(rng, -1.0, 1.0);
      loading_q(i, j) = gridtrip::uniform(rng, -1.0, 1.0);
    }
  }
  Eigen::VectorXd base_p(n);
  Eigen::VectorXd base_q(n);
  for (int j = 0; j < n; ++j) {
    base_p(j) = gridtrip::uniform(rng, -scale, scale);
    base_q(j) = gridtrip::uniform(rng, -scale, scale);
  }
  Eigen::MatrixXd p(t, n);
  Eigen::MatrixXd q(t, n);
  for (int s = 0; s < t; ++s) {
    Eigen::VectorXd z(n);
    for (int j = 0; j < n; ++j) z(j) = gridtrip::normal01(rng);
    p.row(s) = (base_p + scale * 0.5 * loading_p * z).transpose();
    for (int j = 0; j < n; ++j) z(j) = gridtrip::normal01(rng);
    q.row(s) = (base_q + scale * 0.5 * loading_q * z).transpose();
  }
  return gridtrip::estimate_statistics(p, q);
}

inline Eigen::VectorXd random_lambda(std::mt19937_64& rng, int n) {
  Eigen::VectorXd lambda(n);
  for (int i = 0; i < n; ++i) lambda(i) = gridtrip::uniform01(rng);
  return lambda;
}

struct SeriesShape {
  int steps = 256;
  double pv_peak = 0.5;      // available PV ceiling per node
  double load_peak = 0.3;    // load magnitude per node
  double noise = 0.1;        // relative high-frequency noise
  double smoothness = 0.9;   // AR(1) coefficient of the noise
};

// Synthetic nodal series: switched nodes produce a nonnegative bell-shaped
// PV profile, fixed nodes a negative load profile, both with smooth AR(1)
// perturbations. Reactive power follows active power at a mild ratio.
inline gridtrip::TimeSeries synth_series(std::mt19937_64& rng,
                                         const gridtrip::FeederModel& feeder,
                                         const SeriesShape& shape = {}) {
  const int n = feeder.node_count();
  const int t = shape.steps;
  gridtrip::TimeSeries series;
  series.node_ids = feeder.node_ids();
  series.times.resize(t);
  series.p.resize(t, n);
  series.q.resize(t, n);
  const auto mask = feeder.switched_mask();
  std::vector<double> ar(n, 0.0);
  std::vector<double> magnitude(n);
  std::vector<double> q_ratio(n);
  for (int j = 0; j < n; ++j) {
    magnitude[j] = gridtrip::uniform(rng, 0.5, 1.0);
    q_ratio[j] = gridtrip::uniform(rng, -0.3, 0.1);
  }
  for (int s = 0; s < t; ++s) {
    series.times[s] = s;
    const double phase = static_cast<double>(s) / t;
    const double bell = std::sin(3.14159265358979323846 * phase);
    for (int j = 0; j < n; ++j) {
      ar[j] = shape.smoothness * ar[j] +
              (1.0 - shape.smoothness) * gridtrip::normal01(rng);
      const double wiggle = 1.0 + shape.noise * ar[j];
      double p = 0.0;
      if (mask[j]) {
        p = std::max(0.0, shape.pv_peak * magnitude[j] * bell * wiggle);
      } else {
        p = -shape.load_peak * magnitude[j] * (0.7 + 0.3 * bell) * std::max(0.2, wiggle);
      }
      series.p(s, j) = p;
      series.q(s, j) = q_ratio[j] * p;
    }
  }
  return series;
}

}  // namespace testfix
