#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gridtrip/errors.hpp"

namespace gridtrip {

// Inverter protection window in squared per-unit voltage. All voltage math in
// this library works on squared magnitudes, so v_min/v_max here are the
// squares of the usual per-unit limits (0.9 pu -> 0.81, 1.1 pu -> 1.21).
struct VoltageBand {
  double v_min = 0.0;
  double v_max = 0.0;

  [[nodiscard]] double center() const { return 0.5 * (v_max + v_min); }
  [[nodiscard]] double half_width() const { return 0.5 * (v_max - v_min); }
  [[nodiscard]] bool contains(double v) const { return v_min <= v && v <= v_max; }

  // Builds a band from plain per-unit voltage limits (squares them).
  static VoltageBand from_voltage_pu(double v_min_pu, double v_max_pu);

  // Throws InputError(InvalidBand) unless 0 < v_min < v_max.
  void validate() const;
};

enum class NodeRole {
  SwitchedPv,      // inverter that disconnects outside the protection band
  FixedLoad,       // consumption, never switches
  FixedInjection,  // generation without protection switching
};

[[nodiscard]] std::string_view to_string(NodeRole role);

struct FeederNode {
  std::string id;
  NodeRole role = NodeRole::FixedLoad;
  std::string phase;
};

// Radial feeder rooted at the reference bus. Non-reference nodes are indexed
// densely 0..N-1 in file order; the reference bus is excluded from all
// matrices and is reachable from every node through parent pointers.
class FeederModel {
 public:
  FeederModel(std::string reference_id,
              std::vector<FeederNode> nodes,
              std::vector<int> parent,
              std::vector<double> branch_r,
              std::vector<double> branch_x,
              double reference_v0,
              VoltageBand band);

  [[nodiscard]] int node_count() const { return static_cast<int>(nodes_.size()); }
  [[nodiscard]] const std::vector<FeederNode>& nodes() const { return nodes_; }
  [[nodiscard]] const FeederNode& node(int i) const { return nodes_.at(i); }
  [[nodiscard]] const std::string& reference_id() const { return reference_id_; }

  // Parent of node i on the path to the root; -1 means the reference bus.
  [[nodiscard]] int parent(int i) const { return parent_.at(i); }
  // Impedance of the branch connecting node i to its parent.
  [[nodiscard]] double branch_r(int i) const { return branch_r_.at(i); }
  [[nodiscard]] double branch_x(int i) const { return branch_x_.at(i); }

  [[nodiscard]] double reference_v0() const { return reference_v0_; }
  [[nodiscard]] const VoltageBand& band() const { return band_; }

  // True per node for role == SwitchedPv.
  [[nodiscard]] std::vector<bool> switched_mask() const;
  [[nodiscard]] int switched_count() const;

  // Dense index for a node id, or -1 when unknown (reference id included).
  [[nodiscard]] int index_of(std::string_view id) const;
  [[nodiscard]] std::vector<std::string> node_ids() const;

 private:
  std::string reference_id_;
  std::vector<FeederNode> nodes_;
  std::vector<int> parent_;
  std::vector<double> branch_r_;
  std::vector<double> branch_x_;
  double reference_v0_;
  VoltageBand band_;
};

// Parses the feeder description (JSON with keys nodes/branches/reference/
// v0/band) and validates radial structure. Throws InputError with a message
// naming the offending field, node, or branch.
[[nodiscard]] FeederModel parse_feeder(const std::filesystem::path& path);
[[nodiscard]] FeederModel parse_feeder_text(std::string_view text,
                                            std::string_view origin = "<inline>");

// Copies of a feeder with one operating parameter replaced.
[[nodiscard]] FeederModel with_band(const FeederModel& model, VoltageBand band);
[[nodiscard]] FeederModel with_reference_v0(const FeederModel& model, double v0);

// Squared-voltage sensitivity matrices: R(i,j) and X(i,j) are twice the sums
// of branch resistance/reactance over the common part of the root paths of
// nodes i and j. Symmetric, nonnegative for nonnegative impedances.
struct SensitivityMatrices {
  Eigen::MatrixXd R;
  Eigen::MatrixXd X;
};

[[nodiscard]] SensitivityMatrices path_impedances(const FeederModel& model);

}  // namespace gridtrip
