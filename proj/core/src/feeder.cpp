#include "gridtrip/feeder.hpp"

#include <json.hpp>

#include <algorithm>
#include <deque>
#include <set>
#include <unordered_map>
#include <utility>

#include "gridtrip/text.hpp"

namespace gridtrip {

namespace {

using nlohmann::json;

// Rejects keys outside `allowed` so typos fail loudly instead of being
// silently ignored.
void require_keys(const json& obj, const std::set<std::string>& allowed,
                  const std::string& where) {
  for (const auto& item : obj.items()) {
    if (!allowed.contains(item.key())) {
      throw InputError(ErrorCode::ParseFailure,
                       where + ": unknown key \"" + item.key() + "\"");
    }
  }
  for (const auto& key : allowed) {
    if (!obj.contains(key)) {
      throw InputError(ErrorCode::ParseFailure,
                       where + ": missing key \"" + key + "\"");
    }
  }
}

double number_at(const json& obj, const char* key, const std::string& where) {
  const auto& value = obj.at(key);
  if (!value.is_number()) {
    throw InputError(ErrorCode::ParseFailure,
                     where + ": \"" + key + "\" must be a number");
  }
  return value.get<double>();
}

std::string string_at(const json& obj, const char* key, const std::string& where) {
  const auto& value = obj.at(key);
  if (!value.is_string()) {
    throw InputError(ErrorCode::ParseFailure,
                     where + ": \"" + key + "\" must be a string");
  }
  return value.get<std::string>();
}

NodeRole parse_role(const std::string& text, const std::string& where) {
  if (text == "switched-PV") return NodeRole::SwitchedPv;
  if (text == "fixed-load") return NodeRole::FixedLoad;
  if (text == "fixed-injection") return NodeRole::FixedInjection;
  throw InputError(ErrorCode::ParseFailure, where + ": unknown role \"" + text + "\"");
}

}  // namespace

VoltageBand VoltageBand::from_voltage_pu(double v_min_pu, double v_max_pu) {
  VoltageBand band{v_min_pu * v_min_pu, v_max_pu * v_max_pu};
  band.validate();
  return band;
}

void VoltageBand::validate() const {
  if (!(v_min > 0.0) || !(v_max > v_min)) {
    throw InputError(ErrorCode::InvalidBand,
                     "voltage band requires 0 < v_min < v_max, got [" +
                         format_value(v_min) + ", " + format_value(v_max) + "]");
  }
}

std::string_view to_string(NodeRole role) {
  switch (role) {
    case NodeRole::SwitchedPv: return "switched-PV";
    case NodeRole::FixedLoad: return "fixed-load";
    case NodeRole::FixedInjection: return "fixed-injection";
  }
  return "unknown";
}

FeederModel::FeederModel(std::string reference_id,
                         std::vector<FeederNode> nodes,
                         std::vector<int> parent,
                         std::vector<double> branch_r,
                         std::vector<double> branch_x,
                         double reference_v0,
                         VoltageBand band)
    : reference_id_(std::move(reference_id)),
      nodes_(std::move(nodes)),
      parent_(std::move(parent)),
      branch_r_(std::move(branch_r)),
      branch_x_(std::move(branch_x)),
      reference_v0_(reference_v0),
      band_(band) {
  const auto n = nodes_.size();
  if (parent_.size() != n || branch_r_.size() != n || branch_x_.size() != n) {
    throw InputError(ErrorCode::DimensionMismatch,
                     "feeder arrays disagree on node count");
  }
  band_.validate();
  if (!(reference_v0_ > 0.0)) {
    throw InputError(ErrorCode::InvalidArgument,
                     "reference v0 must be positive, got " + format_value(reference_v0_));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (branch_r_[i] < 0.0 || branch_x_[i] < 0.0) {
      throw InputError(ErrorCode::NegativeImpedance,
                       "negative impedance on branch of node \"" + nodes_[i].id + "\"");
    }
    if (parent_[i] < -1 || parent_[i] >= static_cast<int>(n)) {
      throw InputError(ErrorCode::DimensionMismatch,
                       "parent index out of range for node \"" + nodes_[i].id + "\"");
    }
  }
  // Every node must reach the reference (-1) without revisiting: walks longer
  // than N prove a parent-pointer loop.
  for (std::size_t i = 0; i < n; ++i) {
    int hops = 0;
    int at = static_cast<int>(i);
    while (at != -1) {
      at = parent_[at];
      if (++hops > static_cast<int>(n)) {
        throw InputError(ErrorCode::CycleDetected,
                         "cycle through node \"" + nodes_[i].id + "\"");
      }
    }
  }
}

std::vector<bool> FeederModel::switched_mask() const {
  std::vector<bool> mask(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    mask[i] = nodes_[i].role == NodeRole::SwitchedPv;
  }
  return mask;
}

int FeederModel::switched_count() const {
  int count = 0;
  for (const auto& node : nodes_) {
    count += node.role == NodeRole::SwitchedPv ? 1 : 0;
  }
  return count;
}

int FeederModel::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

std::vector<std::string> FeederModel::node_ids() const {
  std::vector<std::string> ids;
  ids.reserve(nodes_.size());
  for (const auto& node : nodes_) ids.push_back(node.id);
  return ids;
}

FeederModel with_band(const FeederModel& model, VoltageBand band) {
  std::vector<int> parent(model.node_count());
  std::vector<double> r(model.node_count());
  std::vector<double> x(model.node_count());
  for (int i = 0; i < model.node_count(); ++i) {
    parent[i] = model.parent(i);
    r[i] = model.branch_r(i);
    x[i] = model.branch_x(i);
  }
  return FeederModel(model.reference_id(), model.nodes(), std::move(parent),
                     std::move(r), std::move(x), model.reference_v0(), band);
}

FeederModel with_reference_v0(const FeederModel& model, double v0) {
  std::vector<int> parent(model.node_count());
  std::vector<double> r(model.node_count());
  std::vector<double> x(model.node_count());
  for (int i = 0; i < model.node_count(); ++i) {
    parent[i] = model.parent(i);
    r[i] = model.branch_r(i);
    x[i] = model.branch_x(i);
  }
  return FeederModel(model.reference_id(), model.nodes(), std::move(parent),
                     std::move(r), std::move(x), v0, model.band());
}

FeederModel parse_feeder(const std::filesystem::path& path) {
  return parse_feeder_text(read_file(path), path.string());
}

FeederModel parse_feeder_text(std::string_view text, std::string_view origin) {
  const std::string where(origin);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(ErrorCode::ParseFailure, where + ": " + e.what());
  }
  if (!doc.is_object()) {
    throw InputError(ErrorCode::ParseFailure, where + ": top level must be an object");
  }
  require_keys(doc, {"nodes", "branches", "reference", "v0", "band"}, where);

  const auto& band_obj = doc.at("band");
  if (!band_obj.is_object()) {
    throw InputError(ErrorCode::ParseFailure, where + ": \"band\" must be an object");
  }
  require_keys(band_obj, {"v_min_pu", "v_max_pu"}, where + ": band");
  const VoltageBand band = VoltageBand::from_voltage_pu(
      number_at(band_obj, "v_min_pu", where + ": band"),
      number_at(band_obj, "v_max_pu", where + ": band"));

  const double v0 = number_at(doc, "v0", where);
  const std::string reference = string_at(doc, "reference", where);

  if (!doc.at("nodes").is_array() || doc.at("nodes").empty()) {
    throw InputError(ErrorCode::ParseFailure, where + ": \"nodes\" must be a non-empty array");
  }
  if (!doc.at("branches").is_array()) {
    throw InputError(ErrorCode::ParseFailure, where + ": \"branches\" must be an array");
  }

  // Collect all declared nodes (the reference bus included) in file order.
  std::vector<FeederNode> declared;
  std::unordered_map<std::string, int> declared_index;
  for (const auto& entry : doc.at("nodes")) {
    if (!entry.is_object()) {
      throw InputError(ErrorCode::ParseFailure, where + ": node entries must be objects");
    }
    require_keys(entry, {"id", "role", "phase"}, where + ": node");
    FeederNode node;
    node.id = string_at(entry, "id", where + ": node");
    node.role = parse_role(string_at(entry, "role", where + ": node \"" + node.id + "\""),
                           where + ": node \"" + node.id + "\"");
    node.phase = string_at(entry, "phase", where + ": node \"" + node.id + "\"");
    if (declared_index.contains(node.id)) {
      throw InputError(ErrorCode::DuplicateNode,
                       where + ": duplicate node id \"" + node.id + "\"");
    }
    declared_index.emplace(node.id, static_cast<int>(declared.size()));
    declared.push_back(std::move(node));
  }
  if (!declared_index.contains(reference)) {
    throw InputError(ErrorCode::UnknownNode,
                     where + ": reference \"" + reference + "\" is not a declared node");
  }

  struct Edge {
    int a;
    int b;
    double r;
    double x;
  };
  std::vector<Edge> edges;
  std::set<std::pair<int, int>> seen_pairs;
  for (const auto& entry : doc.at("branches")) {
    if (!entry.is_object()) {
      throw InputError(ErrorCode::ParseFailure, where + ": branch entries must be objects");
    }
    require_keys(entry, {"from", "to", "r", "x"}, where + ": branch");
    const std::string from = string_at(entry, "from", where + ": branch");
    const std::string to = string_at(entry, "to", where + ": branch");
    const std::string label = where + ": branch " + from + "-" + to;
    if (!declared_index.contains(from) || !declared_index.contains(to)) {
      throw InputError(ErrorCode::UnknownNode, label + ": undeclared endpoint");
    }
    const double r = number_at(entry, "r", label);
    const double x = number_at(entry, "x", label);
    if (r < 0.0 || x < 0.0) {
      throw InputError(ErrorCode::NegativeImpedance, label + ": negative impedance");
    }
    Edge edge{declared_index.at(from), declared_index.at(to), r, x};
    if (edge.a == edge.b) {
      throw InputError(ErrorCode::CycleDetected, label + ": self loop");
    }
    auto pair = std::minmax(edge.a, edge.b);
    if (!seen_pairs.emplace(pair.first, pair.second).second) {
      throw InputError(ErrorCode::CycleDetected, label + ": duplicate branch");
    }
    edges.push_back(edge);
  }

  // Root the undirected tree at the reference with a breadth-first walk.
  const int total = static_cast<int>(declared.size());
  const int root = declared_index.at(reference);
  std::vector<std::vector<int>> adjacency(total);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    adjacency[edges[e].a].push_back(static_cast<int>(e));
    adjacency[edges[e].b].push_back(static_cast<int>(e));
  }
  std::vector<int> parent_declared(total, -2);  // -2 = unvisited
  std::vector<int> via_edge(total, -1);
  parent_declared[root] = -1;
  std::deque<int> queue{root};
  while (!queue.empty()) {
    const int at = queue.front();
    queue.pop_front();
    for (int e : adjacency[at]) {
      const int other = edges[e].a == at ? edges[e].b : edges[e].a;
      if (other == at) continue;
      if (parent_declared[other] != -2) {
        if (via_edge[at] != e) {
          throw InputError(ErrorCode::CycleDetected,
                           where + ": cycle through node \"" + declared[other].id + "\"");
        }
        continue;
      }
      parent_declared[other] = at;
      via_edge[other] = e;
      queue.push_back(other);
    }
  }
  for (int i = 0; i < total; ++i) {
    if (parent_declared[i] == -2) {
      throw InputError(ErrorCode::DisconnectedNode,
                       where + ": node \"" + declared[i].id + "\" is not connected to the reference");
    }
  }

  // Re-index without the reference bus, preserving file order.
  std::vector<int> dense(total, -1);
  std::vector<FeederNode> nodes;
  for (int i = 0; i < total; ++i) {
    if (i == root) continue;
    dense[i] = static_cast<int>(nodes.size());
    nodes.push_back(declared[i]);
  }
  std::vector<int> parent(nodes.size());
  std::vector<double> branch_r(nodes.size());
  std::vector<double> branch_x(nodes.size());
  for (int i = 0; i < total; ++i) {
    if (i == root) continue;
    const int d = dense[i];
    parent[d] = parent_declared[i] == root ? -1 : dense[parent_declared[i]];
    branch_r[d] = edges[via_edge[i]].r;
    branch_x[d] = edges[via_edge[i]].x;
  }

  return FeederModel(reference, std::move(nodes), std::move(parent),
                     std::move(branch_r), std::move(branch_x), v0, band);
}

SensitivityMatrices path_impedances(const FeederModel& model) {
  const int n = model.node_count();
  SensitivityMatrices sens{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n)};

  // Accumulated impedance from the reference down to each node.
  std::vector<double> depth_r(n, -1.0);
  std::vector<double> depth_x(n, -1.0);
  auto fill_depth = [&](auto&& self, int i) -> void {
    if (depth_r[i] >= 0.0) return;
    if (model.parent(i) == -1) {
      depth_r[i] = model.branch_r(i);
      depth_x[i] = model.branch_x(i);
      return;
    }
    self(self, model.parent(i));
    depth_r[i] = depth_r[model.parent(i)] + model.branch_r(i);
    depth_x[i] = depth_x[model.parent(i)] + model.branch_x(i);
  };
  for (int i = 0; i < n; ++i) fill_depth(fill_depth, i);

  // The common part of two root paths is the root path of the deepest common
  // ancestor, so R(i,j) = 2 * depth_r(lca(i,j)).
  std::vector<int> hops(n, 0);
  for (int i = 0; i < n; ++i) {
    int at = i;
    while (at != -1) {
      ++hops[i];
      at = model.parent(at);
    }
  }
  for (int i = 0; i < n; ++i) {
    sens.R(i, i) = 2.0 * depth_r[i];
    sens.X(i, i) = 2.0 * depth_x[i];
    for (int j = i + 1; j < n; ++j) {
      int a = i;
      int b = j;
      int ha = hops[i];
      int hb = hops[j];
      while (ha > hb) {
        a = model.parent(a);
        --ha;
      }
      while (hb > ha) {
        b = model.parent(b);
        --hb;
      }
      while (a != b) {
        a = model.parent(a);
        b = model.parent(b);
      }
      const double r = a == -1 ? 0.0 : 2.0 * depth_r[a];
      const double x = a == -1 ? 0.0 : 2.0 * depth_x[a];
      sens.R(i, j) = sens.R(j, i) = r;
      sens.X(i, j) = sens.X(j, i) = x;
    }
  }
  return sens;
}

}  // namespace gridtrip
