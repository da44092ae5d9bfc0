#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "poddp/belief.hpp"
#include "poddp/types.hpp"

namespace poddp {

/// Latent indices taken at successive branch points. Empty is the root.
struct HistoryPath {
  std::vector<int> branches;

  HistoryPath() = default;
  explicit HistoryPath(std::vector<int> b) : branches(std::move(b)) {}

  int depth() const { return static_cast<int>(branches.size()); }
  bool is_root() const { return branches.empty(); }

  HistoryPath child(int z) const {
    HistoryPath h = *this;
    h.branches.push_back(z);
    return h;
  }

  HistoryPath parent() const {
    if (is_root()) throw InvalidArgument("HistoryPath: root has no parent");
    HistoryPath h = *this;
    h.branches.pop_back();
    return h;
  }

  /// "" for the root, otherwise one digit per branch ("0", "01", ...).
  std::string to_string() const {
    std::string s;
    for (int z : branches) s.push_back(static_cast<char>('0' + z));
    return s;
  }

  static HistoryPath from_string(const std::string& s) {
    HistoryPath h;
    for (char c : s) {
      if (c < '0' || c > '9') throw InvalidArgument("HistoryPath: bad history string '" + s + "'");
      h.branches.push_back(c - '0');
    }
    return h;
  }

  auto operator<=>(const HistoryPath&) const = default;
  bool operator==(const HistoryPath&) const = default;
};

/// Branch schedule tau_0 = 0 < tau_1 < ... < tau_k = T.
class SegmentSchedule {
 public:
  SegmentSchedule() : SegmentSchedule(std::vector<int>{0, 1}) {}
  explicit SegmentSchedule(std::vector<int> breakpoints) : tau_(std::move(breakpoints)) {
    if (tau_.size() < 2 || tau_.front() != 0)
      throw InvalidArgument("SegmentSchedule: need tau_0 = 0 and at least one segment");
    for (std::size_t i = 1; i < tau_.size(); ++i)
      if (tau_[i] <= tau_[i - 1])
        throw InvalidArgument("SegmentSchedule: breakpoints must be strictly increasing");
  }

  /// k segments of (nearly) equal length over horizon T.
  static SegmentSchedule equal(int horizon, int segments) {
    if (segments < 1 || horizon < segments)
      throw InvalidArgument("SegmentSchedule: need 1 <= segments <= horizon");
    std::vector<int> tau(static_cast<std::size_t>(segments) + 1);
    for (int i = 0; i <= segments; ++i) tau[static_cast<std::size_t>(i)] = (i * horizon) / segments;
    return SegmentSchedule(std::move(tau));
  }

  int segments() const { return static_cast<int>(tau_.size()) - 1; }
  int horizon() const { return tau_.back(); }
  int begin(int d) const { return tau_.at(static_cast<std::size_t>(d)); }
  int end(int d) const { return tau_.at(static_cast<std::size_t>(d) + 1); }
  int length(int d) const { return end(d) - begin(d); }
  const std::vector<int>& breakpoints() const { return tau_; }

  /// Schedule of the segments from d onward, shifted to start at 0.
  SegmentSchedule tail(int d) const {
    std::vector<int> t;
    for (std::size_t i = static_cast<std::size_t>(d); i < tau_.size(); ++i)
      t.push_back(tau_[i] - tau_[static_cast<std::size_t>(d)]);
    return SegmentSchedule(std::move(t));
  }

  bool operator==(const SegmentSchedule&) const = default;

 private:
  std::vector<int> tau_;
};

/// Layout of the per-segment stacked belief state
///   sigma = (x^0, ..., x^{n-1}, beta^0, ..., beta^{n-1}, w)
/// where x^z and beta^z follow the maximum-likelihood rollout of latent z and
/// w holds the segment-start logits that weight the branches.
struct StackedLayout {
  int state_dim = 0;
  int num_latents = 1;

  int dim() const { return num_latents * state_dim + num_latents * num_latents + num_latents; }
  int x_offset(int z) const { return z * state_dim; }
  int beta_offset(int z) const { return num_latents * state_dim + z * num_latents; }
  int w_offset() const { return num_latents * state_dim + num_latents * num_latents; }
  int belief_state_dim() const { return state_dim + num_latents; }

  /// Embeds a single belief state (x, beta) as every branch copy.
  Vector lift(const Vector& x, const Vector& beta) const { return lift(x, beta, beta); }

  /// Embeds an observed state with current logits and segment-start logits.
  Vector lift(const Vector& x, const Vector& beta, const Vector& beta_start) const {
    Vector s(dim());
    for (int z = 0; z < num_latents; ++z) {
      s.segment(x_offset(z), state_dim) = x;
      s.segment(beta_offset(z), num_latents) = beta;
    }
    s.segment(w_offset(), num_latents) = beta_start;
    return s;
  }

  /// d sigma / d s for the embedding of a belief state s = (x, beta).
  Matrix lift_jacobian() const {
    Matrix E = Matrix::Zero(dim(), belief_state_dim());
    for (int z = 0; z < num_latents; ++z) {
      E.block(x_offset(z), 0, state_dim, state_dim).setIdentity();
      E.block(beta_offset(z), state_dim, num_latents, num_latents).setIdentity();
    }
    E.block(w_offset(), state_dim, num_latents, num_latents).setIdentity();
    return E;
  }

  Vector branch_x(const Vector& s, int z) const { return s.segment(x_offset(z), state_dim); }
  Vector branch_beta(const Vector& s, int z) const {
    return s.segment(beta_offset(z), num_latents);
  }
  Vector weights_logits(const Vector& s) const { return s.segment(w_offset(), num_latents); }
};

/// Quadratic model of the expected cost-to-go around a node's nominal start
/// belief state: V(ds) = value + dV + V_s.ds + 0.5 ds'V_ss ds.
struct QuadraticValueModel {
  double value = 0.0;  // nominal cost-to-go
  double dV = 0.0;     // predicted change under the updated policy
  Vector V_s;
  Matrix V_ss;

  double evaluate(const Vector& ds) const {
    return value + dV + V_s.dot(ds) + 0.5 * ds.dot(V_ss * ds);
  }
};

struct NodeGains {
  std::vector<Vector> k;  // open-loop updates, one per step
  std::vector<Matrix> K;  // feedback on the stacked state deviation
  bool empty() const { return k.empty(); }
};

using GainSchedule = std::map<HistoryPath, NodeGains>;

struct TreeNode {
  HistoryPath history;
  int t_begin = 0;
  int t_end = 0;
  BeliefState start;
  std::vector<Vector> controls;  // one per step of the segment
  std::vector<Vector> stacked;   // segment-length + 1 stacked states (empty if not rolled out)
  NodeGains gains;
  QuadraticValueModel value_model;
  double cost_to_go = 0.0;

  int length() const { return t_end - t_begin; }
};

/// History-indexed contingency plan: one node per branch point history,
/// each holding the controls and stacked states of its segment.
struct TrajectoryTree {
  int state_dim = 0;
  int control_dim = 0;
  int num_latents = 1;
  SegmentSchedule schedule;
  std::map<HistoryPath, TreeNode> nodes;

  StackedLayout layout() const { return {state_dim, num_latents}; }
  int branch_levels() const { return schedule.segments() - 1; }

  const TreeNode& root() const { return node(HistoryPath{}); }
  const TreeNode& node(const HistoryPath& h) const {
    auto it = nodes.find(h);
    if (it == nodes.end())
      throw StructuralCorruption("TrajectoryTree: missing node '" + h.to_string() + "'");
    return it->second;
  }
  TreeNode& node(const HistoryPath& h) {
    auto it = nodes.find(h);
    if (it == nodes.end())
      throw StructuralCorruption("TrajectoryTree: missing node '" + h.to_string() + "'");
    return it->second;
  }

  bool is_leaf(const HistoryPath& h) const { return h.depth() >= branch_levels(); }

  /// Belief state of branch z at local step j of node h.
  BeliefState branch_state(const HistoryPath& h, int z, int j) const {
    const TreeNode& n = node(h);
    const StackedLayout lay = layout();
    const Vector& s = n.stacked.at(static_cast<std::size_t>(j));
    return {lay.branch_x(s, z), BeliefLogits(lay.branch_beta(s, z))};
  }
};

/// (|Z|^(L+1) - 1) / (|Z| - 1) nodes for L branch levels; L + 1 when |Z| = 1.
inline std::int64_t node_count(int num_latents, int num_branch_levels) {
  if (num_latents < 1) throw InvalidArgument("node_count: num_latents must be >= 1");
  if (num_branch_levels < 0) throw InvalidArgument("node_count: negative branch levels");
  if (num_latents == 1) return num_branch_levels + 1;
  std::int64_t power = 1;
  for (int i = 0; i <= num_branch_levels; ++i) power *= num_latents;
  return (power - 1) / (num_latents - 1);
}

/// All histories of length <= levels, in lexicographic order.
inline std::vector<HistoryPath> enumerate_histories(int num_latents, int levels) {
  std::vector<HistoryPath> out;
  std::function<void(const HistoryPath&)> visit = [&](const HistoryPath& h) {
    out.push_back(h);
    if (h.depth() < levels)
      for (int z = 0; z < num_latents; ++z) visit(h.child(z));
  };
  visit(HistoryPath{});
  return out;
}

/// Post-order traversal: children (in latent order) before parents.
inline std::vector<HistoryPath> iterate_depth_first(const TrajectoryTree& tree) {
  std::vector<HistoryPath> order;
  std::function<void(const HistoryPath&)> visit = [&](const HistoryPath& h) {
    if (!tree.nodes.contains(h))
      throw StructuralCorruption("iterate_depth_first: missing node '" + h.to_string() + "'");
    if (!tree.is_leaf(h))
      for (int z = 0; z < tree.num_latents; ++z) visit(h.child(z));
    order.push_back(h);
  };
  visit(HistoryPath{});
  return order;
}

/// Tree with the given constant controls at every node and no rolled-out states.
inline TrajectoryTree make_control_tree(const SegmentSchedule& schedule, int state_dim,
                                        int control_dim, int num_latents, const Vector& fill) {
  if (fill.size() != control_dim) throw InvalidArgument("make_control_tree: fill dimension");
  TrajectoryTree tree;
  tree.state_dim = state_dim;
  tree.control_dim = control_dim;
  tree.num_latents = num_latents;
  tree.schedule = schedule;
  for (const auto& h : enumerate_histories(num_latents, schedule.segments() - 1)) {
    TreeNode n;
    n.history = h;
    n.t_begin = schedule.begin(h.depth());
    n.t_end = schedule.end(h.depth());
    n.controls.assign(static_cast<std::size_t>(n.length()), fill);
    tree.nodes.emplace(h, std::move(n));
  }
  return tree;
}

// ---------------------------------------------------------------------------
// JSON layout
//
// {
//   "format": "poddp-tree/1",
//   "state_dim": nx, "control_dim": nu, "num_latents": nz,
//   "breakpoints": [0, ..., T],
//   "nodes": {
//     "<history>": {
//       "t_begin": int, "t_end": int,
//       "start": {"x": [...], "beta": [...], "belief": [...]},
//       "controls": [[u_0], [u_1], ...],
//       "states": [[sigma_0], ..., [sigma_L]],
//       "branches": [{"z": 0, "x": [[...]], "belief": [[...]]}, ...],
//       "gains": {"k": [[...]], "K": [{"rows": r, "cols": c, "data": [row-major]}]},
//       "cost_to_go": double
//     }
//   }
// }
//
// "branches" is derived from "states" for plotting and ignored when reading.
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json vector_json(const Vector& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vector json_vector(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

inline nlohmann::json matrix_json(const Matrix& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Matrix json_matrix(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw InvalidArgument("tree JSON: matrix data size mismatch");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  return m;
}

template <class T, class F>
nlohmann::json list_json(const std::vector<T>& items, F&& f) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& item : items) arr.push_back(f(item));
  return arr;
}

}  // namespace detail

inline nlohmann::json tree_to_json(const TrajectoryTree& tree) {
  using nlohmann::json;
  json nodes = json::object();
  const StackedLayout lay = tree.layout();
  for (const auto& [h, n] : tree.nodes) {
    json jn;
    jn["t_begin"] = n.t_begin;
    jn["t_end"] = n.t_end;
    json start;
    start["x"] = detail::vector_json(n.start.x);
    start["beta"] = detail::vector_json(n.start.beta.beta);
    start["belief"] = n.start.beta.beta.size() > 0 ? detail::vector_json(softmax(n.start.beta.beta))
                                                   : json::array();
    jn["start"] = start;
    jn["controls"] = detail::list_json(n.controls, detail::vector_json);
    jn["states"] = detail::list_json(n.stacked, detail::vector_json);
    json branches = json::array();
    if (!n.stacked.empty()) {
      for (int z = 0; z < tree.num_latents; ++z) {
        json xs = json::array();
        json bs = json::array();
        for (const auto& s : n.stacked) {
          xs.push_back(detail::vector_json(lay.branch_x(s, z)));
          bs.push_back(detail::vector_json(softmax(lay.branch_beta(s, z))));
        }
        branches.push_back({{"z", z}, {"x", xs}, {"belief", bs}});
      }
    }
    jn["branches"] = branches;
    jn["gains"] = {{"k", detail::list_json(n.gains.k, detail::vector_json)},
                   {"K", detail::list_json(n.gains.K, detail::matrix_json)}};
    jn["cost_to_go"] = n.cost_to_go;
    nodes[h.to_string()] = jn;
  }
  return {{"format", "poddp-tree/1"},
          {"state_dim", tree.state_dim},
          {"control_dim", tree.control_dim},
          {"num_latents", tree.num_latents},
          {"breakpoints", tree.schedule.breakpoints()},
          {"nodes", nodes}};
}

inline TrajectoryTree tree_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "poddp-tree/1")
    throw InvalidArgument("tree JSON: unsupported format");
  TrajectoryTree tree;
  tree.state_dim = j.at("state_dim").get<int>();
  tree.control_dim = j.at("control_dim").get<int>();
  tree.num_latents = j.at("num_latents").get<int>();
  tree.schedule = SegmentSchedule(j.at("breakpoints").get<std::vector<int>>());
  for (const auto& [key, jn] : j.at("nodes").items()) {
    TreeNode n;
    n.history = HistoryPath::from_string(key);
    n.t_begin = jn.at("t_begin").get<int>();
    n.t_end = jn.at("t_end").get<int>();
    n.start.x = detail::json_vector(jn.at("start").at("x"));
    n.start.beta = BeliefLogits(detail::json_vector(jn.at("start").at("beta")));
    for (const auto& u : jn.at("controls")) n.controls.push_back(detail::json_vector(u));
    for (const auto& s : jn.at("states")) n.stacked.push_back(detail::json_vector(s));
    for (const auto& k : jn.at("gains").at("k")) n.gains.k.push_back(detail::json_vector(k));
    for (const auto& K : jn.at("gains").at("K")) n.gains.K.push_back(detail::json_matrix(K));
    n.cost_to_go = jn.at("cost_to_go").get<double>();
    tree.nodes.emplace(n.history, std::move(n));
  }
  return tree;
}

}  // namespace poddp
