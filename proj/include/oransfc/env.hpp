#pragma once

#include <array>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "oransfc/power.hpp"
#include "oransfc/sfc.hpp"

namespace oransfc {

struct RewardConfig {
  double c_shape = 1.0;
  double c_loop = 2.0;
  double c_seg = 20.0;
  double c_hop = 1.0;
  double c_embed_energy = 10.0;
  double c_path_energy = 10.0;
  double c_success = 100.0;
  double c_fail = 100.0;
  bool allow_revisit = false;
  int max_steps_per_diameter = 4;
};

enum class TerminalKind : std::uint8_t { None, Success, DeadEnd, BudgetExceeded, MaxSteps };

inline std::string_view terminal_name(TerminalKind k) {
  switch (k) {
    case TerminalKind::Success: return "SUCCESS";
    case TerminalKind::DeadEnd: return "DEADEND";
    case TerminalKind::BudgetExceeded: return "BUDGET_EXCEEDED";
    case TerminalKind::MaxSteps: return "MAX_STEPS";
    default: return "NONE";
  }
}

inline constexpr int kNodeFeatures = 5;  // DU, CU, UPF, degree, cpu
inline constexpr int kNumSegments = 3;
inline constexpr int kNumTargetRoles = 4;  // RU, DU, CU, UPF

/// N x 5 row-major node features for one ledger state.
struct NodeFeatures {
  int num_nodes = 0;
  std::vector<float> x;
  std::uint64_t version = 0;  // ledger version it was built from
};

struct Observation {
  int service = 0;
  int hour = 0;
  int segment_idx = 0;
  int current_node = 0;
  int target_node = 0;
  int target_role = 0;  // index into RU, DU, CU, UPF
  double dist_to_target = 0.0;    // hops / diameter, clamped to [0,1]
  double remaining_latency = 0.0; // (L_max - consumed) / L_max
  std::shared_ptr<const NodeFeatures> nodes;

  /// The seven-field task vector.
  std::array<double, 7> task() const {
    return {double(service), double(hour), double(segment_idx), double(current_node),
            double(target_node), dist_to_target, remaining_latency};
  }
};

using ActionMask = std::vector<std::uint8_t>;

inline bool mask_empty(const ActionMask& m) {
  return std::none_of(m.begin(), m.end(), [](std::uint8_t b) { return b != 0; });
}

struct RewardComponents {
  double shaping = 0.0;       // distance progress
  double loop = 0.0;          // revisit penalty (<= 0), only with allow_revisit
  double intermediate = 0.0;  // segment completions
  double energy = 0.0;        // embed + path energy penalties (<= 0)
  double terminal = 0.0;

  double total() const { return shaping + loop + intermediate + energy + terminal; }
  RewardComponents& operator+=(const RewardComponents& o) {
    shaping += o.shaping;
    loop += o.loop;
    intermediate += o.intermediate;
    energy += o.energy;
    terminal += o.terminal;
    return *this;
  }
};

struct StepOutcome {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  TerminalKind terminal = TerminalKind::None;
  RewardComponents components;
};

class MaskViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// One flow per episode over a ledger shared by all episodes of the hour.
class SfcEnv {
 public:
  SfcEnv(NetworkGraph graph, ChainMode mode, RewardConfig reward = {}, PowerParams power = {})
      : graph_(std::move(graph)), mode_(mode), reward_(reward), power_(power) {
    const auto& t = graph_.topology();
    d_max_ = std::max(1, t.max_out_degree());
    p_ref_ = p_max_ref(t, power_);
    max_steps_ = reward_.max_steps_per_diameter * t.diameter();
  }

  int d_max() const { return d_max_; }
  int num_actions() const { return d_max_ + 1; }
  int embed_action() const { return d_max_; }
  int max_steps() const { return max_steps_; }
  ChainMode mode() const { return mode_; }
  const RewardConfig& reward_config() const { return reward_; }
  const PowerParams& power_params() const { return power_; }
  NetworkGraph& graph() { return graph_; }
  const NetworkGraph& graph() const { return graph_; }
  const ProvisioningState& state() const { return *state_; }
  bool active() const { return state_.has_value() && terminal_ == TerminalKind::None; }
  TerminalKind terminal() const { return terminal_; }
  int steps() const { return steps_; }
  int hour() const { return hour_; }
  /// Record of the most recent successful episode, audited pre-commit.
  const std::optional<FlowRecord>& last_accepted() const { return last_accepted_; }
  bool last_audit_ok() const { return last_audit_ok_; }
  const CommitReceipt& last_receipt() const { return last_receipt_; }

  /// Closes the hour: every node and link returns to full capacity.
  void hour_boundary(int hour) {
    graph_.reset_ledger();
    hour_ = hour;
    state_.reset();
    terminal_ = TerminalKind::None;
  }

  /// Starts an episode. A chain that cannot be built throws ChainError and
  /// leaves the env untouched. A chain that is complete without any step
  /// (all VNFs on the entry node) commits at once and reports SUCCESS.
  Observation reset(const FlowRequest& flow) {
    auto chain = build_chain(flow, graph_.topology(), mode_);
    state_ = start_provisioning(flow, std::move(chain), graph_.topology());
    hour_ = flow.hour;
    steps_ = 0;
    terminal_ = TerminalKind::None;
    last_accepted_.reset();
    if (state_->complete()) finish_success(nullptr);
    return observe();
  }

  ActionMask action_mask() const {
    ActionMask m(static_cast<std::size_t>(num_actions()), 0);
    if (!active()) return m;
    const auto out = graph_.out_neighbors(state_->current_node);
    const RuleOptions opt{reward_.allow_revisit};
    for (std::size_t i = 0; i < out.size() && i < static_cast<std::size_t>(d_max_); ++i)
      m[i] = move_valid(*state_, out[i].link, graph_, opt) ? 1 : 0;
    m[d_max_] = (mode_ == ChainMode::Joint && embed_valid(*state_, state_->current_node, graph_)) ? 1 : 0;
    return m;
  }

  StepOutcome step(int action) {
    if (!active()) throw std::logic_error("step: no active episode");
    StepOutcome out;
    const auto mask = action_mask();
    if (mask_empty(mask)) {
      out.components.terminal = -reward_.c_fail;
      terminal_ = TerminalKind::DeadEnd;
      return finalize(std::move(out));
    }
    if (action < 0 || action >= num_actions() || !mask[action])
      throw MaskViolation(fmt::format("step: action {} is masked out at node {}", action, state_->current_node));
    ++steps_;
    auto& s = *state_;
    const auto& topo = graph_.topology();
    std::vector<SegmentCompletion> completed;
    if (action < d_max_) {
      const Adjacent next = graph_.out_neighbors(s.current_node)[action];
      const bool revisit = s.visited(next.node);
      const double before = potential(s.current_node);
      const auto seg_before = s.segment_idx;
      completed = apply_move(s, next.link, topo);
      const double after = s.segment_idx != seg_before ? 0.0 : potential(s.current_node);
      out.components.shaping = reward_.c_shape * (before - after);
      if (revisit) out.components.loop = -reward_.c_loop;
    } else {
      const NodeId cu = s.current_node;
      const double u_after = utilization(graph_, cu, s.flow.cpu_demand);
      out.components.energy -=
          reward_.c_embed_energy * node_power(u_after, node_power_model(topo, cu, power_)) / p_ref_;
      completed = apply_embed(s, topo);
    }
    for (const auto& c : completed) out.components.intermediate += reward_.c_seg - reward_.c_hop * c.hops;

    if (s.consumed_ms > s.flow.latency_budget_ms) {
      out.components.terminal = -reward_.c_fail;
      terminal_ = TerminalKind::BudgetExceeded;
    } else if (s.complete()) {
      finish_success(&out.components);
    } else if (steps_ >= max_steps_) {
      out.components.terminal = -reward_.c_fail;
      terminal_ = TerminalKind::MaxSteps;
    } else if (mask_empty(action_mask())) {
      out.components.terminal = -reward_.c_fail;
      terminal_ = TerminalKind::DeadEnd;
    }
    return finalize(std::move(out));
  }

  /// Segment target used for the observation and for shaping. The open CU
  /// leg targets the nearest CU that can still admit the flow.
  NodeId target_node(NodeId from) const {
    const auto& s = *state_;
    if (s.complete()) return s.current_node;
    const Segment& seg = s.segment();
    if (!seg.dynamic_cu) return seg.target;
    const auto& topo = graph_.topology();
    NodeId best = kNoNode, fallback = kNoNode;
    int best_d = 0, fallback_d = 0;
    const auto demand = cpu_units(s.flow.cpu_demand);
    for (NodeId cu : cu_nodes()) {
      const int d = topo.hop_distance(from, cu);
      if (d == kUnreachable) continue;
      if (fallback == kNoNode || d < fallback_d) {
        fallback = cu;
        fallback_d = d;
      }
      if (graph_.ledger().cpu_free[cu] >= demand && (best == kNoNode || d < best_d)) {
        best = cu;
        best_d = d;
      }
    }
    return best != kNoNode ? best : (fallback != kNoNode ? fallback : from);
  }

  Observation observe() const {
    Observation o;
    const auto& s = *state_;
    const auto& topo = graph_.topology();
    o.service = static_cast<int>(s.flow.service);
    o.hour = s.flow.hour;
    o.segment_idx = static_cast<int>(std::min<std::size_t>(s.segment_idx, kNumSegments - 1));
    o.current_node = s.current_node;
    o.target_node = target_node(s.current_node);
    if (s.complete()) {
      o.target_role = role_index(s.chain.segments.back().vnf);
    } else {
      o.target_role = role_index(s.segment().vnf);
    }
    o.dist_to_target = std::min(1.0, potential(s.current_node) / topo.diameter());
    o.remaining_latency =
        std::clamp((s.flow.latency_budget_ms - s.consumed_ms) / s.flow.latency_budget_ms, 0.0, 1.0);
    o.nodes = node_features();
    return o;
  }

  /// Feature matrix for the current ledger; rebuilt only after the ledger changes.
  std::shared_ptr<const NodeFeatures> node_features() const {
    if (features_ && features_->version == graph_.ledger().version) return features_;
    const auto& topo = graph_.topology();
    auto f = std::make_shared<NodeFeatures>();
    f->num_nodes = topo.num_nodes();
    f->version = graph_.ledger().version;
    f->x.assign(static_cast<std::size_t>(topo.num_nodes()) * kNodeFeatures, 0.0f);
    const auto cap = topo.cpu_capacity_units();
    for (NodeId v = 0; v < topo.num_nodes(); ++v) {
      float* row = &f->x[static_cast<std::size_t>(v) * kNodeFeatures];
      const auto& a = topo.node(v);
      row[0] = a.has(kRoleDU) ? 1.0f : 0.0f;
      row[1] = a.has(kRoleCU) ? 1.0f : 0.0f;
      row[2] = a.has(kRoleUPF) ? 1.0f : 0.0f;
      row[3] = static_cast<float>(topo.out_neighbors(v).size()) / static_cast<float>(d_max_);
      row[4] = cap[v] > 0 ? static_cast<float>(static_cast<double>(graph_.ledger().cpu_free[v]) / cap[v]) : 0.0f;
    }
    features_ = std::move(f);
    return features_;
  }

  static int role_index(Role r) {
    switch (r) {
      case kRoleRU: return 0;
      case kRoleDU: return 1;
      case kRoleCU: return 2;
      default: return 3;
    }
  }

 private:
  const std::vector<NodeId>& cu_nodes() const {
    if (!cu_cache_) cu_cache_ = graph_.topology().nodes_with(kRoleCU);
    return *cu_cache_;
  }

  /// Hop distance to the current segment's target.
  double potential(NodeId v) const {
    const auto& topo = graph_.topology();
    const int d = topo.hop_distance(v, target_node(v));
    return d == kUnreachable ? topo.diameter() + 1.0 : static_cast<double>(d);
  }

  void finish_success(RewardComponents* rc) {
    auto& s = *state_;
    const auto& topo = graph_.topology();
    auto record = make_record(s);
    last_audit_ok_ = audit_flow(record, graph_).ok;
    last_receipt_ = commit_flow(s, graph_);
    last_accepted_ = std::move(record);
    terminal_ = TerminalKind::Success;
    if (!rc) return;
    // Energy of every distinct node on the walk, at the post-commit load.
    std::vector<NodeId> nodes{s.chain.entry};
    for (LinkId l : s.path_links) nodes.push_back(topo.link(l).dst);
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    const double per_bit = router_energy_per_bit(power_);
    double norm = 0.0;
    for (NodeId v : nodes) {
      if (topo.node(v).is_compute()) {
        norm += node_power(utilization(graph_, v), node_power_model(topo, v, power_)) / p_ref_;
      } else if (is_router(topo, v)) {
        std::int64_t used = 0;
        for (LinkId l : topo.in_links(v)) used += topo.bw_capacity_units()[l] - graph_.ledger().bw_free[l];
        norm += (power_.router_p_idle_w + bw_mbps(used) * 1e6 * per_bit) / p_ref_;
      }
    }
    rc->energy -= reward_.c_path_energy * norm;
    rc->terminal += reward_.c_success;
  }

  StepOutcome finalize(StepOutcome out) {
    out.reward = out.components.total();
    out.terminal = terminal_;
    out.done = terminal_ != TerminalKind::None;
    out.obs = observe();
    return out;
  }

  NetworkGraph graph_;
  ChainMode mode_;
  RewardConfig reward_;
  PowerParams power_;
  int d_max_ = 1;
  int max_steps_ = 4;
  double p_ref_ = 1.0;
  int hour_ = 0;
  int steps_ = 0;
  std::optional<ProvisioningState> state_;
  TerminalKind terminal_ = TerminalKind::None;
  std::optional<FlowRecord> last_accepted_;
  bool last_audit_ok_ = true;
  CommitReceipt last_receipt_;
  mutable std::shared_ptr<const NodeFeatures> features_;
  mutable std::optional<std::vector<NodeId>> cu_cache_;
};

}  // namespace oransfc
