#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "oransfc/scenario.hpp"
#include "oransfc/topology.hpp"

namespace oransfc {

enum class ChainMode : std::uint8_t { Joint, Fixed };

class ChainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Segment {
  NodeId target = kNoNode;  // kNoNode when dynamic_cu
  bool dynamic_cu = false;
  Role vnf = kRoleDU;  // function hosted at the segment's end
};

struct SfcChain {
  NodeId entry = kNoNode;
  std::vector<Segment> segments;
};

/// Uplink RU -> DU -> CU -> UPF, downlink UPF -> CU -> DU -> RU. The CU leg
/// is left open in joint mode; fixed mode binds it through du_to_cu.
inline SfcChain build_chain(const FlowRequest& flow, const Topology& topo, ChainMode mode) {
  const auto& pl = topo.placement();
  const auto du_it = pl.ru_to_du.find(flow.source_ru);
  if (du_it == pl.ru_to_du.end())
    throw ChainError(fmt::format("flow {}: RU {} has no DU mapping", flow.flow_id, flow.source_ru));
  const NodeId du = du_it->second;
  const auto cu_it = pl.du_to_cu.find(du);
  if (cu_it == pl.du_to_cu.end())
    throw ChainError(fmt::format("flow {}: DU {} has no CU mapping", flow.flow_id, du));
  const NodeId upf = pl.upf(flow.service);
  if (upf == kNoNode)
    throw ChainError(fmt::format("flow {}: service {} has no UPF", flow.flow_id, service_name(flow.service)));

  const Segment cu_leg = mode == ChainMode::Joint ? Segment{kNoNode, true, kRoleCU}
                                                  : Segment{cu_it->second, false, kRoleCU};
  SfcChain c;
  if (flow.direction == Direction::Uplink) {
    c.entry = flow.source_ru;
    c.segments = {Segment{du, false, kRoleDU}, cu_leg, Segment{upf, false, kRoleUPF}};
  } else {
    c.entry = upf;
    c.segments = {cu_leg, Segment{du, false, kRoleDU}, Segment{flow.source_ru, false, kRoleRU}};
  }
  return c;
}

struct ProvisioningState {
  FlowRequest flow;
  SfcChain chain;
  std::size_t segment_idx = 0;
  NodeId current_node = kNoNode;
  double consumed_ms = 0.0;
  std::vector<NodeId> visited_in_segment;
  std::vector<LinkId> path_links;
  std::vector<NodeId> vnf_nodes;  // entry, then each segment's end node
  NodeId embedded_cu = kNoNode;
  int hop_count_in_segment = 0;

  bool complete() const { return segment_idx >= chain.segments.size(); }
  const Segment& segment() const { return chain.segments.at(segment_idx); }
  bool visited(NodeId v) const {
    return std::find(visited_in_segment.begin(), visited_in_segment.end(), v) != visited_in_segment.end();
  }
  /// Bandwidth this flow already intends to claim on a link.
  std::int64_t pending_bw_units(LinkId l) const {
    return static_cast<std::int64_t>(std::count(path_links.begin(), path_links.end(), l)) *
           bw_units(flow.bandwidth_mbps);
  }
};

/// One finished segment, reported so callers can score it.
struct SegmentCompletion {
  std::size_t segment_idx;
  NodeId node;
  int hops;
};

namespace detail {
inline void complete_segment(ProvisioningState& s, const Topology& topo,
                             std::vector<SegmentCompletion>* log) {
  const Segment& seg = s.segment();
  s.consumed_ms += topo.proc_delay_ms(s.current_node, s.flow.service);
  s.vnf_nodes.push_back(s.current_node);
  if (seg.vnf == kRoleCU) s.embedded_cu = s.current_node;
  if (log) log->push_back({s.segment_idx, s.current_node, s.hop_count_in_segment});
  ++s.segment_idx;
  s.visited_in_segment.assign(1, s.current_node);
  s.hop_count_in_segment = 0;
}

/// Completes fixed segments whose target is already the current node.
inline void settle(ProvisioningState& s, const Topology& topo, std::vector<SegmentCompletion>* log) {
  while (!s.complete() && !s.segment().dynamic_cu && s.segment().target == s.current_node)
    complete_segment(s, topo, log);
}
}  // namespace detail

/// Fresh state at the chain entry. The entry's own processing delay is
/// charged up front; degenerate zero-hop segments settle immediately.
inline ProvisioningState start_provisioning(const FlowRequest& flow, SfcChain chain, const Topology& topo) {
  ProvisioningState s;
  s.flow = flow;
  s.chain = std::move(chain);
  s.current_node = s.chain.entry;
  s.consumed_ms = topo.proc_delay_ms(s.current_node, flow.service);
  s.vnf_nodes.push_back(s.current_node);
  s.visited_in_segment.assign(1, s.current_node);
  detail::settle(s, topo, nullptr);
  return s;
}

struct RuleOptions {
  bool allow_revisit = false;
};

/// Link capacity on the residual after this flow's own pending claims, the
/// latency budget, and the per-segment no-revisit rule.
inline bool move_valid(const ProvisioningState& s, LinkId l, const NetworkGraph& g, RuleOptions opt = {}) {
  if (s.complete()) return false;
  const auto& link = g.topology().link(l);
  if (link.src != s.current_node) return false;
  if (g.ledger().bw_free[l] - s.pending_bw_units(l) < bw_units(s.flow.bandwidth_mbps)) return false;
  if (s.consumed_ms + link.delay_ms > s.flow.latency_budget_ms) return false;
  if (!opt.allow_revisit && s.visited(link.dst)) return false;
  return true;
}

/// CPU capacity at the candidate CU plus the processing-delay budget.
inline bool embed_valid(const ProvisioningState& s, NodeId v, const NetworkGraph& g) {
  if (s.complete() || !s.segment().dynamic_cu) return false;
  if (v != s.current_node) return false;
  const auto& topo = g.topology();
  if (!topo.node(v).has(kRoleCU)) return false;
  if (g.ledger().cpu_free[v] < cpu_units(s.flow.cpu_demand)) return false;
  return s.consumed_ms + topo.proc_delay_ms(v, s.flow.service) <= s.flow.latency_budget_ms;
}

inline std::vector<SegmentCompletion> apply_move(ProvisioningState& s, LinkId l, const Topology& topo) {
  const auto& link = topo.link(l);
  if (s.complete() || link.src != s.current_node)
    throw std::logic_error(fmt::format("apply_move: link {} does not leave node {}", l, s.current_node));
  s.consumed_ms += link.delay_ms;
  s.path_links.push_back(l);
  s.current_node = link.dst;
  s.visited_in_segment.push_back(link.dst);
  ++s.hop_count_in_segment;
  std::vector<SegmentCompletion> done;
  detail::settle(s, topo, &done);
  return done;
}

inline std::vector<SegmentCompletion> apply_embed(ProvisioningState& s, const Topology& topo) {
  if (s.complete() || !s.segment().dynamic_cu || !topo.node(s.current_node).has(kRoleCU))
    throw std::logic_error(fmt::format("apply_embed: not a CU decision point at node {}", s.current_node));
  std::vector<SegmentCompletion> done;
  detail::complete_segment(s, topo, &done);
  detail::settle(s, topo, &done);
  return done;
}

/// Claims bandwidth on every traversed link, CPU at the CU, and tracked
/// (non-admission) load at the DU and UPF hosts.
inline CommitReceipt commit_flow(const ProvisioningState& s, NetworkGraph& g) {
  if (!s.complete()) throw std::logic_error("commit_flow: chain not complete");
  std::vector<BwClaim> bw;
  bw.reserve(s.path_links.size());
  for (LinkId l : s.path_links) bw.push_back({l, s.flow.bandwidth_mbps});
  const std::vector<CpuClaim> cpu{{s.embedded_cu, s.flow.cpu_demand}};
  std::vector<CpuClaim> tracked;
  const auto& topo = g.topology();
  for (std::size_t i = 0; i < s.chain.segments.size(); ++i) {
    const Role r = s.chain.segments[i].vnf;
    if (r == kRoleDU || r == kRoleUPF) tracked.push_back({s.vnf_nodes[i + 1], s.flow.cpu_demand});
  }
  if (s.flow.direction == Direction::Downlink && topo.node(s.chain.entry).has(kRoleUPF))
    tracked.push_back({s.chain.entry, s.flow.cpu_demand});
  return g.commit(cpu, bw, tracked);
}

// ---------------------------------------------------------------------------
// Post-hoc audit

struct FlowRecord {
  FlowRequest flow;
  std::vector<LinkId> path_links;
  std::vector<NodeId> vnf_nodes;
  NodeId cu_node = kNoNode;
  double consumed_ms = 0.0;
};

inline FlowRecord make_record(const ProvisioningState& s) {
  return FlowRecord{s.flow, s.path_links, s.vnf_nodes, s.embedded_cu, s.consumed_ms};
}

struct AuditResult {
  bool ok = true;
  std::string reason;
};

/// Re-checks CPU, bandwidth and latency for an accepted flow against the ledger as it stood
/// before the flow was committed. Computed from the record alone.
inline AuditResult audit_flow(const FlowRecord& r, const NetworkGraph& pre_commit) {
  const auto& topo = pre_commit.topology();
  const auto& ledger = pre_commit.ledger();
  auto fail = [&](std::string why) { return AuditResult{false, fmt::format("flow {}: {}", r.flow.flow_id, why)}; };

  if (r.vnf_nodes.size() != 4) return fail("expected 4 VNF nodes");
  // Path must be a walk through the VNF nodes in order.
  std::vector<NodeId> walk{r.vnf_nodes.front()};
  for (LinkId l : r.path_links) {
    if (l < 0 || l >= topo.num_links()) return fail("unknown link");
    if (topo.link(l).src != walk.back()) return fail("path is not a connected walk");
    walk.push_back(topo.link(l).dst);
  }
  std::size_t pos = 0;
  for (NodeId v : r.vnf_nodes) {
    while (pos < walk.size() && walk[pos] != v) ++pos;
    if (pos == walk.size()) return fail(fmt::format("VNF node {} not on path in order", v));
  }
  if (walk.back() != r.vnf_nodes.back()) return fail("path does not end at the chain's last VNF");

  if (r.cu_node == kNoNode || !topo.node(r.cu_node).has(kRoleCU)) return fail("CU node lacks CU role");
  if (ledger.cpu_free[r.cu_node] < cpu_units(r.flow.cpu_demand)) return fail("CPU capacity at CU");
  std::map<LinkId, std::int64_t> uses;
  for (LinkId l : r.path_links) ++uses[l];
  for (auto [l, n] : uses)
    if (ledger.bw_free[l] < n * bw_units(r.flow.bandwidth_mbps)) return fail(fmt::format("bandwidth on link {}", l));
  double prop = 0.0, proc = 0.0;
  for (LinkId l : r.path_links) prop += topo.link(l).delay_ms;
  for (NodeId v : r.vnf_nodes) proc += topo.proc_delay_ms(v, r.flow.service);
  if (prop + proc > r.flow.latency_budget_ms * (1.0 + 1e-12)) return fail("latency budget exceeded");
  if (std::abs(prop + proc - r.consumed_ms) > 1e-9 * std::max(1.0, r.consumed_ms))
    return fail(fmt::format("recorded latency {} differs from recomputed {}", r.consumed_ms, prop + proc));
  return {};
}

inline constexpr std::string_view kAuditHeader = "flow_id,cu_node,path_links,consumed_ms";

inline std::string audit_row(const FlowRecord& r) {
  std::string links;
  for (std::size_t i = 0; i < r.path_links.size(); ++i) {
    if (i) links += ';';
    links += std::to_string(r.path_links[i]);
  }
  return fmt::format("{},{},{},{}\n", r.flow.flow_id, r.cu_node, links, r.consumed_ms);
}

}  // namespace oransfc
