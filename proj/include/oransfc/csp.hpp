#pragma once

#include <map>
#include <optional>
#include <queue>
#include <string_view>
#include <vector>

#include "oransfc/sfc.hpp"

namespace oransfc {

struct CspPath {
  std::vector<LinkId> links;
  std::vector<NodeId> nodes;  // from .. to
  double delay_ms = 0.0;
};

/// Bandwidth the caller has already earmarked per directed link (units).
using PendingClaims = std::map<LinkId, std::int64_t>;

/// Minimum propagation-delay path over links with enough residual bandwidth.
/// Equal delays fall to the lexicographically smallest node sequence.
/// Returns nullopt when no feasible path exists or its delay exceeds the
/// budget.
inline std::optional<CspPath> csp_route_segment(const NetworkGraph& g, NodeId from, NodeId to, double bw_req_mbps,
                                                double budget_remaining_ms, const PendingClaims& pending = {}) {
  const auto& t = g.topology();
  if (from < 0 || from >= t.num_nodes() || to < 0 || to >= t.num_nodes())
    throw std::out_of_range("csp_route_segment: node id out of range");
  const auto need = bw_units(bw_req_mbps);
  auto residual = [&](LinkId l) {
    const auto it = pending.find(l);
    return g.ledger().bw_free[l] - (it == pending.end() ? 0 : it->second);
  };

  struct Label {
    double delay;
    std::vector<NodeId> nodes;
    std::vector<LinkId> links;
  };
  auto better = [](const Label& a, const Label& b) {
    if (a.delay != b.delay) return a.delay < b.delay;
    return a.nodes < b.nodes;
  };
  auto cmp = [&](const Label& a, const Label& b) { return better(b, a); };
  std::priority_queue<Label, std::vector<Label>, decltype(cmp)> pq(cmp);
  std::vector<std::optional<Label>> best(static_cast<std::size_t>(t.num_nodes()));
  std::vector<char> settled(static_cast<std::size_t>(t.num_nodes()), 0);

  best[from] = Label{0.0, {from}, {}};
  pq.push(*best[from]);
  while (!pq.empty()) {
    Label cur = pq.top();
    pq.pop();
    const NodeId u = cur.nodes.back();
    if (settled[u]) continue;
    settled[u] = 1;
    if (u == to) {
      if (cur.delay > budget_remaining_ms) return std::nullopt;
      return CspPath{std::move(cur.links), std::move(cur.nodes), cur.delay};
    }
    for (const auto& adj : t.out_neighbors(u)) {
      if (settled[adj.node] || residual(adj.link) < need) continue;
      Label next{cur.delay + t.link(adj.link).delay_ms, cur.nodes, cur.links};
      next.nodes.push_back(adj.node);
      next.links.push_back(adj.link);
      if (!best[adj.node] || better(next, *best[adj.node])) {
        best[adj.node] = next;
        pq.push(std::move(next));
      }
    }
  }
  return std::nullopt;
}

enum class RejectReason : std::uint8_t { None, NoPath, Bandwidth, Cpu, Latency };

inline std::string_view reject_name(RejectReason r) {
  switch (r) {
    case RejectReason::NoPath: return "NO_PATH";
    case RejectReason::Bandwidth: return "BW";
    case RejectReason::Cpu: return "CPU";
    case RejectReason::Latency: return "LATENCY";
    default: return "NONE";
  }
}

struct CspOutcome {
  bool accepted = false;
  RejectReason reason = RejectReason::None;
  FlowRecord record;
  bool audit_ok = true;
  CommitReceipt receipt;
};

/// Provisions one flow over the fixed mapping: each segment routed on its
/// own shortest feasible path, then the whole chain checked and committed.
/// A rejected flow leaves the ledger untouched.
inline CspOutcome csp_provision(const FlowRequest& flow, NetworkGraph& g) {
  const auto& topo = g.topology();
  CspOutcome out;
  auto reject = [&](RejectReason r) {
    out.reason = r;
    return out;
  };
  auto chain = build_chain(flow, topo, ChainMode::Fixed);
  const auto& pl = topo.placement();
  const NodeId cu = pl.du_to_cu.at(pl.ru_to_du.at(flow.source_ru));
  if (g.ledger().cpu_free[cu] < cpu_units(flow.cpu_demand)) return reject(RejectReason::Cpu);

  auto s = start_provisioning(flow, std::move(chain), topo);
  PendingClaims pending;
  const auto per_flow = bw_units(flow.bandwidth_mbps);
  while (!s.complete()) {
    const NodeId target = s.segment().target;
    const double budget = flow.latency_budget_ms - s.consumed_ms;
    auto path = csp_route_segment(g, s.current_node, target, flow.bandwidth_mbps, budget, pending);
    if (!path) {
      // Distinguish the cause: unreachable even with unlimited bandwidth,
      // reachable only over saturated links, or too slow.
      const auto any = csp_route_segment(g, s.current_node, target, 0.0, std::numeric_limits<double>::infinity());
      if (!any) return reject(RejectReason::NoPath);
      const auto fits =
          csp_route_segment(g, s.current_node, target, flow.bandwidth_mbps, std::numeric_limits<double>::infinity(), pending);
      return reject(fits ? RejectReason::Latency : RejectReason::Bandwidth);
    }
    const auto seg_before = s.segment_idx;
    for (LinkId l : path->links) {
      apply_move(s, l, topo);
      pending[l] += per_flow;
    }
    if (s.segment_idx == seg_before) throw std::logic_error("csp_provision: path did not reach the segment target");
    if (s.consumed_ms > flow.latency_budget_ms) return reject(RejectReason::Latency);
  }
  out.record = make_record(s);
  out.audit_ok = audit_flow(out.record, g).ok;
  out.receipt = commit_flow(s, g);
  out.accepted = true;
  return out;
}

}  // namespace oransfc
