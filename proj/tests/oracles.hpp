#pragma once

// Reference checks written against raw topology and ledger data, kept apart
// from the library predicates they are compared with.

#include <algorithm>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "oransfc/csp.hpp"
#include "oransfc/env.hpp"

namespace oracles {

using namespace oransfc;

/// Nodes visited since the current segment started, rebuilt from the walk.
inline std::vector<NodeId> segment_walk(const ProvisioningState& s, const Topology& t) {
  std::vector<NodeId> walk{s.chain.entry};
  for (LinkId l : s.path_links) walk.push_back(t.link(l).dst);
  const NodeId start = s.vnf_nodes.back();
  std::size_t from = 0;
  for (std::size_t i = 0; i < walk.size(); ++i)
    if (walk[i] == start) from = i;
  return {walk.begin() + static_cast<std::ptrdiff_t>(from), walk.end()};
}

/// Whether action `a` is legal in the env's current state.
inline bool action_legal(const SfcEnv& env, int a) {
  if (!env.active()) return false;
  const auto& s = env.state();
  const auto& g = env.graph();
  const auto& t = g.topology();
  const auto& led = g.ledger();
  if (s.segment_idx >= s.chain.segments.size()) return false;
  if (a == env.embed_action()) {
    if (env.mode() != ChainMode::Joint) return false;
    if (!s.chain.segments[s.segment_idx].dynamic_cu) return false;
    const NodeId v = s.current_node;
    if (!t.node(v).has(kRoleCU)) return false;
    if (led.cpu_free[v] < cpu_units(s.flow.cpu_demand)) return false;
    return s.consumed_ms + t.proc_delay_ms(v, s.flow.service) <= s.flow.latency_budget_ms;
  }
  // i-th out-link in ascending neighbor id, found by scanning all links.
  std::vector<std::pair<NodeId, LinkId>> out;
  for (LinkId l = 0; l < t.num_links(); ++l)
    if (t.link(l).src == s.current_node) out.emplace_back(t.link(l).dst, l);
  std::sort(out.begin(), out.end());
  if (a < 0 || a >= static_cast<int>(out.size())) return false;
  const auto [dst, l] = out[a];
  std::int64_t pending = 0;
  for (LinkId p : s.path_links) pending += p == l ? bw_units(s.flow.bandwidth_mbps) : 0;
  if (led.bw_free[l] - pending < bw_units(s.flow.bandwidth_mbps)) return false;
  if (s.consumed_ms + t.link(l).delay_ms > s.flow.latency_budget_ms) return false;
  if (!env.reward_config().allow_revisit) {
    const auto seen = segment_walk(s, t);
    if (std::find(seen.begin(), seen.end(), dst) != seen.end()) return false;
  }
  return true;
}

struct MaskCheck {
  long states = 0;
  long enabled_ok = 0, enabled_bad = 0;
  long disabled_ok = 0, disabled_bad = 0;
  bool ok() const { return enabled_bad == 0 && disabled_bad == 0; }
};

/// Compares the env mask against the oracle, then force-executes every
/// enabled action on a copy and checks the ledger and latency afterwards.
inline void check_state(const SfcEnv& env, MaskCheck& out) {
  ++out.states;
  const auto mask = env.action_mask();
  for (int a = 0; a < env.num_actions(); ++a) {
    const bool legal = action_legal(env, a);
    if (!mask[a]) {
      (legal ? out.disabled_bad : out.disabled_ok)++;
      continue;
    }
    bool fine = legal;
    try {
      SfcEnv copy = env;
      const auto r = copy.step(a);
      const auto& s = copy.state();
      for (auto v : copy.graph().ledger().cpu_free) fine = fine && v >= 0;
      for (auto v : copy.graph().ledger().bw_free) fine = fine && v >= 0;
      // Only processing on arrival may overshoot; a link traversal never does.
      if (r.terminal != TerminalKind::BudgetExceeded) fine = fine && s.consumed_ms <= s.flow.latency_budget_ms;
      if (r.terminal == TerminalKind::Success) fine = fine && copy.last_audit_ok();
    } catch (const std::exception&) {
      fine = false;
    }
    (fine ? out.enabled_ok : out.enabled_bad)++;
  }
}

/// Drives random masked episodes through the trace, calling `visit` on
/// every active state, until `limit` states have been seen.
inline void explore(SfcEnv& env, const TrafficTrace& trace, Rng& rng, long limit,
                    const std::function<void(const SfcEnv&)>& visit) {
  if (trace.flows.empty()) return;
  long seen = 0;
  int hour = -1;
  while (seen < limit) {
    for (const auto& f : trace.flows) {
      if (seen >= limit) return;
      if (f.hour != hour) {
        hour = f.hour;
        env.hour_boundary(hour);
      }
      try {
        env.reset(f);
      } catch (const ChainError&) {
        continue;
      }
      while (env.active() && seen < limit) {
        visit(env);
        ++seen;
        const auto mask = env.action_mask();
        std::vector<int> on;
        for (int a = 0; a < env.num_actions(); ++a)
          if (mask[a]) on.push_back(a);
        env.step(on.empty() ? 0 : on[rng.uniform_int(0, static_cast<std::int64_t>(on.size()) - 1)]);
      }
    }
  }
}

struct EnumeratedPath {
  double delay_ms = 0.0;
  std::vector<NodeId> nodes;
};

/// Minimum-delay simple path by depth-first enumeration of every simple path.
/// Ties keep the lexicographically smallest node sequence.
inline std::optional<EnumeratedPath> enumerate_best_path(const NetworkGraph& g, NodeId from, NodeId to, double bw_mbps,
                                                         double budget_ms) {
  const auto& t = g.topology();
  std::optional<EnumeratedPath> best;
  std::vector<NodeId> stack{from};
  std::vector<char> on(static_cast<std::size_t>(t.num_nodes()), 0);
  on[from] = 1;
  std::function<void(double)> dfs = [&](double delay) {
    const NodeId u = stack.back();
    if (u == to) {
      if (delay <= budget_ms &&
          (!best || delay < best->delay_ms || (delay == best->delay_ms && stack < best->nodes)))
        best = EnumeratedPath{delay, stack};
      return;
    }
    for (LinkId l = 0; l < t.num_links(); ++l) {
      const auto& link = t.link(l);
      if (link.src != u || on[link.dst]) continue;
      if (g.ledger().bw_free[l] < bw_units(bw_mbps)) continue;
      on[link.dst] = 1;
      stack.push_back(link.dst);
      dfs(delay + link.delay_ms);
      stack.pop_back();
      on[link.dst] = 0;
    }
  };
  dfs(0.0);
  return best;
}

/// A random connected graph of `n` nodes with random delays and residual
/// bandwidth, the kind used for the CSP comparison.
inline NetworkGraph random_csp_graph(Rng& rng, int n) {
  Json doc{{"nodes", Json::array()}, {"links", Json::array()}};
  for (int v = 0; v < n; ++v) doc["nodes"].push_back({{"id", v}, {"roles", {"TRANSPORT"}}, {"cpu_capacity", 0}});
  std::vector<std::vector<char>> has(n, std::vector<char>(n, 0));
  auto add = [&](int a, int b) {
    if (a == b || has[a][b]) return;
    has[a][b] = has[b][a] = 1;
    // Integer-valued delays make exact ties common.
    const double delay = rng.uniform() < 0.5 ? static_cast<double>(rng.uniform_int(1, 4)) : rng.uniform(0.1, 4.0);
    doc["links"].push_back({{"src", a}, {"dst", b}, {"bandwidth_mbps", 100.0}, {"delay_ms", delay}});
  };
  for (int v = 1; v < n; ++v) add(v, static_cast<int>(rng.uniform_int(0, v - 1)));
  const int extra = static_cast<int>(rng.uniform_int(0, n));
  for (int k = 0; k < extra; ++k) add(static_cast<int>(rng.uniform_int(0, n - 1)), static_cast<int>(rng.uniform_int(0, n - 1)));
  NetworkGraph g(load_topology(doc));
  // Pre-load some directed links so bandwidth matters.
  std::vector<BwClaim> used;
  for (LinkId l = 0; l < g.topology().num_links(); ++l)
    if (rng.uniform() < 0.3) used.push_back({l, static_cast<double>(rng.uniform_int(50, 100))});
  g.commit({}, used, {});
  return g;
}

}  // namespace oracles
