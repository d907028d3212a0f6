#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include <fmt/format.h>

#include "oransfc/topology.hpp"

namespace oransfc {

struct PowerParams {
  double node_p_idle_w = 100.0;
  double node_p_max_w = 250.0;
  double router_p_idle_w = 30.0;
  double link_p_idle_w = 2.0;
  double e_pp_joules = 1.2e-6;  // per packet
  double e_sf_joules = 8e-9;    // per byte, store-and-forward
  double packet_len_bytes = 1500.0;

  void validate() const {
    if (!(node_p_max_w >= node_p_idle_w && node_p_idle_w >= 0.0))
      throw std::invalid_argument("power: require p_max >= p_idle >= 0");
    if (router_p_idle_w < 0.0 || link_p_idle_w < 0.0 || e_pp_joules < 0.0 || e_sf_joules < 0.0)
      throw std::invalid_argument("power: energies must be >= 0");
    if (!(packet_len_bytes > 0.0)) throw std::invalid_argument("power: packet length must be > 0");
  }
};

struct NodePowerModel {
  double p_idle_w;
  double p_max_w;
};

/// Linear utilization model.
inline double node_power(double u, NodePowerModel m) {
  if (!(u >= 0.0 && u <= 1.0)) throw std::out_of_range(fmt::format("node_power: utilization {} outside [0,1]", u));
  return m.p_idle_w + (m.p_max_w - m.p_idle_w) * u;
}

inline NodePowerModel node_power_model(const Topology& t, NodeId v, const PowerParams& p) {
  const auto& a = t.node(v);
  return {a.p_idle_w.value_or(p.node_p_idle_w), a.p_max_w.value_or(p.node_p_max_w)};
}

/// Largest configured P_max over compute nodes; reward energy terms are
/// divided by it.
inline double p_max_ref(const Topology& t, const PowerParams& p) {
  double ref = 0.0;
  for (NodeId v = 0; v < t.num_nodes(); ++v)
    if (t.node(v).is_compute()) ref = std::max(ref, node_power_model(t, v, p).p_max_w);
  return ref > 0.0 ? ref : p.node_p_max_w;
}

/// Routers are transport nodes without compute capacity.
inline bool is_router(const Topology& t, NodeId v) {
  return t.node(v).has(kRoleTransport) && !t.node(v).is_compute();
}

inline double net_idle_power(const Topology& t, const PowerParams& p) {
  double w = 0.0;
  for (NodeId v = 0; v < t.num_nodes(); ++v)
    if (is_router(t, v)) w += p.router_p_idle_w;
  // Each physical link is stored as two directed twins.
  w += p.link_p_idle_w * static_cast<double>(t.num_links() / 2);
  return w;
}

/// Joules per forwarded bit.
inline double router_energy_per_bit(const PowerParams& p) {
  return p.e_pp_joules / (8.0 * p.packet_len_bytes) + p.e_sf_joules / 8.0;
}

inline double router_dynamic_power(double rate_bps, const PowerParams& p) {
  if (rate_bps < 0.0) throw std::out_of_range("router_dynamic_power: negative rate");
  return rate_bps * router_energy_per_bit(p);
}

/// Carried rate per node (bits/s): the sum of committed bandwidth on its
/// ingress links. Zero for non-routers.
inline std::vector<double> router_rates_bps(const NetworkGraph& g) {
  const auto& t = g.topology();
  const auto cap = t.bw_capacity_units();
  std::vector<double> rates(t.num_nodes(), 0.0);
  for (NodeId v = 0; v < t.num_nodes(); ++v) {
    if (!is_router(t, v)) continue;
    std::int64_t used = 0;
    for (LinkId l : t.in_links(v)) used += cap[l] - g.ledger().bw_free[l];
    rates[v] = bw_mbps(used) * 1e6;
  }
  return rates;
}

/// CPU utilization of a compute node, counting admitted CU load and tracked
/// DU/UPF load; saturates at 1. `extra_cpu` previews an additional claim.
inline double utilization(const NetworkGraph& g, NodeId v, double extra_cpu = 0.0) {
  const auto cap = g.topology().cpu_capacity_units()[v];
  if (cap <= 0) return 0.0;
  const auto used = cap - g.ledger().cpu_free[v] + g.ledger().cpu_tracked[v] + cpu_units(extra_cpu);
  return std::clamp(static_cast<double>(used) / static_cast<double>(cap), 0.0, 1.0);
}

struct HourlyEnergyReport {
  int hour = 0;
  double node_kwh = 0.0;
  double net_idle_kwh = 0.0;
  double net_dyn_kwh = 0.0;
  double total_kwh = 0.0;
  std::vector<std::pair<NodeId, double>> utilization;  // compute nodes only
};

/// Energy over one hour at the end-of-hour operating point.
inline HourlyEnergyReport hourly_energy(const NetworkGraph& g, std::span<const double> router_rates,
                                        const PowerParams& p, int hour = 0) {
  const auto& t = g.topology();
  HourlyEnergyReport r;
  r.hour = hour;
  double node_w = 0.0;
  for (NodeId v = 0; v < t.num_nodes(); ++v) {
    if (!t.node(v).is_compute()) continue;
    const double u = utilization(g, v);
    r.utilization.emplace_back(v, u);
    node_w += node_power(u, node_power_model(t, v, p));
  }
  double dyn_w = 0.0;
  for (NodeId v = 0; v < t.num_nodes(); ++v)
    if (is_router(t, v)) dyn_w += router_dynamic_power(router_rates[v], p);
  // W x 1 h / 1000 = kWh
  r.node_kwh = node_w / 1000.0;
  r.net_idle_kwh = net_idle_power(t, p) / 1000.0;
  r.net_dyn_kwh = dyn_w / 1000.0;
  r.total_kwh = r.node_kwh + r.net_idle_kwh + r.net_dyn_kwh;
  return r;
}

inline HourlyEnergyReport hourly_energy(const NetworkGraph& g, const PowerParams& p, int hour = 0) {
  const auto rates = router_rates_bps(g);
  return hourly_energy(g, rates, p, hour);
}

}  // namespace oransfc
