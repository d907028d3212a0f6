#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "oransfc/rng.hpp"
#include "oransfc/topology.hpp"
#include "oransfc/types.hpp"

namespace oransfc {

enum class SliceClass : std::uint8_t { eMBB, mMTC, uRLLC };

struct ServiceSpec {
  Service id;
  SliceClass slice;
  bool uplink_chain;    // RU - DU - CU - UPF
  bool downlink_chain;  // UPF - CU - DU - RU
  double bandwidth_lo_mbps;
  double bandwidth_hi_mbps;  // equal to lo for fixed-rate services
  double latency_budget_ms;
  int requests_lo;
  int requests_hi;
  double cpu_per_mbps;
};

inline constexpr double kDefaultCpuPerMbps = 0.1;

/// The six service slices and their chain, rate, latency and per-hour request ranges.
inline std::vector<ServiceSpec> builtin_catalog(double cpu_per_mbps = kDefaultCpuPerMbps) {
  return {
      {Service::CG, SliceClass::eMBB, false, true, 4.0, 4.0, 80.0, 40, 55, cpu_per_mbps},
      {Service::AR, SliceClass::eMBB, false, true, 100.0, 100.0, 20.0, 1, 4, cpu_per_mbps},
      {Service::VoIP, SliceClass::eMBB, true, true, 0.064, 0.064, 100.0, 100, 200, cpu_per_mbps},
      {Service::VS, SliceClass::eMBB, false, true, 4.0, 4.0, 100.0, 50, 100, cpu_per_mbps},
      {Service::MIoT, SliceClass::mMTC, true, false, 1.0, 50.0, 10.0, 10, 15, cpu_per_mbps},
      {Service::I40, SliceClass::uRLLC, true, true, 70.0, 70.0, 15.0, 1, 4, cpu_per_mbps},
  };
}

struct FlowRequest {
  std::int64_t flow_id = 0;
  Service service = Service::CG;
  int hour = 0;
  NodeId source_ru = kNoNode;
  Direction direction = Direction::Uplink;
  double bandwidth_mbps = 0.0;
  double latency_budget_ms = 0.0;
  double cpu_demand = 0.0;
};

struct TrafficTrace {
  std::vector<FlowRequest> flows;  // sorted by (hour, flow_id)
  std::uint64_t seed = 0;

  /// Flows of one hour, as a contiguous span.
  std::span<const FlowRequest> hour(int h) const {
    auto lo = std::lower_bound(flows.begin(), flows.end(), h,
                               [](const FlowRequest& f, int v) { return f.hour < v; });
    auto hi = std::upper_bound(lo, flows.end(), h,
                               [](int v, const FlowRequest& f) { return v < f.hour; });
    return {lo, hi};
  }
};

// ---------------------------------------------------------------------------
// Topology generation

struct CapacityProfile {
  double access_bw_mbps = 1000.0;     // RU attachment links
  double transport_bw_mbps = 10000.0;
  double du_cpu = 200.0;
  double cu_cpu = 200.0;
  double upf_cpu = 200.0;
};

struct TopologyParams {
  int n_ru = 30;
  int n_du = 3;
  int n_cu = 4;
  int n_upf = 2;
  int n_transport = 20;
  double avg_degree = 3.0;
  double area_km = 20.0;
  double delay_per_km_ms = 0.005;
  int max_degree = 8;
  CapacityProfile capacity;
};

namespace detail {

struct UnionFind {
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[std::max(a, b)] = std::min(a, b);
    return true;
  }
  std::vector<int> parent;
};

inline bool connected_without(int n, const std::vector<std::pair<int, int>>& edges, std::size_t skip) {
  UnionFind uf(n);
  int comps = n;
  for (std::size_t i = 0; i < edges.size(); ++i)
    if (i != skip && uf.unite(edges[i].first, edges[i].second)) --comps;
  return comps == 1;
}

}  // namespace detail

/// Random geometric transport mesh with RUs hung off their nearest transport
/// node. Transport nodes are compute candidates; roles DU/CU/UPF are assigned
/// later by place_functions. Deterministic in (params, seed).
inline Json generate_topology(const TopologyParams& p, std::uint64_t seed, int max_retries = 16) {
  if (p.n_ru <= 0 || p.n_du <= 0 || p.n_cu <= 0 || p.n_upf <= 0 || p.n_transport <= 0)
    throw ScenarioError("generate_topology: all node counts must be > 0");
  if (p.avg_degree < 2.0) throw ScenarioError("generate_topology: avg_degree must be >= 2");
  const int T = p.n_transport;
  const int degree_cap = std::min(p.max_degree, static_cast<int>(std::ceil(p.avg_degree)) + 1);

  for (int attempt = 0; attempt < max_retries; ++attempt) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(attempt)));
    std::vector<std::pair<double, double>> pos(T + p.n_ru);
    for (auto& xy : pos) {
      xy.first = rng.uniform(0.0, p.area_km);
      xy.second = rng.uniform(0.0, p.area_km);
    }
    auto dist = [&](int a, int b) { return std::hypot(pos[a].first - pos[b].first, pos[a].second - pos[b].second); };

    // k-nearest-neighbour skeleton.
    std::set<std::pair<int, int>> edge_set;
    const int k = std::min(T - 1, static_cast<int>(std::ceil(p.avg_degree / 2.0)));
    for (int a = 0; a < T; ++a) {
      std::vector<int> others;
      for (int b = 0; b < T; ++b)
        if (b != a) others.push_back(b);
      std::sort(others.begin(), others.end(), [&](int x, int y) {
        const double dx = dist(a, x), dy = dist(a, y);
        return dx != dy ? dx < dy : x < y;
      });
      for (int i = 0; i < k; ++i) edge_set.emplace(std::min(a, others[i]), std::max(a, others[i]));
    }
    // Join components through their closest pair.
    for (;;) {
      detail::UnionFind uf(T);
      for (auto [a, b] : edge_set) uf.unite(a, b);
      double best = std::numeric_limits<double>::infinity();
      std::pair<int, int> best_edge{-1, -1};
      for (int a = 0; a < T; ++a)
        for (int b = a + 1; b < T; ++b)
          if (uf.find(a) != uf.find(b) && dist(a, b) < best) {
            best = dist(a, b);
            best_edge = {a, b};
          }
      if (best_edge.first < 0) break;
      edge_set.insert(best_edge);
    }
    // Prune farthest-first on over-degree nodes, never disconnecting.
    std::vector<std::pair<int, int>> edges(edge_set.begin(), edge_set.end());
    for (;;) {
      std::vector<int> deg(T, 0);
      for (auto [a, b] : edges) {
        ++deg[a];
        ++deg[b];
      }
      std::vector<std::size_t> order(edges.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        const double dx = dist(edges[x].first, edges[x].second);
        const double dy = dist(edges[y].first, edges[y].second);
        return dx != dy ? dx > dy : edges[x] < edges[y];
      });
      bool removed = false;
      for (std::size_t i : order) {
        auto [a, b] = edges[i];
        if ((deg[a] > degree_cap || deg[b] > degree_cap) && detail::connected_without(T, edges, i)) {
          edges.erase(edges.begin() + static_cast<std::ptrdiff_t>(i));
          removed = true;
          break;
        }
      }
      if (!removed) break;
    }
    std::vector<int> deg(T, 0);
    for (auto [a, b] : edges) {
      ++deg[a];
      ++deg[b];
    }
    if (*std::max_element(deg.begin(), deg.end()) > p.max_degree) continue;

    // Attach RUs to the nearest transport node with a free port.
    std::vector<std::pair<int, int>> access;
    bool ok = true;
    for (int r = 0; r < p.n_ru; ++r) {
      const int ru = T + r;
      int best = -1;
      for (int t = 0; t < T; ++t) {
        if (deg[t] >= p.max_degree) continue;
        if (best < 0 || dist(ru, t) < dist(ru, best)) best = t;
      }
      if (best < 0) {
        ok = false;
        break;
      }
      ++deg[best];
      access.emplace_back(best, ru);
    }
    if (!ok) continue;

    Json doc;
    Json nodes = Json::array();
    for (int v = 0; v < T + p.n_ru; ++v) {
      const bool is_ru = v >= T;
      Json jn;
      jn["id"] = v;
      jn["roles"] = Json::array({is_ru ? "RU" : "TRANSPORT"});
      jn["cpu_capacity"] = is_ru ? 0.0 : p.capacity.cu_cpu;
      jn["pos_km"] = {pos[v].first, pos[v].second};
      nodes.push_back(std::move(jn));
    }
    Json links = Json::array();
    for (auto [a, b] : edges)
      links.push_back({{"src", a}, {"dst", b}, {"bandwidth_mbps", p.capacity.transport_bw_mbps},
                       {"delay_ms", dist(a, b) * p.delay_per_km_ms}});
    for (auto [t, ru] : access)
      links.push_back({{"src", ru}, {"dst", t}, {"bandwidth_mbps", p.capacity.access_bw_mbps},
                       {"delay_ms", dist(t, ru) * p.delay_per_km_ms}});
    doc["nodes"] = std::move(nodes);
    doc["links"] = std::move(links);
    doc["meta"] = {{"seed", seed}, {"name", fmt::format("rgg-{}ru-{}t", p.n_ru, p.n_transport)}};
    return doc;
  }
  throw ScenarioError(fmt::format("generate_topology: infeasible parameters after {} attempts "
                                  "(cannot connect {} RUs with max degree {})",
                                  max_retries, p.n_ru, p.max_degree));
}

// ---------------------------------------------------------------------------
// Function placement

struct FunctionCounts {
  int n_du = 1;
  int n_cu = 1;
  int n_upf = 1;
};

struct PlacementResult {
  std::vector<NodeId> du_sites;  // in selection order
  std::vector<NodeId> cu_sites;
  std::vector<NodeId> upf_sites;
  Placement placement;
};

/// Greedy p-center: repeatedly add the candidate that minimizes the largest
/// weighted hop distance from any demand point to its nearest chosen site.
/// Ties fall to the smaller weighted distance sum, then the lowest id.
inline std::vector<NodeId> greedy_p_center(const Topology& t, std::span<const NodeId> candidates,
                                           std::span<const std::pair<NodeId, double>> demand,
                                           int count) {
  if (static_cast<int>(candidates.size()) < count)
    throw ScenarioError(fmt::format("place_functions: {} candidates for {} sites",
                                    candidates.size(), count));
  const double far = static_cast<double>(t.num_nodes()) + 1.0;
  auto hop = [&](NodeId a, NodeId b) {
    const int d = t.hop_distance(a, b);
    return d == kUnreachable ? far : static_cast<double>(d);
  };
  std::vector<double> nearest(demand.size(), std::numeric_limits<double>::infinity());
  std::vector<NodeId> chosen;
  for (int k = 0; k < count; ++k) {
    NodeId best = kNoNode;
    double best_max = 0.0, best_sum = 0.0;
    for (NodeId c : candidates) {
      if (std::find(chosen.begin(), chosen.end(), c) != chosen.end()) continue;
      double mx = 0.0, sum = 0.0;
      for (std::size_t i = 0; i < demand.size(); ++i) {
        const double d = demand[i].second * std::min(nearest[i], hop(demand[i].first, c));
        mx = std::max(mx, d);
        sum += d;
      }
      if (best == kNoNode || mx < best_max || (mx == best_max && (sum < best_sum || (sum == best_sum && c < best)))) {
        best = c;
        best_max = mx;
        best_sum = sum;
      }
    }
    chosen.push_back(best);
    for (std::size_t i = 0; i < demand.size(); ++i)
      nearest[i] = std::min(nearest[i], hop(demand[i].first, best));
  }
  return chosen;
}

namespace detail {
inline NodeId nearest_site(const Topology& t, NodeId from, std::span<const NodeId> sites) {
  NodeId best = kNoNode;
  int best_d = 0;
  for (NodeId s : sites) {
    const int d = t.hop_distance(from, s);
    if (d == kUnreachable) continue;
    if (best == kNoNode || d < best_d || (d == best_d && s < best)) {
      best = s;
      best_d = d;
    }
  }
  return best;
}
}  // namespace detail

/// Fixed placement from peak-hour demand. Candidates are the compute nodes
/// that are not RUs. RU weights are 0.5 + 0.5 * demand / max_demand.
inline PlacementResult place_functions(const Topology& t, const FunctionCounts& counts,
                                       const TrafficTrace& peak_traffic) {
  std::vector<NodeId> candidates;
  for (NodeId v = 0; v < t.num_nodes(); ++v)
    if (t.node(v).is_compute() && !t.node(v).has(kRoleRU)) candidates.push_back(v);
  const auto rus = t.nodes_with(kRoleRU);

  // Peak hour: the hour with the largest offered bandwidth.
  std::array<double, 24> per_hour{};
  for (const auto& f : peak_traffic.flows) per_hour[f.hour] += f.bandwidth_mbps;
  const int peak = static_cast<int>(std::max_element(per_hour.begin(), per_hour.end()) - per_hour.begin());
  std::map<NodeId, double> ru_demand;
  for (const auto& f : peak_traffic.hour(peak)) ru_demand[f.source_ru] += f.bandwidth_mbps;
  double max_demand = 0.0;
  for (auto [_, d] : ru_demand) max_demand = std::max(max_demand, d);
  std::vector<std::pair<NodeId, double>> demand;
  for (NodeId r : rus) {
    const double d = ru_demand.contains(r) ? ru_demand[r] : 0.0;
    demand.emplace_back(r, max_demand > 0.0 ? 0.5 + 0.5 * d / max_demand : 1.0);
  }

  PlacementResult out;
  out.du_sites = greedy_p_center(t, candidates, demand, counts.n_du);
  out.cu_sites = greedy_p_center(t, candidates, demand, counts.n_cu);
  out.upf_sites = greedy_p_center(t, candidates, demand, counts.n_upf);
  for (NodeId r : rus) {
    const NodeId du = detail::nearest_site(t, r, out.du_sites);
    if (du == kNoNode) throw ScenarioError(fmt::format("place_functions: RU {} cannot reach any DU", r));
    out.placement.ru_to_du[r] = du;
  }
  for (NodeId du : out.du_sites) {
    const NodeId cu = detail::nearest_site(t, du, out.cu_sites);
    if (cu == kNoNode) throw ScenarioError(fmt::format("place_functions: DU {} cannot reach any CU", du));
    out.placement.du_to_cu[du] = cu;
  }
  for (int s = 0; s < kNumServices; ++s)
    out.placement.upf_of_service[s] = out.upf_sites[static_cast<std::size_t>(s) % out.upf_sites.size()];
  return out;
}

/// Writes roles, site capacities and the placement maps into a topology
/// document. Candidates that host nothing become pure routers (cpu 0).
inline Json apply_placement(Json doc, const PlacementResult& pr, const CapacityProfile& cap) {
  for (auto& jn : doc["nodes"]) {
    const NodeId v = jn["id"].get<NodeId>();
    const bool is_ru = std::find(jn["roles"].begin(), jn["roles"].end(), "RU") != jn["roles"].end();
    if (is_ru) continue;
    auto hosts = [&](const std::vector<NodeId>& s) { return std::find(s.begin(), s.end(), v) != s.end(); };
    Json roles = Json::array({"TRANSPORT"});
    double cpu = 0.0;
    if (hosts(pr.du_sites)) {
      roles.push_back("DU");
      cpu += cap.du_cpu;
    }
    if (hosts(pr.cu_sites)) {
      roles.push_back("CU");
      cpu += cap.cu_cpu;
    }
    if (hosts(pr.upf_sites)) {
      roles.push_back("UPF");
      cpu += cap.upf_cpu;
    }
    jn["roles"] = roles;
    jn["cpu_capacity"] = cpu;
  }
  Json jp;
  jp["ru_to_du"] = Json::object();
  for (auto [k, v] : pr.placement.ru_to_du) jp["ru_to_du"][std::to_string(k)] = v;
  jp["du_to_cu"] = Json::object();
  for (auto [k, v] : pr.placement.du_to_cu) jp["du_to_cu"][std::to_string(k)] = v;
  jp["upf_of_service"] = Json::object();
  for (int s = 0; s < kNumServices; ++s)
    jp["upf_of_service"][std::string(kServiceNames[s])] = pr.placement.upf_of_service[s];
  doc["placement"] = std::move(jp);
  return doc;
}

// ---------------------------------------------------------------------------
// Traffic

using HourlyProfile = std::array<double, 24>;

/// Piecewise-linear diurnal shape: trough 0.35 at 04:00, peak 1.0 at 20:00.
inline HourlyProfile default_diurnal_profile() {
  HourlyProfile p{};
  for (int h = 0; h < 24; ++h) {
    if (h >= 4 && h <= 20) {
      p[h] = 0.35 + 0.65 * (h - 4) / 16.0;
    } else {
      const int since_peak = (h - 20 + 24) % 24;
      p[h] = 1.0 - 0.65 * since_peak / 8.0;
    }
  }
  return p;
}

struct TrafficParams {
  HourlyProfile profile = default_diurnal_profile();
  double uplink_fraction = 0.5;  // for services that define both chains
  double load_scale = 1.0;       // multiplies every hourly request count
  std::vector<double> ru_weights;  // empty: uniform source RUs
};

/// Source-RU weights concentrated around a point: w = floor + exp(-d / scale).
inline std::vector<double> hotspot_ru_weights(const Topology& t, std::pair<double, double> center_km,
                                              double scale_km, double floor = 0.05) {
  std::vector<double> w;
  for (NodeId r : t.nodes_with(kRoleRU)) {
    const auto& pos = t.node(r).pos_km;
    const double d = pos ? std::hypot(pos->first - center_km.first, pos->second - center_km.second) : 0.0;
    w.push_back(floor + std::exp(-d / scale_km));
  }
  return w;
}

inline TrafficTrace generate_traffic(std::span<const ServiceSpec> catalog, std::span<const NodeId> rus,
                                     const TrafficParams& params, std::uint64_t seed) {
  if (rus.empty()) throw ScenarioError("generate_traffic: no RU nodes");
  if (!params.ru_weights.empty() && params.ru_weights.size() != rus.size())
    throw ScenarioError("generate_traffic: ru_weights length differs from RU count");
  std::vector<double> cumulative;
  if (!params.ru_weights.empty()) {
    std::partial_sum(params.ru_weights.begin(), params.ru_weights.end(), std::back_inserter(cumulative));
  }
  Rng rng(seed);
  TrafficTrace trace;
  trace.seed = seed;
  std::int64_t next_id = 0;
  for (int h = 0; h < 24; ++h) {
    for (const auto& spec : catalog) {
      const double base = rng.uniform(spec.requests_lo, spec.requests_hi);
      const auto count = std::max<std::int64_t>(0, std::llround(base * params.profile[h] * params.load_scale));
      for (std::int64_t i = 0; i < count; ++i) {
        FlowRequest f;
        f.flow_id = next_id++;
        f.service = spec.id;
        f.hour = h;
        if (cumulative.empty()) {
          f.source_ru = rus[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(rus.size()) - 1))];
        } else {
          const double x = rng.uniform() * cumulative.back();
          const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), x);
          f.source_ru = rus[std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), rus.size() - 1)];
        }
        if (spec.uplink_chain && spec.downlink_chain)
          f.direction = rng.uniform() < params.uplink_fraction ? Direction::Uplink : Direction::Downlink;
        else
          f.direction = spec.uplink_chain ? Direction::Uplink : Direction::Downlink;
        f.bandwidth_mbps = spec.bandwidth_lo_mbps == spec.bandwidth_hi_mbps
                               ? spec.bandwidth_lo_mbps
                               : quantize_mbps(rng.uniform(spec.bandwidth_lo_mbps, spec.bandwidth_hi_mbps));
        f.latency_budget_ms = spec.latency_budget_ms;
        f.cpu_demand = quantize_cpu(f.bandwidth_mbps * spec.cpu_per_mbps);
        trace.flows.push_back(f);
      }
    }
  }
  return trace;
}

inline constexpr std::string_view kTraceHeader =
    "flow_id,hour,service,source_ru,direction,bandwidth_mbps,latency_budget_ms,cpu_demand";

inline std::string trace_to_csv(const TrafficTrace& t) {
  std::string out(kTraceHeader);
  out += '\n';
  for (const auto& f : t.flows)
    out += fmt::format("{},{},{},{},{},{},{},{}\n", f.flow_id, f.hour, service_name(f.service), f.source_ru,
                       direction_name(f.direction), f.bandwidth_mbps, f.latency_budget_ms, f.cpu_demand);
  return out;
}

inline TrafficTrace trace_from_csv(std::string_view text) {
  TrafficTrace t;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader)
    throw ScenarioError("traffic trace: bad header, expected '" + std::string(kTraceHeader) + "'");
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw ScenarioError(fmt::format("traffic trace row {}: expected 8 fields", row));
    try {
      FlowRequest f;
      f.flow_id = std::stoll(cells[0]);
      f.hour = std::stoi(cells[1]);
      const auto s = parse_service(cells[2]);
      const auto d = parse_direction(cells[4]);
      if (!s || !d || f.hour < 0 || f.hour > 23) throw std::invalid_argument(line);
      f.service = *s;
      f.source_ru = std::stoi(cells[3]);
      f.direction = *d;
      f.bandwidth_mbps = std::stod(cells[5]);
      f.latency_budget_ms = std::stod(cells[6]);
      f.cpu_demand = std::stod(cells[7]);
      t.flows.push_back(f);
    } catch (const std::exception&) {
      throw ScenarioError(fmt::format("traffic trace row {}: malformed '{}'", row, line));
    }
  }
  std::stable_sort(t.flows.begin(), t.flows.end(), [](const FlowRequest& a, const FlowRequest& b) {
    return a.hour != b.hour ? a.hour < b.hour : a.flow_id < b.flow_id;
  });
  return t;
}

inline std::uint64_t trace_hash(const TrafficTrace& t) { return fnv1a(trace_to_csv(t)); }

/// Topology, peak-demand placement and capacities in one deterministic call.
inline Json build_scenario(const TopologyParams& p, std::uint64_t seed,
                           const TrafficParams& traffic = {}) {
  Json doc = generate_topology(p, seed);
  const auto bare = load_topology(doc);
  const auto catalog = builtin_catalog();
  const auto peak = generate_traffic(catalog, bare->nodes_with(kRoleRU), traffic, mix_seed(seed, 0xF00D));
  const auto pr = place_functions(*bare, FunctionCounts{p.n_du, p.n_cu, p.n_upf}, peak);
  return apply_placement(std::move(doc), pr, p.capacity);
}

}  // namespace oransfc
