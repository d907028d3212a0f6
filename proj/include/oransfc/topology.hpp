#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "oransfc/types.hpp"

namespace oransfc {

using Json = nlohmann::json;

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NodeAttrs {
  RoleSet roles = 0;
  double cpu_capacity = 0.0;
  // Processing delay per hosted VNF, indexed by Service.
  std::array<double, kNumServices> proc_delay_ms{};
  // Optional per-site power overrides; the power config supplies defaults.
  std::optional<double> p_idle_w;
  std::optional<double> p_max_w;
  // Carried for completeness, never admission-controlled.
  double memory_gb = 0.0;
  double storage_gb = 0.0;
  std::optional<std::pair<double, double>> pos_km;

  bool has(Role r) const { return (roles & r) != 0; }
  bool is_compute() const { return cpu_capacity > 0.0; }
};

struct LinkAttrs {
  NodeId src = kNoNode;
  NodeId dst = kNoNode;
  double bandwidth_mbps = 0.0;
  double delay_ms = 0.0;
};

struct Placement {
  std::map<NodeId, NodeId> ru_to_du;
  std::map<NodeId, NodeId> du_to_cu;
  std::array<NodeId, kNumServices> upf_of_service{kNoNode, kNoNode, kNoNode,
                                                  kNoNode, kNoNode, kNoNode};

  NodeId upf(Service s) const { return upf_of_service[static_cast<int>(s)]; }
  bool empty() const { return ru_to_du.empty() && du_to_cu.empty(); }
};

struct Adjacent {
  LinkId link;
  NodeId node;
};

struct ScenarioMeta {
  std::uint64_t seed = 0;
  std::string name;
};

/// Immutable graph structure. Links are stored directed; physical link k
/// occupies ids 2k (as declared) and 2k+1 (reverse).
class Topology {
 public:
  Topology(std::vector<NodeAttrs> nodes, const std::vector<LinkAttrs>& physical_links,
           Placement placement, ScenarioMeta meta)
      : nodes_(std::move(nodes)), placement_(std::move(placement)), meta_(std::move(meta)) {
    const auto n = static_cast<NodeId>(nodes_.size());
    std::set<std::pair<NodeId, NodeId>> seen;
    for (std::size_t k = 0; k < physical_links.size(); ++k) {
      const auto& l = physical_links[k];
      auto where = [&] { return "link #" + std::to_string(k) + " (" + std::to_string(l.src) +
                                "->" + std::to_string(l.dst) + ")"; };
      if (l.src < 0 || l.src >= n) throw ScenarioError(where() + ": unknown node id " + std::to_string(l.src));
      if (l.dst < 0 || l.dst >= n) throw ScenarioError(where() + ": unknown node id " + std::to_string(l.dst));
      if (l.src == l.dst) throw ScenarioError(where() + ": self-loop");
      if (!(l.bandwidth_mbps > 0.0)) throw ScenarioError(where() + ": bandwidth_mbps must be > 0");
      if (!(l.delay_ms >= 0.0)) throw ScenarioError(where() + ": delay_ms must be >= 0");
      if (!seen.emplace(std::min(l.src, l.dst), std::max(l.src, l.dst)).second)
        throw ScenarioError(where() + ": duplicate link");
      links_.push_back(l);
      links_.push_back(LinkAttrs{l.dst, l.src, l.bandwidth_mbps, l.delay_ms});
    }
    for (NodeId v = 0; v < n; ++v) {
      const auto& a = nodes_[v];
      const auto id = std::to_string(v);
      if (!(a.cpu_capacity >= 0.0)) throw ScenarioError("node " + id + ": cpu_capacity must be >= 0");
      if (a.has(kRoleRU) && a.cpu_capacity != 0.0)
        throw ScenarioError("node " + id + ": RU nodes must have cpu_capacity 0");
      for (double d : a.proc_delay_ms)
        if (!(d >= 0.0)) throw ScenarioError("node " + id + ": proc_delay entries must be >= 0");
    }

    out_.assign(n, {});
    in_.assign(n, {});
    for (LinkId l = 0; l < static_cast<LinkId>(links_.size()); ++l) {
      out_[links_[l].src].push_back({l, links_[l].dst});
      in_[links_[l].dst].push_back(l);
    }
    for (auto& adj : out_) {
      std::sort(adj.begin(), adj.end(),
                [](const Adjacent& a, const Adjacent& b) { return a.node < b.node; });
      max_out_degree_ = std::max(max_out_degree_, static_cast<int>(adj.size()));
    }

    cpu_capacity_units_.resize(n);
    for (NodeId v = 0; v < n; ++v) cpu_capacity_units_[v] = cpu_units(nodes_[v].cpu_capacity);
    bw_capacity_units_.resize(links_.size());
    for (std::size_t l = 0; l < links_.size(); ++l) bw_capacity_units_[l] = bw_units(links_[l].bandwidth_mbps);

    compute_distances();
    validate_placement();
  }

  NodeId num_nodes() const { return static_cast<NodeId>(nodes_.size()); }
  LinkId num_links() const { return static_cast<LinkId>(links_.size()); }
  const NodeAttrs& node(NodeId v) const { return nodes_.at(v); }
  const LinkAttrs& link(LinkId l) const { return links_.at(l); }
  std::span<const NodeAttrs> nodes() const { return nodes_; }
  std::span<const LinkAttrs> links() const { return links_; }
  static LinkId twin(LinkId l) { return l ^ 1; }

  /// Out-links of v ordered by ascending neighbor id. Entry i is routing action i.
  std::span<const Adjacent> out_neighbors(NodeId v) const { return out_.at(v); }
  std::span<const LinkId> in_links(NodeId v) const { return in_.at(v); }

  /// BFS hop count, or kUnreachable.
  int hop_distance(NodeId from, NodeId to) const {
    return dist_[static_cast<std::size_t>(from) * nodes_.size() + static_cast<std::size_t>(to)];
  }

  int max_out_degree() const { return max_out_degree_; }
  /// Largest finite hop distance (at least 1).
  int diameter() const { return diameter_; }

  const Placement& placement() const { return placement_; }
  const ScenarioMeta& meta() const { return meta_; }

  std::vector<NodeId> nodes_with(Role r) const {
    std::vector<NodeId> out;
    for (NodeId v = 0; v < num_nodes(); ++v)
      if (nodes_[v].has(r)) out.push_back(v);
    return out;
  }

  double proc_delay_ms(NodeId v, Service s) const {
    return nodes_.at(v).proc_delay_ms[static_cast<int>(s)];
  }

  std::span<const std::int64_t> cpu_capacity_units() const { return cpu_capacity_units_; }
  std::span<const std::int64_t> bw_capacity_units() const { return bw_capacity_units_; }

 private:
  void compute_distances() {
    const auto n = nodes_.size();
    dist_.assign(n * n, kUnreachable);
    std::vector<NodeId> queue;
    queue.reserve(n);
    for (NodeId s = 0; s < static_cast<NodeId>(n); ++s) {
      int* row = &dist_[static_cast<std::size_t>(s) * n];
      row[s] = 0;
      queue.clear();
      queue.push_back(s);
      for (std::size_t head = 0; head < queue.size(); ++head) {
        const NodeId u = queue[head];
        for (const auto& a : out_[u]) {
          if (row[a.node] == kUnreachable) {
            row[a.node] = row[u] + 1;
            diameter_ = std::max(diameter_, row[a.node]);
            queue.push_back(a.node);
          }
        }
      }
    }
  }

  void validate_placement() const {
    auto require = [&](NodeId v, Role r, const char* what) {
      if (v < 0 || v >= num_nodes())
        throw ScenarioError(std::string("placement.") + what + ": unknown node id " + std::to_string(v));
      if (!nodes_[v].has(r))
        throw ScenarioError(std::string("placement.") + what + ": node " + std::to_string(v) +
                            " lacks the required role");
    };
    for (auto [ru, du] : placement_.ru_to_du) {
      require(ru, kRoleRU, "ru_to_du");
      require(du, kRoleDU, "ru_to_du");
    }
    for (auto [du, cu] : placement_.du_to_cu) {
      require(du, kRoleDU, "du_to_cu");
      require(cu, kRoleCU, "du_to_cu");
    }
    for (NodeId upf : placement_.upf_of_service)
      if (upf != kNoNode) require(upf, kRoleUPF, "upf_of_service");
  }

  std::vector<NodeAttrs> nodes_;
  std::vector<LinkAttrs> links_;
  std::vector<std::vector<Adjacent>> out_;
  std::vector<std::vector<LinkId>> in_;
  std::vector<int> dist_;
  std::vector<std::int64_t> cpu_capacity_units_;
  std::vector<std::int64_t> bw_capacity_units_;
  int max_out_degree_ = 0;
  int diameter_ = 1;
  Placement placement_;
  ScenarioMeta meta_;
};

enum class LedgerErrorKind { InsufficientCpu, InsufficientBw };

class LedgerError : public std::runtime_error {
 public:
  LedgerError(LedgerErrorKind kind, std::int32_t element)
      : std::runtime_error(std::string(kind == LedgerErrorKind::InsufficientCpu
                                           ? "INSUFFICIENT_CPU at node "
                                           : "INSUFFICIENT_BW on link ") +
                           std::to_string(element)),
        kind_(kind),
        element_(element) {}
  LedgerErrorKind kind() const { return kind_; }
  std::int32_t element() const { return element_; }

 private:
  LedgerErrorKind kind_;
  std::int32_t element_;
};

struct CpuClaim {
  NodeId node;
  double amount;
};
struct BwClaim {
  LinkId link;
  double mbps;
};

/// Exact deltas applied by a commit, in ledger units.
struct CommitReceipt {
  std::vector<std::pair<NodeId, std::int64_t>> cpu;
  std::vector<std::pair<LinkId, std::int64_t>> bw;
  std::vector<std::pair<NodeId, std::int64_t>> tracked;
};

/// Free resources in fixed-point units. `cpu_tracked` accumulates load on
/// DU/UPF hosts, which counts toward power but is not admission-controlled.
struct ResourceLedger {
  std::vector<std::int64_t> cpu_free;
  std::vector<std::int64_t> bw_free;
  std::vector<std::int64_t> cpu_tracked;
  // Process-unique stamp of the last mutation; copies share it.
  std::uint64_t version = 0;

  bool operator==(const ResourceLedger& o) const {
    return cpu_free == o.cpu_free && bw_free == o.bw_free && cpu_tracked == o.cpu_tracked;
  }

  void touch() {
    static std::atomic<std::uint64_t> counter{0};
    version = ++counter;
  }
};

/// Topology plus single-owner mutable ledger. Copying shares the structure
/// and duplicates the ledger.
class NetworkGraph {
 public:
  explicit NetworkGraph(std::shared_ptr<const Topology> topo) : topo_(std::move(topo)) {
    reset_ledger();
  }

  const Topology& topology() const { return *topo_; }
  const std::shared_ptr<const Topology>& topology_ptr() const { return topo_; }
  const ResourceLedger& ledger() const { return ledger_; }

  std::span<const Adjacent> out_neighbors(NodeId v) const { return topo_->out_neighbors(v); }
  int hop_distance(NodeId from, NodeId to) const { return topo_->hop_distance(from, to); }

  double cpu_free(NodeId v) const { return cpu_value(ledger_.cpu_free.at(v)); }
  double bw_free(LinkId l) const { return bw_mbps(ledger_.bw_free.at(l)); }
  double cpu_tracked(NodeId v) const { return cpu_value(ledger_.cpu_tracked.at(v)); }

  /// Claims everything or nothing. Repeated elements are aggregated before
  /// the capacity check.
  CommitReceipt commit(std::span<const CpuClaim> cpu, std::span<const BwClaim> bw,
                       std::span<const CpuClaim> tracked = {}) {
    CommitReceipt r;
    std::map<NodeId, std::int64_t> cpu_sum;
    for (const auto& c : cpu) cpu_sum[c.node] += cpu_units(c.amount);
    std::map<LinkId, std::int64_t> bw_sum;
    for (const auto& b : bw) bw_sum[b.link] += bw_units(b.mbps);
    for (auto [v, amt] : cpu_sum) {
      if (amt < 0 || amt > ledger_.cpu_free.at(v))
        throw LedgerError(LedgerErrorKind::InsufficientCpu, v);
    }
    for (auto [l, amt] : bw_sum) {
      if (amt < 0 || amt > ledger_.bw_free.at(l))
        throw LedgerError(LedgerErrorKind::InsufficientBw, l);
    }
    for (auto [v, amt] : cpu_sum) {
      ledger_.cpu_free[v] -= amt;
      r.cpu.emplace_back(v, amt);
    }
    for (auto [l, amt] : bw_sum) {
      ledger_.bw_free[l] -= amt;
      r.bw.emplace_back(l, amt);
    }
    for (const auto& t : tracked) {
      const auto amt = cpu_units(t.amount);
      ledger_.cpu_tracked.at(t.node) += amt;
      r.tracked.emplace_back(t.node, amt);
    }
    ledger_.touch();
    return r;
  }

  void release(const CommitReceipt& r) {
    for (auto [v, amt] : r.cpu) ledger_.cpu_free.at(v) += amt;
    for (auto [l, amt] : r.bw) ledger_.bw_free.at(l) += amt;
    for (auto [v, amt] : r.tracked) ledger_.cpu_tracked.at(v) -= amt;
    ledger_.touch();
  }

  void reset_ledger() {
    const auto cpu = topo_->cpu_capacity_units();
    const auto bw = topo_->bw_capacity_units();
    ledger_.cpu_free.assign(cpu.begin(), cpu.end());
    ledger_.bw_free.assign(bw.begin(), bw.end());
    ledger_.cpu_tracked.assign(cpu.size(), 0);
    ledger_.touch();
  }

 private:
  std::shared_ptr<const Topology> topo_;
  ResourceLedger ledger_;
};

// ---------------------------------------------------------------------------
// Scenario document I/O

namespace detail {

inline const Json& require_key(const Json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key))
    throw ScenarioError(where + ": missing required key '" + key + "'");
  return obj.at(key);
}

template <typename T>
T require_number(const Json& obj, const char* key, const std::string& where) {
  const Json& v = require_key(obj, key, where);
  if (!v.is_number()) throw ScenarioError(where + "." + key + ": expected a number");
  return v.get<T>();
}

inline NodeId parse_node_key(const std::string& key, const std::string& where) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(key, &used);
    if (used != key.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ScenarioError(where + ": node key '" + key + "' is not an integer id");
  }
}

}  // namespace detail

/// Default VNF processing delay applied to DU/CU/UPF hosts when a node's
/// proc_delay map omits a service.
inline constexpr double kDefaultProcDelayMs = 0.5;

inline std::shared_ptr<const Topology> load_topology(const Json& doc,
                                                     double default_proc_ms = kDefaultProcDelayMs) {
  using detail::require_key;
  using detail::require_number;
  if (!doc.is_object()) throw ScenarioError("scenario: document must be an object");
  const Json& jnodes = require_key(doc, "nodes", "scenario");
  const Json& jlinks = require_key(doc, "links", "scenario");
  if (!jnodes.is_array()) throw ScenarioError("scenario.nodes: expected a list");
  if (!jlinks.is_array()) throw ScenarioError("scenario.links: expected a list");

  const auto n = jnodes.size();
  std::vector<NodeAttrs> nodes(n);
  std::vector<bool> defined(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const Json& jn = jnodes[i];
    const std::string where = "nodes[" + std::to_string(i) + "]";
    const auto id = require_number<std::int64_t>(jn, "id", where);
    if (id < 0 || static_cast<std::size_t>(id) >= n)
      throw ScenarioError(where + ": id " + std::to_string(id) + " outside dense range 0.." +
                          std::to_string(n - 1));
    if (defined[id]) throw ScenarioError(where + ": duplicate node id " + std::to_string(id));
    defined[id] = true;
    NodeAttrs& a = nodes[id];
    const Json& roles = require_key(jn, "roles", where);
    if (!roles.is_array()) throw ScenarioError(where + ".roles: expected a list");
    for (const auto& r : roles) {
      const auto role = r.is_string() ? parse_role(r.get<std::string>()) : std::nullopt;
      if (!role) throw ScenarioError(where + ".roles: unknown role " + r.dump());
      a.roles |= *role;
    }
    a.cpu_capacity = require_number<double>(jn, "cpu_capacity", where);
    const bool hosts_vnf = (a.roles & (kRoleDU | kRoleCU | kRoleUPF)) != 0;
    a.proc_delay_ms.fill(hosts_vnf ? default_proc_ms : 0.0);
    if (jn.contains("proc_delay")) {
      const Json& pd = jn.at("proc_delay");
      if (!pd.is_object()) throw ScenarioError(where + ".proc_delay: expected a map");
      for (const auto& [svc, ms] : pd.items()) {
        const auto s = parse_service(svc);
        if (!s) throw ScenarioError(where + ".proc_delay: unknown service '" + svc + "'");
        if (!ms.is_number()) throw ScenarioError(where + ".proc_delay." + svc + ": expected a number");
        a.proc_delay_ms[static_cast<int>(*s)] = ms.get<double>();
      }
    }
    if (jn.contains("p_idle_w")) a.p_idle_w = jn.at("p_idle_w").get<double>();
    if (jn.contains("p_max_w")) a.p_max_w = jn.at("p_max_w").get<double>();
    if (jn.contains("memory_gb")) a.memory_gb = jn.at("memory_gb").get<double>();
    if (jn.contains("storage_gb")) a.storage_gb = jn.at("storage_gb").get<double>();
    if (jn.contains("pos_km")) {
      const auto& p = jn.at("pos_km");
      a.pos_km = std::make_pair(p.at(0).get<double>(), p.at(1).get<double>());
    }
  }

  std::vector<LinkAttrs> links;
  links.reserve(jlinks.size());
  for (std::size_t k = 0; k < jlinks.size(); ++k) {
    const Json& jl = jlinks[k];
    const std::string where = "links[" + std::to_string(k) + "]";
    LinkAttrs l;
    l.src = static_cast<NodeId>(require_number<std::int64_t>(jl, "src", where));
    l.dst = static_cast<NodeId>(require_number<std::int64_t>(jl, "dst", where));
    l.bandwidth_mbps = require_number<double>(jl, "bandwidth_mbps", where);
    l.delay_ms = require_number<double>(jl, "delay_ms", where);
    links.push_back(l);
  }

  Placement placement;
  if (doc.contains("placement")) {
    const Json& jp = doc.at("placement");
    auto read_map = [&](const char* key, std::map<NodeId, NodeId>& out) {
      if (!jp.contains(key)) return;
      const std::string where = std::string("placement.") + key;
      for (const auto& [k, v] : jp.at(key).items()) {
        if (!v.is_number_integer()) throw ScenarioError(where + "." + k + ": expected a node id");
        out[detail::parse_node_key(k, where)] = v.get<NodeId>();
      }
    };
    read_map("ru_to_du", placement.ru_to_du);
    read_map("du_to_cu", placement.du_to_cu);
    if (jp.contains("upf_of_service")) {
      for (const auto& [svc, v] : jp.at("upf_of_service").items()) {
        const auto s = parse_service(svc);
        if (!s) throw ScenarioError("placement.upf_of_service: unknown service '" + svc + "'");
        placement.upf_of_service[static_cast<int>(*s)] = v.get<NodeId>();
      }
    }
  }

  ScenarioMeta meta;
  if (doc.contains("meta")) {
    const Json& jm = doc.at("meta");
    if (jm.contains("seed")) meta.seed = jm.at("seed").get<std::uint64_t>();
    if (jm.contains("name")) meta.name = jm.at("name").get<std::string>();
  }
  return std::make_shared<const Topology>(std::move(nodes), links, std::move(placement),
                                          std::move(meta));
}

/// Inverse of load_topology. Keys are emitted in sorted order, so equal
/// topologies serialize to identical bytes.
inline Json to_json(const Topology& t) {
  Json doc;
  Json jnodes = Json::array();
  for (NodeId v = 0; v < t.num_nodes(); ++v) {
    const auto& a = t.node(v);
    Json jn;
    jn["id"] = v;
    Json roles = Json::array();
    for (auto [r, name] : kRoleNames)
      if (a.has(r)) roles.push_back(std::string(name));
    jn["roles"] = roles;
    jn["cpu_capacity"] = a.cpu_capacity;
    Json pd = Json::object();
    for (int s = 0; s < kNumServices; ++s)
      pd[std::string(kServiceNames[s])] = a.proc_delay_ms[s];
    jn["proc_delay"] = pd;
    if (a.p_idle_w) jn["p_idle_w"] = *a.p_idle_w;
    if (a.p_max_w) jn["p_max_w"] = *a.p_max_w;
    if (a.memory_gb != 0.0) jn["memory_gb"] = a.memory_gb;
    if (a.storage_gb != 0.0) jn["storage_gb"] = a.storage_gb;
    if (a.pos_km) jn["pos_km"] = {a.pos_km->first, a.pos_km->second};
    jnodes.push_back(std::move(jn));
  }
  doc["nodes"] = std::move(jnodes);
  Json jlinks = Json::array();
  for (LinkId l = 0; l < t.num_links(); l += 2) {
    const auto& a = t.link(l);
    jlinks.push_back({{"src", a.src}, {"dst", a.dst}, {"bandwidth_mbps", a.bandwidth_mbps},
                      {"delay_ms", a.delay_ms}});
  }
  doc["links"] = std::move(jlinks);
  const auto& p = t.placement();
  Json jp;
  jp["ru_to_du"] = Json::object();
  for (auto [k, v] : p.ru_to_du) jp["ru_to_du"][std::to_string(k)] = v;
  jp["du_to_cu"] = Json::object();
  for (auto [k, v] : p.du_to_cu) jp["du_to_cu"][std::to_string(k)] = v;
  jp["upf_of_service"] = Json::object();
  for (int s = 0; s < kNumServices; ++s)
    if (p.upf_of_service[s] != kNoNode)
      jp["upf_of_service"][std::string(kServiceNames[s])] = p.upf_of_service[s];
  doc["placement"] = std::move(jp);
  doc["meta"] = {{"seed", t.meta().seed}, {"name", t.meta().name}};
  return doc;
}

}  // namespace oransfc
