#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "oransfc/csp.hpp"
#include "oransfc/env.hpp"
#include "oransfc/ppo.hpp"
#include "oransfc/scenario.hpp"

namespace oransfc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Experiment config (JSON)

struct HotspotConfig {
  double x_km = 0.0;
  double y_km = 0.0;
  double scale_km = 5.0;
  double floor = 0.05;
};

struct TrafficConfig {
  double load_scale = 1.0;
  double uplink_fraction = 0.5;
  double cpu_per_mbps = kDefaultCpuPerMbps;
  std::optional<HotspotConfig> hotspot;
};

struct ScenarioConfig {
  TopologyParams topology;
  std::vector<double> cu_p_max_w;  // per CU site in selection order, cycled
  std::vector<double> cu_p_idle_w;
};

struct ExperimentConfig {
  ScenarioConfig scenario;
  TrafficConfig traffic;
  PowerParams power;
  RewardConfig reward;
  TrainConfig train;
  Json source = Json::object();  // as read, for hashing
};

namespace detail {

class Section {
 public:
  Section(const Json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
  }
  /// Rejects keys that were never asked for (typos).
  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw ConfigError(fmt::format("config: unknown key '{}.{}'", name_, k));
  }
  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const Json::exception& e) {
      throw ConfigError(fmt::format("config: bad value for '{}.{}': {}", name_, key, e.what()));
    }
  }
  const Json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const Json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline ExperimentConfig parse_config(const Json& j) {
  ExperimentConfig c;
  c.source = j;
  detail::Section root(j, "config");
  if (const Json* s = root.sub("scenario")) {
    detail::Section sec(*s, "scenario");
    auto& t = c.scenario.topology;
    sec.get("n_ru", t.n_ru);
    sec.get("n_du", t.n_du);
    sec.get("n_cu", t.n_cu);
    sec.get("n_upf", t.n_upf);
    sec.get("n_transport", t.n_transport);
    sec.get("avg_degree", t.avg_degree);
    sec.get("area_km", t.area_km);
    sec.get("delay_per_km_ms", t.delay_per_km_ms);
    sec.get("max_degree", t.max_degree);
    sec.get("cu_p_max_w", c.scenario.cu_p_max_w);
    sec.get("cu_p_idle_w", c.scenario.cu_p_idle_w);
    if (const Json* cap = sec.sub("capacity")) {
      detail::Section cs(*cap, "scenario.capacity");
      cs.get("access_bw_mbps", t.capacity.access_bw_mbps);
      cs.get("transport_bw_mbps", t.capacity.transport_bw_mbps);
      cs.get("du_cpu", t.capacity.du_cpu);
      cs.get("cu_cpu", t.capacity.cu_cpu);
      cs.get("upf_cpu", t.capacity.upf_cpu);
      cs.finish();
    }
    sec.finish();
  }
  if (const Json* s = root.sub("traffic")) {
    detail::Section sec(*s, "traffic");
    sec.get("load_scale", c.traffic.load_scale);
    sec.get("uplink_fraction", c.traffic.uplink_fraction);
    sec.get("cpu_per_mbps", c.traffic.cpu_per_mbps);
    if (const Json* h = sec.sub("hotspot")) {
      detail::Section hs(*h, "traffic.hotspot");
      HotspotConfig hc;
      hs.get("x_km", hc.x_km);
      hs.get("y_km", hc.y_km);
      hs.get("scale_km", hc.scale_km);
      hs.get("floor", hc.floor);
      hs.finish();
      c.traffic.hotspot = hc;
    }
    sec.finish();
  }
  if (const Json* s = root.sub("power")) {
    detail::Section sec(*s, "power");
    auto& p = c.power;
    sec.get("node_p_idle_w", p.node_p_idle_w);
    sec.get("node_p_max_w", p.node_p_max_w);
    sec.get("router_p_idle_w", p.router_p_idle_w);
    sec.get("link_p_idle_w", p.link_p_idle_w);
    sec.get("e_pp_joules", p.e_pp_joules);
    sec.get("e_sf_joules", p.e_sf_joules);
    sec.get("packet_len_bytes", p.packet_len_bytes);
    sec.finish();
  }
  if (const Json* s = root.sub("reward")) {
    detail::Section sec(*s, "reward");
    auto& r = c.reward;
    sec.get("c_shape", r.c_shape);
    sec.get("c_loop", r.c_loop);
    sec.get("c_seg", r.c_seg);
    sec.get("c_hop", r.c_hop);
    sec.get("c_embed_energy", r.c_embed_energy);
    sec.get("c_path_energy", r.c_path_energy);
    sec.get("c_success", r.c_success);
    sec.get("c_fail", r.c_fail);
    sec.get("allow_revisit", r.allow_revisit);
    sec.get("max_steps_per_diameter", r.max_steps_per_diameter);
    sec.finish();
  }
  if (const Json* s = root.sub("train")) {
    detail::Section sec(*s, "train");
    auto& t = c.train;
    sec.get("total_steps", t.total_steps);
    sec.get("rollout_size", t.rollout_size);
    sec.get("minibatch", t.minibatch);
    sec.get("epochs", t.epochs);
    sec.get("lr", t.lr);
    sec.get("gamma", t.gamma);
    sec.get("gae_lambda", t.gae_lambda);
    sec.get("clip", t.clip);
    sec.get("value_coef", t.value_coef);
    sec.get("entropy_coef", t.entropy_coef);
    sec.get("max_grad_norm", t.max_grad_norm);
    sec.get("adam_eps", t.adam_eps);
    sec.get("reward_scale", t.reward_scale);
    sec.get("hidden", t.hidden);
    sec.get("embed", t.embed);
    sec.get("workers", t.workers);
    sec.get("trailing_window", t.trailing_window);
    sec.get("checkpoint_every", t.checkpoint_every);
    sec.finish();
  }
  root.finish();
  c.power.validate();
  c.train.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  try {
    return parse_config(Json::parse(f));
  } catch (const Json::parse_error& e) {
    throw ConfigError(fmt::format("config {}: {}", path.string(), e.what()));
  }
}

inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a(c.source.dump()); }

// ---------------------------------------------------------------------------
// Scenario and traffic assembly

inline constexpr std::uint64_t kTrainTrafficStream = 0x7261696e;
inline constexpr std::uint64_t kEvalTrafficStream = 0x74657374;

inline TrafficParams traffic_params(const TrafficConfig& tc, const Topology& t) {
  TrafficParams p;
  p.load_scale = tc.load_scale;
  p.uplink_fraction = tc.uplink_fraction;
  if (tc.hotspot) p.ru_weights = hotspot_ru_weights(t, {tc.hotspot->x_km, tc.hotspot->y_km}, tc.hotspot->scale_km, tc.hotspot->floor);
  return p;
}

/// Generated topology with placement and any per-CU power overrides.
inline Json make_scenario(const ExperimentConfig& c, std::uint64_t seed) {
  const auto& tp = c.scenario.topology;
  Json doc = generate_topology(tp, seed);
  const auto bare = load_topology(doc);
  const auto catalog = builtin_catalog(c.traffic.cpu_per_mbps);
  const auto peak = generate_traffic(catalog, bare->nodes_with(kRoleRU), traffic_params(c.traffic, *bare),
                                     mix_seed(seed, 0xF00D));
  const auto pr = place_functions(*bare, FunctionCounts{tp.n_du, tp.n_cu, tp.n_upf}, peak);
  doc = apply_placement(std::move(doc), pr, tp.capacity);
  auto override_power = [&](const std::vector<double>& values, const char* key) {
    if (values.empty()) return;
    for (std::size_t i = 0; i < pr.cu_sites.size(); ++i) doc["nodes"][pr.cu_sites[i]][key] = values[i % values.size()];
  };
  override_power(c.scenario.cu_p_max_w, "p_max_w");
  override_power(c.scenario.cu_p_idle_w, "p_idle_w");
  return doc;
}

inline TrafficTrace make_traffic(const ExperimentConfig& c, const Topology& t, std::uint64_t seed) {
  const auto catalog = builtin_catalog(c.traffic.cpu_per_mbps);
  return generate_traffic(catalog, t.nodes_with(kRoleRU), traffic_params(c.traffic, t), seed);
}

// ---------------------------------------------------------------------------
// Evaluation

enum class PolicyKind : std::uint8_t { Joint, Fixed, Csp };

inline std::string_view policy_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::Joint: return "joint";
    case PolicyKind::Fixed: return "fixed";
    default: return "csp";
  }
}

inline std::optional<PolicyKind> parse_policy(std::string_view s) {
  if (s == "joint") return PolicyKind::Joint;
  if (s == "fixed") return PolicyKind::Fixed;
  if (s == "csp") return PolicyKind::Csp;
  return std::nullopt;
}

struct SliceMetrics {
  double latency_sum_ms = 0.0;
  std::int64_t links_sum = 0;
  int accepted = 0;
  int blocked = 0;

  int offered() const { return accepted + blocked; }
  double avg_latency_ms() const { return accepted ? latency_sum_ms / accepted : 0.0; }
  double avg_links_used() const { return accepted ? static_cast<double>(links_sum) / accepted : 0.0; }
  double acceptance_rate() const { return offered() ? static_cast<double>(accepted) / offered() : 1.0; }
};

struct HourMetrics {
  HourlyEnergyReport energy;
  SliceMetrics flows;
};

struct EvalReport {
  std::string policy;
  std::uint64_t traffic_hash = 0;
  std::array<HourMetrics, 24> hours{};
  std::array<SliceMetrics, kNumServices> slices{};
  int audit_failures = 0;
  std::vector<FlowRecord> accepted;  // in provisioning order

  double total_kwh() const {
    double s = 0.0;
    for (const auto& h : hours) s += h.energy.total_kwh;
    return s;
  }
  SliceMetrics totals() const {
    SliceMetrics t;
    for (const auto& s : slices) {
      t.latency_sum_ms += s.latency_sum_ms;
      t.links_sum += s.links_sum;
      t.accepted += s.accepted;
      t.blocked += s.blocked;
    }
    return t;
  }
};

namespace detail {

/// Replays one accepted flow on a shadow ledger: audit, then claim.
inline bool replay_audit(const FlowRecord& r, NetworkGraph& shadow) {
  const bool ok = audit_flow(r, shadow).ok;
  std::vector<BwClaim> bw;
  for (LinkId l : r.path_links) bw.push_back({l, r.flow.bandwidth_mbps});
  try {
    const std::vector<CpuClaim> cpu{{r.cu_node, r.flow.cpu_demand}};
    shadow.commit(cpu, bw, {});
  } catch (const LedgerError&) {
    return false;
  }
  return ok;
}

/// Runs one flow under a learned policy with argmax selection. Returns the
/// accepted record, if any.
inline std::optional<FlowRecord> run_greedy_episode(SfcEnv& env, const Policy& policy, const FlowRequest& f,
                                                    bool* audit_ok) {
  Observation obs;
  try {
    obs = env.reset(f);
  } catch (const ChainError&) {
    return std::nullopt;
  }
  while (env.active()) {
    const auto mask = env.action_mask();
    if (mask_empty(mask)) {
      env.step(0);
      break;
    }
    const auto out = policy.forward(obs);
    obs = env.step(argmax_action(out.logits, mask)).obs;
  }
  if (env.terminal() != TerminalKind::Success) return std::nullopt;
  if (audit_ok) *audit_ok = env.last_audit_ok();
  return env.last_accepted();
}

}  // namespace detail

struct EvalSetup {
  std::shared_ptr<const Topology> topology;
  RewardConfig reward;
  PowerParams power;
};

/// 24-hour online evaluation: per hour the ledger starts empty and flows are
/// provisioned in trace order. Every accepted flow is audited twice: by the
/// provisioning path before commit, and by an independent replay.
inline EvalReport evaluate(PolicyKind kind, const Policy* policy, const EvalSetup& s, const TrafficTrace& trace) {
  if (kind != PolicyKind::Csp && !policy) throw std::invalid_argument("evaluate: learned policy requires a checkpoint");
  EvalReport rep;
  rep.policy = std::string(policy_name(kind));
  rep.traffic_hash = trace_hash(trace);
  NetworkGraph graph(s.topology);
  std::optional<SfcEnv> env;
  std::optional<Policy> local;
  if (kind != PolicyKind::Csp) {
    env.emplace(NetworkGraph(s.topology), kind == PolicyKind::Joint ? ChainMode::Joint : ChainMode::Fixed, s.reward,
                s.power);
    const auto& d = policy->dims();
    if (d.num_nodes != s.topology->num_nodes() || d.actions != env->num_actions())
      throw CheckpointError(fmt::format("checkpoint has {} nodes / {} actions, scenario needs {} / {}", d.num_nodes,
                                        d.actions, s.topology->num_nodes(), env->num_actions()));
    local.emplace(*policy);
  }
  NetworkGraph shadow(s.topology);
  for (int h = 0; h < 24; ++h) {
    shadow.reset_ledger();
    if (env) env->hour_boundary(h);
    else graph.reset_ledger();
    auto& hm = rep.hours[h];
    for (const auto& f : trace.hour(h)) {
      std::optional<FlowRecord> rec;
      bool audit_ok = true;
      if (kind == PolicyKind::Csp) {
        try {
          auto out = csp_provision(f, graph);
          if (out.accepted) {
            rec = std::move(out.record);
            audit_ok = out.audit_ok;
          }
        } catch (const ChainError&) {
        }
      } else {
        rec = detail::run_greedy_episode(*env, *local, f, &audit_ok);
      }
      auto& sm = rep.slices[static_cast<int>(f.service)];
      if (!rec) {
        ++sm.blocked;
        ++hm.flows.blocked;
        continue;
      }
      if (!audit_ok || !detail::replay_audit(*rec, shadow)) ++rep.audit_failures;
      for (auto* m : {&sm, &hm.flows}) {
        ++m->accepted;
        m->latency_sum_ms += rec->consumed_ms;
        m->links_sum += static_cast<std::int64_t>(rec->path_links.size());
      }
      rep.accepted.push_back(std::move(*rec));
    }
    hm.energy = hourly_energy(env ? env->graph() : graph, s.power, h);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Report files

inline constexpr std::string_view kEnergyHeader = "hour,policy,node_kwh,net_idle_kwh,net_dyn_kwh,total_kwh";
inline constexpr std::string_view kLatencyHeader = "hour,policy,avg_latency_ms,accepted,blocked";
inline constexpr std::string_view kSliceHeader =
    "policy,service,avg_latency_ms,avg_links_used,accepted,blocked,offered,acceptance_rate";
inline constexpr std::string_view kComparisonHeader =
    "policy_a,policy_b,scope,key,energy_a_kwh,energy_b_kwh,energy_delta_kwh,energy_pct,latency_a_ms,latency_b_ms,"
    "latency_delta_ms,acceptance_a,acceptance_b,acceptance_delta";

inline std::string energy_csv(const EvalReport& r) {
  std::string s = std::string(kEnergyHeader) + "\n";
  for (const auto& h : r.hours)
    s += fmt::format("{},{},{:.9f},{:.9f},{:.9f},{:.9f}\n", h.energy.hour, r.policy, h.energy.node_kwh,
                     h.energy.net_idle_kwh, h.energy.net_dyn_kwh, h.energy.total_kwh);
  return s;
}

inline std::string latency_csv(const EvalReport& r) {
  std::string s = std::string(kLatencyHeader) + "\n";
  for (int h = 0; h < 24; ++h) {
    const auto& m = r.hours[h].flows;
    s += fmt::format("{},{},{:.6f},{},{}\n", h, r.policy, m.avg_latency_ms(), m.accepted, m.blocked);
  }
  return s;
}

inline std::string slice_csv(const EvalReport& r) {
  std::string s = std::string(kSliceHeader) + "\n";
  for (int i = 0; i < kNumServices; ++i) {
    const auto& m = r.slices[i];
    s += fmt::format("{},{},{:.6f},{:.6f},{},{},{},{:.6f}\n", r.policy, kServiceNames[i], m.avg_latency_ms(),
                     m.avg_links_used(), m.accepted, m.blocked, m.offered(), m.acceptance_rate());
  }
  return s;
}

inline std::string audit_csv(const EvalReport& r) {
  std::string s = std::string(kAuditHeader) + "\n";
  for (const auto& rec : r.accepted) s += audit_row(rec);
  return s;
}

inline Json report_json(const EvalReport& r) {
  Json j;
  j["policy"] = r.policy;
  j["traffic_hash"] = fmt::format("{:016x}", r.traffic_hash);
  j["audit_failures"] = r.audit_failures;
  j["total_kwh"] = r.total_kwh();
  auto slice = [](const SliceMetrics& m) {
    return Json{{"latency_sum_ms", m.latency_sum_ms}, {"links_sum", m.links_sum}, {"accepted", m.accepted},
                {"blocked", m.blocked}};
  };
  j["hours"] = Json::array();
  for (const auto& h : r.hours)
    j["hours"].push_back({{"hour", h.energy.hour},
                          {"node_kwh", h.energy.node_kwh},
                          {"net_idle_kwh", h.energy.net_idle_kwh},
                          {"net_dyn_kwh", h.energy.net_dyn_kwh},
                          {"total_kwh", h.energy.total_kwh},
                          {"flows", slice(h.flows)}});
  j["slices"] = Json::object();
  for (int i = 0; i < kNumServices; ++i) j["slices"][std::string(kServiceNames[i])] = slice(r.slices[i]);
  return j;
}

inline EvalReport report_from_json(const Json& j) {
  EvalReport r;
  try {
    r.policy = j.at("policy").get<std::string>();
    r.traffic_hash = std::stoull(j.at("traffic_hash").get<std::string>(), nullptr, 16);
    r.audit_failures = j.at("audit_failures").get<int>();
    auto slice = [](const Json& s) {
      SliceMetrics m;
      m.latency_sum_ms = s.at("latency_sum_ms").get<double>();
      m.links_sum = s.at("links_sum").get<std::int64_t>();
      m.accepted = s.at("accepted").get<int>();
      m.blocked = s.at("blocked").get<int>();
      return m;
    };
    const auto& hours = j.at("hours");
    if (hours.size() != 24) throw ConfigError("report: expected 24 hours");
    for (int h = 0; h < 24; ++h) {
      const auto& jh = hours[h];
      auto& e = r.hours[h].energy;
      e.hour = jh.at("hour").get<int>();
      e.node_kwh = jh.at("node_kwh").get<double>();
      e.net_idle_kwh = jh.at("net_idle_kwh").get<double>();
      e.net_dyn_kwh = jh.at("net_dyn_kwh").get<double>();
      e.total_kwh = jh.at("total_kwh").get<double>();
      r.hours[h].flows = slice(jh.at("flows"));
    }
    for (int i = 0; i < kNumServices; ++i) r.slices[i] = slice(j.at("slices").at(std::string(kServiceNames[i])));
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("report: ") + e.what());
  }
  return r;
}

inline void write_text(const std::filesystem::path& p, std::string_view text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "energy_hourly.csv", energy_csv(r));
  write_text(dir / "latency_hourly.csv", latency_csv(r));
  write_text(dir / "per_slice.csv", slice_csv(r));
  write_text(dir / "audit.csv", audit_csv(r));
  write_text(dir / "report.json", report_json(r).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Comparison

class TrafficMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double pct_change(double a, double b) { return b != 0.0 ? 100.0 * (a - b) / b : 0.0; }

/// Rows for A against B: 24 hours, the day total, then the six slices.
inline std::string compare_reports(const EvalReport& a, const EvalReport& b, bool header = true) {
  if (a.traffic_hash != b.traffic_hash)
    throw TrafficMismatch(fmt::format("compare: traffic hash {:016x} ({}) differs from {:016x} ({})", a.traffic_hash,
                                      a.policy, b.traffic_hash, b.policy));
  std::string s = header ? std::string(kComparisonHeader) + "\n" : std::string();
  auto row = [&](std::string_view scope, std::string key, std::optional<std::pair<double, double>> energy,
                 const SliceMetrics& ma, const SliceMetrics& mb) {
    std::string e = ",,,";
    if (energy) {
      const auto [ea, eb] = *energy;
      e = fmt::format("{:.9f},{:.9f},{:.9f},{:.6f}", ea, eb, ea - eb, pct_change(ea, eb));
    }
    s += fmt::format("{},{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", a.policy, b.policy, scope, key, e,
                     ma.avg_latency_ms(), mb.avg_latency_ms(), ma.avg_latency_ms() - mb.avg_latency_ms(),
                     ma.acceptance_rate(), mb.acceptance_rate(), ma.acceptance_rate() - mb.acceptance_rate());
  };
  for (int h = 0; h < 24; ++h)
    row("hour", std::to_string(h), std::pair{a.hours[h].energy.total_kwh, b.hours[h].energy.total_kwh},
        a.hours[h].flows, b.hours[h].flows);
  row("total", "all", std::pair{a.total_kwh(), b.total_kwh()}, a.totals(), b.totals());
  for (int i = 0; i < kNumServices; ++i)
    row("slice", std::string(kServiceNames[i]), std::nullopt, a.slices[i], b.slices[i]);
  return s;
}

}  // namespace oransfc
