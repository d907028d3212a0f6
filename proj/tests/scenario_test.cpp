#include <map>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace oransfc;

namespace {

const ServiceSpec& spec_of(const std::vector<ServiceSpec>& c, Service s) {
  for (const auto& x : c)
    if (x.id == s) return x;
  throw std::logic_error("missing service");
}

int count_role(const Topology& t, Role r) { return static_cast<int>(t.nodes_with(r).size()); }

bool strongly_connected(const Topology& t) {
  for (NodeId v = 0; v < t.num_nodes(); ++v)
    if (t.hop_distance(0, v) == kUnreachable || t.hop_distance(v, 0) == kUnreachable) return false;
  return true;
}

}  // namespace

TEST(Catalog, TableValues) {
  const auto c = builtin_catalog();
  ASSERT_EQ(c.size(), 6u);
  const auto& voip = spec_of(c, Service::VoIP);
  EXPECT_DOUBLE_EQ(voip.bandwidth_lo_mbps, 0.064);
  EXPECT_DOUBLE_EQ(voip.latency_budget_ms, 100.0);
  EXPECT_EQ(voip.requests_lo, 100);
  EXPECT_EQ(voip.requests_hi, 200);
  EXPECT_TRUE(voip.uplink_chain && voip.downlink_chain);

  const auto& ar = spec_of(c, Service::AR);
  EXPECT_DOUBLE_EQ(ar.bandwidth_lo_mbps, 100.0);
  EXPECT_DOUBLE_EQ(ar.latency_budget_ms, 20.0);
  EXPECT_EQ(ar.requests_lo, 1);
  EXPECT_EQ(ar.requests_hi, 4);
  EXPECT_TRUE(ar.downlink_chain && !ar.uplink_chain);

  const auto& miot = spec_of(c, Service::MIoT);
  EXPECT_DOUBLE_EQ(miot.bandwidth_lo_mbps, 1.0);
  EXPECT_DOUBLE_EQ(miot.bandwidth_hi_mbps, 50.0);
  EXPECT_DOUBLE_EQ(miot.latency_budget_ms, 10.0);
  EXPECT_TRUE(miot.uplink_chain && !miot.downlink_chain);
  EXPECT_EQ(miot.slice, SliceClass::mMTC);

  const auto& cg = spec_of(c, Service::CG);
  EXPECT_DOUBLE_EQ(cg.bandwidth_lo_mbps, 4.0);
  EXPECT_DOUBLE_EQ(cg.latency_budget_ms, 80.0);
  EXPECT_EQ(cg.requests_lo, 40);
  EXPECT_EQ(cg.requests_hi, 55);
  const auto& vs = spec_of(c, Service::VS);
  EXPECT_DOUBLE_EQ(vs.latency_budget_ms, 100.0);
  EXPECT_EQ(vs.requests_lo, 50);
  EXPECT_EQ(vs.requests_hi, 100);
  const auto& i40 = spec_of(c, Service::I40);
  EXPECT_DOUBLE_EQ(i40.bandwidth_lo_mbps, 70.0);
  EXPECT_DOUBLE_EQ(i40.latency_budget_ms, 15.0);
  EXPECT_EQ(i40.slice, SliceClass::uRLLC);
}

TEST(GenerateTopology, FullScaleRoleCounts) {
  TopologyParams p;
  p.n_ru = 300;
  p.n_du = 10;
  p.n_cu = 6;
  p.n_upf = 7;
  p.n_transport = 60;
  p.area_km = 30;
  ExperimentConfig cfg;
  cfg.scenario.topology = p;
  const auto t = load_topology(make_scenario(cfg, 2));
  EXPECT_EQ(count_role(*t, kRoleRU), 300);
  EXPECT_EQ(count_role(*t, kRoleDU), 10);
  EXPECT_EQ(count_role(*t, kRoleCU), 6);
  EXPECT_EQ(count_role(*t, kRoleUPF), 7);
  EXPECT_LE(t->max_out_degree(), 8);
  EXPECT_TRUE(strongly_connected(*t));
  for (NodeId v = 0; v < t->num_nodes(); ++v) EXPECT_LE(t->out_neighbors(v).size(), 8u);
}

TEST(GenerateTopology, DeterministicAndSeedSensitive) {
  TopologyParams p;
  EXPECT_EQ(generate_topology(p, 5).dump(), generate_topology(p, 5).dump());
  EXPECT_NE(generate_topology(p, 5).dump(), generate_topology(p, 6).dump());
}

TEST(GenerateTopology, SingleTransportIsAStar) {
  TopologyParams p;
  p.n_transport = 1;
  p.n_ru = 5;
  const auto t = load_topology(generate_topology(p, 1));
  EXPECT_EQ(t->num_nodes(), 6);
  EXPECT_TRUE(strongly_connected(*t));
  for (NodeId r : t->nodes_with(kRoleRU)) EXPECT_EQ(t->out_neighbors(r).size(), 1u);
}

TEST(GenerateTopology, ConnectedAndBoundedOverSeeds) {
  TopologyParams p;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto t = load_topology(generate_topology(p, seed));
    EXPECT_TRUE(strongly_connected(*t)) << seed;
    EXPECT_LE(t->max_out_degree(), 8) << seed;
  }
}

TEST(GenerateTopology, InfeasibleParametersThrow) {
  TopologyParams p;
  p.n_transport = 2;
  p.n_ru = 40;
  p.max_degree = 3;  // not enough ports for the RUs
  EXPECT_THROW(generate_topology(p, 1), ScenarioError);
}

TEST(Placement, SingleCandidateTakesAllRus) {
  using fixtures::Builder;
  const auto t = Builder()
                     .node(0, {"RU"}, 0)
                     .node(1, {"RU"}, 0)
                     .node(2, {"TRANSPORT"}, 10)
                     .node(3, {"TRANSPORT"}, 0)
                     .link(0, 3, 1, 1)
                     .link(1, 3, 1, 1)
                     .link(2, 3, 1, 1)
                     .build();
  TrafficTrace empty;
  const auto pr = place_functions(*t, {1, 1, 1}, empty);
  EXPECT_EQ(pr.du_sites, std::vector<NodeId>{2});
  EXPECT_EQ(pr.placement.ru_to_du.at(0), 2);
  EXPECT_EQ(pr.placement.ru_to_du.at(1), 2);
  EXPECT_EQ(pr.placement.du_to_cu.at(2), 2);
}

// Line RU-x-y-z with candidates x and z: x covers the RU in one hop, z in three.
TEST(Placement, LinePicksTheCenter) {
  using fixtures::Builder;
  const auto t = Builder()
                     .node(0, {"RU"}, 0)
                     .node(1, {"TRANSPORT"}, 10)
                     .node(2, {"TRANSPORT"}, 0)
                     .node(3, {"TRANSPORT"}, 10)
                     .link(0, 1, 1, 1)
                     .link(1, 2, 1, 1)
                     .link(2, 3, 1, 1)
                     .build();
  const std::vector<NodeId> cands{1, 3};
  const std::vector<std::pair<NodeId, double>> demand{{0, 1.0}};
  // Enumerate both single-site placements.
  int best = -1, best_d = 1 << 30;
  for (NodeId c : cands)
    if (t->hop_distance(0, c) < best_d) {
      best_d = t->hop_distance(0, c);
      best = c;
    }
  EXPECT_EQ(greedy_p_center(*t, cands, demand, 1), std::vector<NodeId>{best});
  EXPECT_EQ(best, 1);
}

TEST(Placement, TiesFallToLowestId) {
  using fixtures::Builder;
  const auto t = Builder()
                     .node(0, {"RU"}, 0)
                     .node(1, {"TRANSPORT"}, 10)
                     .node(2, {"TRANSPORT"}, 10)
                     .link(0, 1, 1, 1)
                     .link(0, 2, 1, 1)
                     .build();
  const std::vector<NodeId> cands{2, 1};
  const std::vector<std::pair<NodeId, double>> demand{{0, 1.0}};
  EXPECT_EQ(greedy_p_center(*t, cands, demand, 1), std::vector<NodeId>{1});
}

TEST(Placement, TotalAndDeterministic) {
  const auto cfg = fixtures::small_config();
  const Json a = make_scenario(cfg, 8);
  EXPECT_EQ(a.dump(), make_scenario(cfg, 8).dump());
  const auto t = load_topology(a);
  const auto& pl = t->placement();
  for (NodeId r : t->nodes_with(kRoleRU)) {
    ASSERT_TRUE(pl.ru_to_du.count(r));
    EXPECT_TRUE(t->node(pl.ru_to_du.at(r)).has(kRoleDU));
  }
  for (NodeId d : t->nodes_with(kRoleDU)) {
    ASSERT_TRUE(pl.du_to_cu.count(d));
    EXPECT_TRUE(t->node(pl.du_to_cu.at(d)).has(kRoleCU));
  }
  for (int s = 0; s < kNumServices; ++s) EXPECT_TRUE(t->node(pl.upf_of_service[s]).has(kRoleUPF));
}

TEST(Placement, InsufficientCandidatesThrow) {
  const auto t = fixtures::Builder().node(0, {"RU"}, 0).node(1, {"TRANSPORT"}, 10).link(0, 1, 1, 1).build();
  TrafficTrace empty;
  EXPECT_THROW(place_functions(*t, {2, 1, 1}, empty), ScenarioError);
}

TEST(Traffic, VoipHourlyCountAtFullLoad) {
  const auto catalog = builtin_catalog();
  TrafficParams p;
  p.profile.fill(1.0);
  const std::vector<NodeId> rus{0, 1, 2};
  const auto t = generate_traffic(catalog, rus, p, 3);
  for (int h = 0; h < 24; ++h) {
    int voip = 0;
    for (const auto& f : t.hour(h)) voip += f.service == Service::VoIP;
    EXPECT_GE(voip, 100);
    EXPECT_LE(voip, 200);
  }
}

TEST(Traffic, TinyProfileNeverNegative) {
  const auto catalog = builtin_catalog();
  TrafficParams p;
  p.profile.fill(1e-3);
  const std::vector<NodeId> rus{0};
  const auto t = generate_traffic(catalog, rus, p, 3);
  for (int h = 0; h < 24; ++h) EXPECT_LE(t.hour(h).size(), 1u);
}

TEST(Traffic, FlowsRespectTheirSpec) {
  const auto catalog = builtin_catalog();
  const std::vector<NodeId> rus{4, 5, 6, 7};
  const auto t = generate_traffic(catalog, rus, {}, 11);
  std::int64_t prev_id = -1;
  int prev_hour = 0;
  for (const auto& f : t.flows) {
    const auto& s = spec_of(catalog, f.service);
    EXPECT_GT(f.flow_id, prev_id);
    EXPECT_GE(f.hour, prev_hour);
    prev_id = f.flow_id;
    prev_hour = f.hour;
    EXPECT_GE(f.bandwidth_mbps, s.bandwidth_lo_mbps);
    EXPECT_LE(f.bandwidth_mbps, s.bandwidth_hi_mbps);
    EXPECT_EQ(f.latency_budget_ms, s.latency_budget_ms);
    EXPECT_NEAR(f.cpu_demand, f.bandwidth_mbps * s.cpu_per_mbps, 1e-6);
    EXPECT_TRUE(f.direction == Direction::Uplink ? s.uplink_chain : s.downlink_chain);
    EXPECT_NE(std::find(rus.begin(), rus.end(), f.source_ru), rus.end());
  }
}

TEST(Traffic, SeedsGiveSameMarginals) {
  const auto catalog = builtin_catalog();
  TrafficParams p;
  p.profile.fill(1.0);
  const std::vector<NodeId> rus{0, 1};
  EXPECT_EQ(trace_to_csv(generate_traffic(catalog, rus, p, 1)), trace_to_csv(generate_traffic(catalog, rus, p, 1)));
  EXPECT_NE(trace_to_csv(generate_traffic(catalog, rus, p, 1)), trace_to_csv(generate_traffic(catalog, rus, p, 2)));
  // Mean hourly count per service over 100 seeds sits near the range midpoint.
  std::map<Service, double> total;
  for (std::uint64_t seed = 0; seed < 100; ++seed)
    for (const auto& f : generate_traffic(catalog, rus, p, seed).flows) total[f.service] += 1.0;
  for (const auto& s : catalog) {
    const double mean = total[s.id] / (100.0 * 24.0);
    const double mid = 0.5 * (s.requests_lo + s.requests_hi);
    EXPECT_NEAR(mean, mid, 0.05 * mid) << service_name(s.id);
  }
}

TEST(Traffic, CsvRoundTrip) {
  const auto catalog = builtin_catalog();
  const std::vector<NodeId> rus{0, 1};
  const auto t = generate_traffic(catalog, rus, {}, 4);
  const auto csv = trace_to_csv(t);
  EXPECT_EQ(csv.substr(0, kTraceHeader.size()), kTraceHeader);
  EXPECT_EQ(trace_to_csv(trace_from_csv(csv)), csv);
  EXPECT_EQ(trace_hash(trace_from_csv(csv)), trace_hash(t));
}

TEST(Traffic, HotspotSkewsSources) {
  const auto cfg = fixtures::small_config(12, 20);
  const auto topo = load_topology(make_scenario(cfg, 2));
  const auto rus = topo->nodes_with(kRoleRU);
  const auto& pos = *topo->node(rus[0]).pos_km;
  TrafficParams p;
  p.load_scale = 3.0;
  p.ru_weights = hotspot_ru_weights(*topo, pos, 1.0, 0.0);
  const auto t = generate_traffic(builtin_catalog(), rus, p, 1);
  std::map<NodeId, int> per_ru;
  for (const auto& f : t.flows) ++per_ru[f.source_ru];
  int most = 0;
  for (auto [r, n] : per_ru) most = std::max(most, n);
  EXPECT_EQ(per_ru[rus[0]], most);
}

TEST(DiurnalProfile, Shape) {
  const auto p = default_diurnal_profile();
  EXPECT_DOUBLE_EQ(p[4], 0.35);
  EXPECT_DOUBLE_EQ(p[20], 1.0);
  for (double x : p) {
    EXPECT_GT(x, 0.0);
    EXPECT_LE(x, 1.0);
  }
}
