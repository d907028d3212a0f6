#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace oransfc;

namespace {

// Directed link ids in six_node: physical link k gives 2k (as listed) and 2k+1 (reverse).
constexpr LinkId k0to1 = 0, k1to4 = 2, k1to2 = 4, k4to2 = 6, k2to4 = 7, k4to3 = 8, k3to4 = 9, k2to5 = 10;

FlowRequest uplink(double bw = 10.0, double budget = 50.0, double cpu = 1.0) {
  return fixtures::flow(Service::CG, Direction::Uplink, 0, bw, budget, cpu);
}

}  // namespace

TEST(BuildChain, UplinkAndDownlinkOrder) {
  const auto t = fixtures::six_node();
  const auto up = build_chain(uplink(), *t, ChainMode::Joint);
  EXPECT_EQ(up.entry, 0);
  ASSERT_EQ(up.segments.size(), 3u);
  EXPECT_EQ(up.segments[0].target, 1);
  EXPECT_TRUE(up.segments[1].dynamic_cu);
  EXPECT_EQ(up.segments[2].target, 3);

  const auto down = build_chain(fixtures::flow(Service::AR, Direction::Downlink, 0, 1, 20, 1), *t, ChainMode::Fixed);
  EXPECT_EQ(down.entry, 3);
  EXPECT_FALSE(down.segments[0].dynamic_cu);
  EXPECT_EQ(down.segments[0].target, 2);
  EXPECT_EQ(down.segments[1].target, 1);
  EXPECT_EQ(down.segments[2].target, 0);
}

TEST(BuildChain, MissingMappingsThrow) {
  const auto t = fixtures::six_node();
  auto f = uplink();
  f.source_ru = 4;
  EXPECT_THROW(build_chain(f, *t, ChainMode::Joint), ChainError);
  const auto no_cu = fixtures::Builder()
                         .node(0, {"RU"}, 0)
                         .node(1, {"DU", "CU", "UPF"}, 5)
                         .link(0, 1, 10, 1)
                         .ru(0, 1)
                         .upf(1)
                         .build();
  EXPECT_THROW(build_chain(uplink(), *no_cu, ChainMode::Fixed), ChainError);
}

TEST(Provisioning, HandWalkedUplinkJoint) {
  const auto t = fixtures::six_node();
  NetworkGraph g(t);
  auto s = start_provisioning(uplink(), build_chain(uplink(), *t, ChainMode::Joint), *t);
  EXPECT_EQ(s.current_node, 0);
  EXPECT_DOUBLE_EQ(s.consumed_ms, 0.0);

  ASSERT_TRUE(move_valid(s, k0to1, g));
  auto done = apply_move(s, k0to1, *t);
  ASSERT_EQ(done.size(), 1u);  // DU reached
  EXPECT_EQ(done[0].hops, 1);
  EXPECT_EQ(s.segment_idx, 1u);
  EXPECT_FALSE(embed_valid(s, 1, g));  // DU host is not a CU

  apply_move(s, k1to2, *t);
  ASSERT_TRUE(embed_valid(s, 2, g));
  done = apply_embed(s, *t);
  ASSERT_EQ(done.size(), 1u);
  EXPECT_EQ(s.embedded_cu, 2);
  EXPECT_EQ(done[0].hops, 1);

  EXPECT_FALSE(move_valid(s, k1to2, g));  // does not leave node 2
  apply_move(s, k2to4, *t);
  done = apply_move(s, k4to3, *t);
  ASSERT_EQ(done.size(), 1u);
  EXPECT_EQ(done[0].hops, 2);
  EXPECT_TRUE(s.complete());
  // 0.1 + 0.3 + 0.2 + 0.4 links, DU/CU/UPF processing 0.5 each.
  EXPECT_NEAR(s.consumed_ms, 2.5, 1e-12);
  EXPECT_EQ(s.vnf_nodes, (std::vector<NodeId>{0, 1, 2, 3}));
  EXPECT_EQ(s.path_links, (std::vector<LinkId>{k0to1, k1to2, k2to4, k4to3}));

  const auto rec = make_record(s);
  EXPECT_TRUE(audit_flow(rec, g).ok) << audit_flow(rec, g).reason;
  const auto receipt = commit_flow(s, g);
  EXPECT_DOUBLE_EQ(g.cpu_free(2), 9.0);
  EXPECT_DOUBLE_EQ(g.cpu_tracked(1), 1.0);
  EXPECT_DOUBLE_EQ(g.cpu_tracked(3), 1.0);
  EXPECT_DOUBLE_EQ(g.cpu_tracked(2), 0.0);
  for (LinkId l : s.path_links) EXPECT_DOUBLE_EQ(g.bw_free(l), 90.0);
  EXPECT_DOUBLE_EQ(g.bw_free(k1to4), 100.0);
  g.release(receipt);
  EXPECT_TRUE(g.ledger() == NetworkGraph(t).ledger());
  EXPECT_EQ(audit_row(rec), "0,2,0;4;7;8,2.5\n");
}

TEST(Provisioning, FixedModeSettlesOnArrival) {
  const auto t = fixtures::six_node();
  NetworkGraph g(t);
  auto s = start_provisioning(uplink(), build_chain(uplink(), *t, ChainMode::Fixed), *t);
  apply_move(s, k0to1, *t);
  const auto done = apply_move(s, k1to2, *t);
  ASSERT_EQ(done.size(), 1u);
  EXPECT_EQ(s.embedded_cu, 2);
  EXPECT_FALSE(embed_valid(s, 3, g));
  EXPECT_THROW(apply_embed(s, *t), std::logic_error);
}

TEST(Provisioning, DownlinkEmbedAtEntryAndTrackedUpf) {
  const auto t = fixtures::six_node();
  NetworkGraph g(t);
  const auto f = fixtures::flow(Service::VS, Direction::Downlink, 0, 5, 100, 2);
  auto s = start_provisioning(f, build_chain(f, *t, ChainMode::Joint), *t);
  EXPECT_DOUBLE_EQ(s.consumed_ms, 0.5);
  ASSERT_TRUE(embed_valid(s, 3, g));
  apply_embed(s, *t);
  apply_move(s, k3to4, *t);
  apply_move(s, k1to4 + 1, *t);  // 4 -> 1
  apply_move(s, k0to1 + 1, *t);  // 1 -> 0
  ASSERT_TRUE(s.complete());
  EXPECT_EQ(s.vnf_nodes, (std::vector<NodeId>{3, 3, 1, 0}));
  EXPECT_TRUE(audit_flow(make_record(s), g).ok);
  commit_flow(s, g);
  EXPECT_DOUBLE_EQ(g.cpu_free(3), 8.0);
  EXPECT_DOUBLE_EQ(g.cpu_tracked(3), 2.0);  // UPF at the entry
  EXPECT_DOUBLE_EQ(g.cpu_tracked(1), 2.0);
}

TEST(MoveValid, EachRuleRejects) {
  const auto t = fixtures::six_node(10.0, 20.0);
  NetworkGraph g(t);
  auto s = start_provisioning(uplink(15.0), build_chain(uplink(15.0), *t, ChainMode::Joint), *t);
  EXPECT_FALSE(move_valid(s, k1to2, g));  // not from the current node
  EXPECT_TRUE(move_valid(s, k0to1, g));

  const std::vector<BwClaim> eat{{k0to1, 6.0}};
  g.commit({}, eat, {});
  EXPECT_FALSE(move_valid(s, k0to1, g));  // 14 Mbps left

  NetworkGraph g2(t);
  auto tight = uplink(1.0, 0.05);
  auto s2 = start_provisioning(tight, build_chain(tight, *t, ChainMode::Joint), *t);
  EXPECT_FALSE(move_valid(s2, k0to1, g2));  // 0.1 ms exceeds the budget

  // Revisit within a segment.
  auto s3 = start_provisioning(uplink(), build_chain(uplink(), *t, ChainMode::Joint), *t);
  apply_move(s3, k0to1, *t);
  apply_move(s3, k1to4, *t);
  apply_move(s3, k4to2, *t);
  EXPECT_FALSE(move_valid(s3, 5, g2));  // 2 -> 1 already visited this segment
  EXPECT_TRUE(move_valid(s3, 5, g2, RuleOptions{true}));
  EXPECT_TRUE(move_valid(s3, k2to5, g2));
}

TEST(MoveValid, CountsPendingClaimsOfTheSameFlow) {
  const auto t = fixtures::six_node(10.0, 100.0);
  NetworkGraph g(t);
  auto s = start_provisioning(uplink(60.0), build_chain(uplink(60.0), *t, ChainMode::Joint), *t);
  s.path_links.push_back(k0to1);
  EXPECT_EQ(s.pending_bw_units(k0to1), bw_units(60.0));
  EXPECT_FALSE(move_valid(s, k0to1, g));
  s.path_links.clear();
  EXPECT_TRUE(move_valid(s, k0to1, g));
}

TEST(EmbedValid, CpuAndProcessingBudget) {
  const auto t = fixtures::six_node(1.0);
  NetworkGraph g(t);
  auto big = uplink(1.0, 50.0, 1.5);
  auto s = start_provisioning(big, build_chain(big, *t, ChainMode::Joint), *t);
  apply_move(s, k0to1, *t);
  apply_move(s, k1to2, *t);
  EXPECT_FALSE(embed_valid(s, 2, g));  // CPU
  auto ok = uplink(1.0, 0.95, 0.5);
  auto s2 = start_provisioning(ok, build_chain(ok, *t, ChainMode::Joint), *t);
  apply_move(s2, k0to1, *t);
  apply_move(s2, k1to2, *t);
  EXPECT_NEAR(s2.consumed_ms, 0.9, 1e-12);
  EXPECT_FALSE(embed_valid(s2, 2, g));  // 0.9 + 0.5 > 0.95
  EXPECT_FALSE(embed_valid(s2, 1, g));  // not the current node
}

TEST(Audit, DetectsTampering) {
  const auto t = fixtures::six_node();
  NetworkGraph g(t);
  auto s = start_provisioning(uplink(), build_chain(uplink(), *t, ChainMode::Joint), *t);
  for (LinkId l : {k0to1, k1to2}) apply_move(s, l, *t);
  apply_embed(s, *t);
  for (LinkId l : {k2to4, k4to3}) apply_move(s, l, *t);
  const auto good = make_record(s);
  ASSERT_TRUE(audit_flow(good, g).ok);

  auto r = good;
  r.path_links[2] = k2to5;
  EXPECT_NE(audit_flow(r, g).reason.find("walk"), std::string::npos);
  r = good;
  r.consumed_ms += 1.0;
  EXPECT_FALSE(audit_flow(r, g).ok);
  r = good;
  r.flow.latency_budget_ms = 2.0;
  EXPECT_NE(audit_flow(r, g).reason.find("latency"), std::string::npos);
  r = good;
  r.cu_node = 1;
  EXPECT_FALSE(audit_flow(r, g).ok);
  r = good;
  r.vnf_nodes = {0, 1, 5, 3};
  EXPECT_FALSE(audit_flow(r, g).ok);

  const std::vector<CpuClaim> cpu{{2, 9.5}};
  g.commit(cpu, {}, {});
  EXPECT_EQ(audit_flow(good, g).reason, "flow 0: CPU capacity at CU");
  NetworkGraph g2(t);
  const std::vector<BwClaim> bw{{k2to4, 95.0}};
  g2.commit({}, bw, {});
  EXPECT_EQ(audit_flow(good, g2).reason, "flow 0: bandwidth on link 7");
}

// Random masked walks on a generated scenario: every completed flow passes the
// audit and the ledger never leaves [0, capacity].
TEST(Provisioning, RandomValidWalksAlwaysAudit) {
  const auto cfg = fixtures::small_config();
  const auto t = load_topology(make_scenario(cfg, 4));
  const auto trace = make_traffic(cfg, *t, 4);
  NetworkGraph g(t);
  Rng rng(9);
  int accepted = 0;
  for (const auto& f : trace.flows) {
    if (f.hour > 2) break;
    const auto mode = f.flow_id % 2 ? ChainMode::Joint : ChainMode::Fixed;
    auto s = start_provisioning(f, build_chain(f, *t, mode), *t);
    for (int step = 0; step < 64 && !s.complete(); ++step) {
      std::vector<int> options;
      const auto nb = t->out_neighbors(s.current_node);
      for (std::size_t i = 0; i < nb.size(); ++i)
        if (move_valid(s, nb[i].link, g)) options.push_back(static_cast<int>(i));
      if (embed_valid(s, s.current_node, g)) options.push_back(-1);
      if (options.empty()) break;
      const int pick = options[rng.uniform_int(0, static_cast<std::int64_t>(options.size()) - 1)];
      if (pick < 0)
        apply_embed(s, *t);
      else
        apply_move(s, nb[pick].link, *t);
    }
    if (!s.complete()) continue;
    const auto rec = make_record(s);
    const auto audit = audit_flow(rec, g);
    ASSERT_TRUE(audit.ok) << audit.reason;
    EXPECT_LE(rec.consumed_ms, f.latency_budget_ms);
    commit_flow(s, g);
    ++accepted;
    for (NodeId v = 0; v < t->num_nodes(); ++v) ASSERT_GE(g.ledger().cpu_free[v], 0);
    for (LinkId l = 0; l < t->num_links(); ++l) ASSERT_GE(g.ledger().bw_free[l], 0);
  }
  EXPECT_GT(accepted, 0);
}
