#pragma once

#include <memory>
#include <string>
#include <vector>

#include "oransfc/runner.hpp"

namespace fixtures {

using namespace oransfc;

/// Hand-built scenario documents.
class Builder {
 public:
  Builder& node(int id, std::vector<std::string> roles, double cpu, double proc_ms = -1.0) {
    Json n{{"id", id}, {"roles", roles}, {"cpu_capacity", cpu}};
    if (proc_ms >= 0.0) {
      Json pd = Json::object();
      for (auto s : kServiceNames) pd[std::string(s)] = proc_ms;
      n["proc_delay"] = pd;
    }
    doc_["nodes"].push_back(n);
    return *this;
  }
  Builder& link(int a, int b, double bw, double delay) {
    doc_["links"].push_back({{"src", a}, {"dst", b}, {"bandwidth_mbps", bw}, {"delay_ms", delay}});
    return *this;
  }
  Builder& ru(int ru, int du) {
    doc_["placement"]["ru_to_du"][std::to_string(ru)] = du;
    return *this;
  }
  Builder& du(int du, int cu) {
    doc_["placement"]["du_to_cu"][std::to_string(du)] = cu;
    return *this;
  }
  Builder& upf(int upf) {
    for (auto s : kServiceNames) doc_["placement"]["upf_of_service"][std::string(s)] = upf;
    return *this;
  }
  Builder& set(int id, const char* key, double v) {
    for (auto& n : doc_["nodes"])
      if (n["id"] == id) n[key] = v;
    return *this;
  }
  Json json() const { return doc_; }
  std::shared_ptr<const Topology> build() const { return load_topology(doc_); }

 private:
  Json doc_{{"nodes", Json::array()}, {"links", Json::array()}};
};

/// Six nodes: RU 0, DU 1, CU 2 and 5, CU+UPF 3, router 4.
///
///   0 - 1 - 4 - 3
///       |   |   |
///       2 --+-- 5
inline std::shared_ptr<const Topology> six_node(double cpu = 10.0, double bw = 100.0) {
  return Builder()
      .node(0, {"RU"}, 0.0)
      .node(1, {"DU", "TRANSPORT"}, cpu)
      .node(2, {"CU", "TRANSPORT"}, cpu)
      .node(3, {"CU", "UPF", "TRANSPORT"}, cpu)
      .node(4, {"TRANSPORT"}, 0.0)
      .node(5, {"CU", "TRANSPORT"}, cpu)
      .link(0, 1, bw, 0.1)
      .link(1, 4, bw, 0.2)
      .link(1, 2, bw, 0.3)
      .link(4, 2, bw, 0.2)
      .link(4, 3, bw, 0.4)
      .link(2, 5, bw, 0.1)
      .link(3, 5, bw, 0.3)
      .ru(0, 1)
      .du(1, 2)
      .upf(3)
      .build();
}

inline FlowRequest flow(Service s, Direction d, NodeId ru, double bw, double budget, double cpu, int hour = 0,
                        std::int64_t id = 0) {
  FlowRequest f;
  f.flow_id = id;
  f.service = s;
  f.hour = hour;
  f.source_ru = ru;
  f.direction = d;
  f.bandwidth_mbps = bw;
  f.latency_budget_ms = budget;
  f.cpu_demand = cpu;
  return f;
}

/// A compact generated scenario for integration tests.
inline ExperimentConfig small_config(int n_transport = 12, int n_ru = 8) {
  Json j = {{"scenario",
             {{"n_ru", n_ru}, {"n_du", 2}, {"n_cu", 4}, {"n_upf", 2}, {"n_transport", n_transport}, {"area_km", 10.0}}},
            {"traffic", {{"load_scale", 0.1}}}};
  return parse_config(j);
}

}  // namespace fixtures
