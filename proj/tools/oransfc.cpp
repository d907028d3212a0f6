// Command-line front end: scenario/traffic generation, training, evaluation
// and report comparison.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "oransfc/runner.hpp"

namespace fs = std::filesystem;
using namespace oransfc;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 1;
  std::string out = ".";
  std::string scenario;  // optional scenario.json
  std::string traffic;   // optional trace csv
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)");
  cmd->add_option("--seed", c.seed, "random seed")->capture_default_str();
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
}

ExperimentConfig config_of(const Common& c) {
  return c.config.empty() ? parse_config(Json::object()) : load_config(c.config);
}

std::shared_ptr<const Topology> scenario_of(const Common& c, const ExperimentConfig& cfg) {
  if (!c.scenario.empty()) return load_topology(Json::parse(read_text(c.scenario)));
  return load_topology(make_scenario(cfg, c.seed));
}

TrafficTrace traffic_of(const Common& c, const ExperimentConfig& cfg, const Topology& t, std::uint64_t stream) {
  if (!c.traffic.empty()) return trace_from_csv(read_text(c.traffic));
  return make_traffic(cfg, t, mix_seed(c.seed, stream));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SFC provisioning simulator: scenarios, training, evaluation"};
  app.require_subcommand(1);

  Common gs;
  auto* gen_scenario = app.add_subcommand("gen-scenario", "generate a topology with placement");
  add_common(gen_scenario, gs);

  Common gt;
  std::string split = "eval";
  auto* gen_traffic = app.add_subcommand("gen-traffic", "generate a 24-hour traffic trace");
  add_common(gen_traffic, gt);
  gen_traffic->add_option("--scenario", gt.scenario, "scenario.json (generated from config when absent)");
  gen_traffic->add_option("--split", split, "train or eval trace stream")->check(CLI::IsMember({"train", "eval"}));

  Common tr;
  std::string mode = "joint";
  auto* train_cmd = app.add_subcommand("train", "train a policy with masked PPO");
  add_common(train_cmd, tr);
  train_cmd->add_option("--mode", mode, "joint or fixed")->check(CLI::IsMember({"joint", "fixed"}));
  train_cmd->add_option("--scenario", tr.scenario, "scenario.json");
  train_cmd->add_option("--traffic", tr.traffic, "training trace csv");
  std::int64_t steps_override = 0;
  train_cmd->add_option("--steps", steps_override, "override train.total_steps");

  Common ev;
  std::string policy = "csp";
  std::string checkpoint;
  auto* eval_cmd = app.add_subcommand("eval", "24-hour evaluation of one policy");
  add_common(eval_cmd, ev);
  eval_cmd->add_option("--policy", policy, "joint, fixed or csp")->check(CLI::IsMember({"joint", "fixed", "csp"}));
  eval_cmd->add_option("--scenario", ev.scenario, "scenario.json");
  eval_cmd->add_option("--traffic", ev.traffic, "evaluation trace csv");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint for learned policies");

  Common cmp;
  std::vector<std::string> reports;
  auto* compare_cmd = app.add_subcommand("compare", "compare evaluation reports against the first one");
  add_common(compare_cmd, cmp);
  compare_cmd->add_option("reports", reports, "report.json files or their directories")->required()->expected(2, -1);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_scenario->parsed()) {
      const auto cfg = config_of(gs);
      fs::create_directories(gs.out);
      const Json doc = make_scenario(cfg, gs.seed);
      load_topology(doc);  // validate before writing
      write_text(fs::path(gs.out) / "scenario.json", doc.dump(2) + "\n");
    } else if (gen_traffic->parsed()) {
      const auto cfg = config_of(gt);
      const auto topo = scenario_of(gt, cfg);
      const auto trace = traffic_of(gt, cfg, *topo, split == "train" ? kTrainTrafficStream : kEvalTrafficStream);
      fs::create_directories(gt.out);
      write_text(fs::path(gt.out) / "traffic.csv", trace_to_csv(trace));
      fmt::print("{} flows, hash {:016x}\n", trace.flows.size(), trace_hash(trace));
    } else if (train_cmd->parsed()) {
      auto cfg = config_of(tr);
      if (steps_override > 0) cfg.train.total_steps = steps_override;
      cfg.train.seed = tr.seed;
      TrainSetup setup;
      setup.topology = scenario_of(tr, cfg);
      setup.trace = std::make_shared<TrafficTrace>(traffic_of(tr, cfg, *setup.topology, kTrainTrafficStream));
      setup.mode = mode == "joint" ? ChainMode::Joint : ChainMode::Fixed;
      setup.train = cfg.train;
      setup.reward = cfg.reward;
      setup.power = cfg.power;
      setup.config_hash = config_hash(cfg);
      fs::create_directories(tr.out);
      std::ofstream curve(fs::path(tr.out) / "learning_curve.csv");
      const auto res = train(setup, tr.out, &curve);
      const auto& last = res.curve.back();
      fmt::print("trained {} steps: mean_reward {:.3f}, success_rate {:.3f}\ncheckpoint {}\n", last.steps,
                 last.mean_reward, last.success_rate, res.checkpoint);
    } else if (eval_cmd->parsed()) {
      const auto cfg = config_of(ev);
      EvalSetup setup{scenario_of(ev, cfg), cfg.reward, cfg.power};
      const auto trace = traffic_of(ev, cfg, *setup.topology, kEvalTrafficStream);
      const auto kind = *parse_policy(policy);
      std::optional<Policy> learned;
      if (kind != PolicyKind::Csp) {
        if (checkpoint.empty()) throw std::invalid_argument("eval: --checkpoint is required for learned policies");
        SfcEnv env(NetworkGraph(setup.topology), kind == PolicyKind::Joint ? ChainMode::Joint : ChainMode::Fixed,
                   cfg.reward, cfg.power);
        learned.emplace(make_policy(env, cfg.train.hidden, cfg.train.embed, 0));
        std::ifstream in(checkpoint);
        if (!in) throw std::runtime_error("cannot open checkpoint " + checkpoint);
        load_checkpoint(in, *learned);
      }
      const auto rep = evaluate(kind, learned ? &*learned : nullptr, setup, trace);
      write_report(rep, ev.out);
      const auto tot = rep.totals();
      fmt::print("{}: {:.3f} kWh, accepted {}/{}, audit failures {}\n", rep.policy, rep.total_kwh(), tot.accepted,
                 tot.offered(), rep.audit_failures);
      if (rep.audit_failures > 0) return 2;
    } else if (compare_cmd->parsed()) {
      std::vector<EvalReport> loaded;
      for (const auto& r : reports) {
        fs::path p(r);
        if (fs::is_directory(p)) p /= "report.json";
        loaded.push_back(report_from_json(Json::parse(read_text(p))));
      }
      std::string out;
      for (std::size_t i = 1; i < loaded.size(); ++i) out += compare_reports(loaded[0], loaded[i], i == 1);
      fs::create_directories(cmp.out);
      write_text(fs::path(cmp.out) / "comparison.csv", out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
