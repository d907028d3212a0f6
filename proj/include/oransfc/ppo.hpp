#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "oransfc/env.hpp"
#include "oransfc/nn.hpp"
#include "oransfc/rng.hpp"
#include "oransfc/scenario.hpp"

namespace oransfc {

struct TrainConfig {
  std::int64_t total_steps = 200'000;
  int rollout_size = 4096;
  int minibatch = 128;
  int epochs = 10;
  double lr = 3e-4;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;
  double adam_eps = 1e-5;
  double reward_scale = 0.01;  // applied to rewards before GAE; keeps the value loss near unit scale
  int hidden = 64;
  int embed = 8;
  int workers = 1;
  int trailing_window = 100;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  std::uint64_t seed = 1;

  void validate() const {
    if (total_steps <= 0) throw std::invalid_argument("train: total_steps must be > 0");
    if (rollout_size <= 0 || minibatch <= 0 || rollout_size % minibatch != 0)
      throw std::invalid_argument("train: rollout_size must be a positive multiple of minibatch");
    if (epochs <= 0) throw std::invalid_argument("train: epochs must be > 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("train: gamma must lie in (0, 1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw std::invalid_argument("train: gae_lambda must lie in [0, 1]");
    if (!(clip > 0.0)) throw std::invalid_argument("train: clip must be > 0");
    if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
    if (!(reward_scale > 0.0)) throw std::invalid_argument("train: reward_scale must be > 0");
    if (workers <= 0 || rollout_size % workers != 0)
      throw std::invalid_argument("train: workers must divide rollout_size");
    if (hidden <= 0 || embed <= 0) throw std::invalid_argument("train: hidden and embed must be > 0");
    if (trailing_window <= 0) throw std::invalid_argument("train: trailing_window must be > 0");
  }
};

using Policy = GcnPolicy<float>;

inline PolicyDims policy_dims(const SfcEnv& env, int hidden, int embed) {
  PolicyDims d;
  d.num_nodes = env.graph().topology().num_nodes();
  d.actions = env.num_actions();
  d.hidden = hidden;
  d.embed = embed;
  return d;
}

template <typename T = float>
GcnPolicy<T> make_policy(const SfcEnv& env, int hidden, int embed, std::uint64_t seed) {
  GcnPolicy<T> p(policy_dims(env, hidden, embed), normalized_adjacency<T>(env.graph().topology()));
  p.init(seed);
  return p;
}

// ---------------------------------------------------------------------------
// Rollout storage

struct Transition {
  Observation obs;
  ActionMask mask;
  int action = 0;
  double log_prob = 0.0;
  double reward = 0.0;
  double value = 0.0;
  bool done = false;
};

/// A contiguous run of transitions from one worker; `bootstrap` is V(s_next)
/// when the run stops mid-episode.
struct RolloutSegment {
  std::size_t begin = 0;
  std::size_t end = 0;
  double bootstrap = 0.0;
};

struct EpisodeStat {
  double reward = 0.0;
  bool success = false;
};

struct RolloutBuffer {
  std::vector<Transition> steps;
  std::vector<RolloutSegment> segments;
  std::vector<EpisodeStat> episodes;  // finished during collection, in worker order
  std::size_t size() const { return steps.size(); }
};

struct Advantages {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Generalized advantage estimation over one contiguous sequence.
inline Advantages gae(std::span<const double> rewards, std::span<const double> values, std::span<const std::uint8_t> dones,
                      double gamma, double lambda, double last_value = 0.0) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw std::invalid_argument("gae: length mismatch");
  Advantages out{std::vector<double>(n), std::vector<double>(n)};
  double next_adv = 0.0;
  double next_value = last_value;
  for (std::size_t i = n; i-- > 0;) {
    const double nonterminal = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * next_value * nonterminal - values[i];
    next_adv = delta + gamma * lambda * nonterminal * next_adv;
    out.advantages[i] = next_adv;
    out.returns[i] = next_adv + values[i];
    next_value = values[i];
  }
  return out;
}

inline Advantages buffer_advantages(const RolloutBuffer& buf, double gamma, double lambda, double reward_scale = 1.0) {
  Advantages all{std::vector<double>(buf.size()), std::vector<double>(buf.size())};
  for (const auto& seg : buf.segments) {
    std::vector<double> r, v;
    std::vector<std::uint8_t> d;
    for (std::size_t i = seg.begin; i < seg.end; ++i) {
      r.push_back(buf.steps[i].reward * reward_scale);
      v.push_back(buf.steps[i].value);
      d.push_back(buf.steps[i].done ? 1 : 0);
    }
    auto a = gae(r, v, d, gamma, lambda, seg.bootstrap);
    std::copy(a.advantages.begin(), a.advantages.end(), all.advantages.begin() + static_cast<std::ptrdiff_t>(seg.begin));
    std::copy(a.returns.begin(), a.returns.end(), all.returns.begin() + static_cast<std::ptrdiff_t>(seg.begin));
  }
  return all;
}

/// Shifts to mean 0 and scales to unit (population) standard deviation.
inline void normalize_advantages(std::vector<double>& a) {
  if (a.empty()) return;
  double mean = 0.0;
  for (double x : a) mean += x;
  mean /= static_cast<double>(a.size());
  double var = 0.0;
  for (double x : a) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(a.size()));
  for (double& x : a) x = sd > 1e-12 ? (x - mean) / sd : x - mean;
}

// ---------------------------------------------------------------------------
// Loss

struct PpoLossWeights {
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
};

struct SampleStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double ratio = 1.0;
  double approx_kl = 0.0;
  bool clipped = false;
};

/// Composite loss of one sample scaled by 1/batch, with its gradient with
/// respect to the logits and the value.
inline double ppo_sample_loss(const ActionMask& mask, int action, double old_log_prob, double advantage, double ret,
                              std::span<const double> logits, double value, const PpoLossWeights& w, double inv_batch,
                              std::span<double> dlogits, double& dvalue, SampleStats* st = nullptr) {
  const auto lp = masked_log_probs(logits, mask);
  std::vector<double> p(lp.size(), 0.0);
  for (std::size_t j = 0; j < lp.size(); ++j)
    if (mask[j]) p[j] = std::exp(lp[j]);
  const double log_ratio = lp[static_cast<std::size_t>(action)] - old_log_prob;
  const double ratio = std::exp(log_ratio);
  const double clamped = std::clamp(ratio, 1.0 - w.clip, 1.0 + w.clip);
  const double surr = std::min(ratio * advantage, clamped * advantage);
  const bool clip_active = (advantage > 0.0 && ratio > 1.0 + w.clip) || (advantage < 0.0 && ratio < 1.0 - w.clip);
  const double entropy = masked_entropy(p, lp);
  const double verr = value - ret;

  const double loss = (-surr + w.value_coef * verr * verr - w.entropy_coef * entropy) * inv_batch;

  const double g_logp = clip_active ? 0.0 : -ratio * advantage * inv_batch;
  for (std::size_t j = 0; j < lp.size(); ++j) {
    if (!mask[j]) {
      dlogits[j] = 0.0;
      continue;
    }
    const double onehot = static_cast<int>(j) == action ? 1.0 : 0.0;
    dlogits[j] = g_logp * (onehot - p[j]) + w.entropy_coef * p[j] * (lp[j] + entropy) * inv_batch;
  }
  dvalue = 2.0 * w.value_coef * verr * inv_batch;

  if (st) {
    st->policy_loss = -surr;
    st->value_loss = verr * verr;
    st->entropy = entropy;
    st->ratio = ratio;
    st->approx_kl = (ratio - 1.0) - log_ratio;
    st->clipped = std::abs(ratio - 1.0) > w.clip;
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
class Adam {
 public:
  Adam(std::size_t n, double lr, double eps = 1e-8, double beta1 = 0.9, double beta2 = 0.999)
      : lr_(lr), eps_(eps), b1_(beta1), b2_(beta2), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<T> params, std::span<const T> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * g * g;
      const double mh = m_[i] / c1;
      const double vh = v_[i] / c2;
      params[i] = static_cast<T>(static_cast<double>(params[i]) - lr_ * mh / (std::sqrt(vh) + eps_));
    }
  }
  std::int64_t steps() const { return t_; }

 private:
  double lr_, eps_, b1_, b2_;
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
};

/// Scales the gradient so its global L2 norm is at most max_norm; returns the
/// norm before scaling.
template <typename T>
double clip_grad_norm(std::span<T> grad, double max_norm) {
  double sq = 0.0;
  for (T g : grad) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-6);
    for (T& g : grad) g = static_cast<T>(static_cast<double>(g) * s);
  }
  return norm;
}

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double approx_kl = 0.0;
  double grad_norm = 0.0;
  int minibatches = 0;
};

/// Epochs of shuffled minibatch steps on the clipped surrogate.
template <typename T>
UpdateStats ppo_update(GcnPolicy<T>& policy, Adam<T>& opt, const RolloutBuffer& buf, const TrainConfig& cfg, Rng& rng) {
  if (buf.size() == 0) throw std::invalid_argument("ppo_update: empty buffer");
  auto adv = buffer_advantages(buf, cfg.gamma, cfg.gae_lambda, cfg.reward_scale);
  normalize_advantages(adv.advantages);
  const PpoLossWeights w{cfg.clip, cfg.value_coef, cfg.entropy_coef};

  std::vector<std::size_t> order(buf.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<T> grad(policy.params().size());
  const std::size_t mb = std::min<std::size_t>(static_cast<std::size_t>(cfg.minibatch), buf.size());
  UpdateStats st;
  double n_samples = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += mb) {
      const std::size_t end = std::min(order.size(), start + mb);
      std::vector<const Observation*> batch;
      std::vector<std::size_t> idx;
      for (std::size_t k = start; k < end; ++k) {
        idx.push_back(order[k]);
        batch.push_back(&buf.steps[order[k]].obs);
      }
      const double inv_b = 1.0 / static_cast<double>(idx.size());
      std::fill(grad.begin(), grad.end(), T(0));
      const double loss = policy.accumulate_gradients(
          batch,
          [&](std::size_t i, std::span<const double> logits, double value, std::span<double> dl, double& dv) {
            const auto& tr = buf.steps[idx[i]];
            SampleStats s;
            const double l = ppo_sample_loss(tr.mask, tr.action, tr.log_prob, adv.advantages[idx[i]],
                                              adv.returns[idx[i]], logits, value, w, inv_b, dl, dv, &s);
            st.policy_loss += s.policy_loss;
            st.value_loss += s.value_loss;
            st.entropy += s.entropy;
            st.clip_frac += s.clipped ? 1.0 : 0.0;
            st.approx_kl += s.approx_kl;
            n_samples += 1.0;
            return l;
          },
          std::span<T>(grad));
      if (!std::isfinite(loss))
        throw std::runtime_error(fmt::format("ppo_update: non-finite loss in minibatch {}", st.minibatches));
      st.grad_norm += clip_grad_norm(std::span<T>(grad), cfg.max_grad_norm);
      opt.step(policy.params(), grad);
      ++st.minibatches;
    }
  }
  for (T p : policy.params())
    if (!std::isfinite(static_cast<double>(p))) throw std::runtime_error("ppo_update: non-finite parameter");
  st.policy_loss /= n_samples;
  st.value_loss /= n_samples;
  st.entropy /= n_samples;
  st.clip_frac /= n_samples;
  st.approx_kl /= n_samples;
  st.grad_norm /= st.minibatches;
  return st;
}

// ---------------------------------------------------------------------------
// Collection

/// Cycles through an hourly trace forever. Ledger resets happen whenever the
/// hour changes, including the wrap back to the first flow.
class FlowFeeder {
 public:
  FlowFeeder(std::shared_ptr<const TrafficTrace> trace, std::size_t start = 0) : trace_(std::move(trace)) {
    if (!trace_ || trace_->flows.empty()) throw std::invalid_argument("FlowFeeder: empty trace");
    pos_ = start % trace_->flows.size();
  }
  /// Next flow; `new_hour` is set when the ledger must be reset first.
  const FlowRequest& next(bool& new_hour) {
    const auto& f = trace_->flows[pos_];
    new_hour = first_ || pos_ == 0 || f.hour != trace_->flows[(pos_ + trace_->flows.size() - 1) % trace_->flows.size()].hour;
    if (first_) first_ = false;
    pos_ = (pos_ + 1) % trace_->flows.size();
    return f;
  }

 private:
  std::shared_ptr<const TrafficTrace> trace_;
  std::size_t pos_ = 0;
  bool first_ = true;
};

inline int sample_action(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  int last = -1;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] <= 0.0) continue;
    acc += probs[j];
    last = static_cast<int>(j);
    if (u < acc) return last;
  }
  if (last < 0) throw std::logic_error("sample_action: no valid action");
  return last;
}

inline int argmax_action(std::span<const double> logits, const ActionMask& mask) {
  int best = -1;
  for (std::size_t j = 0; j < logits.size(); ++j)
    if (mask[j] && (best < 0 || logits[j] > logits[static_cast<std::size_t>(best)])) best = static_cast<int>(j);
  if (best < 0) throw std::logic_error("argmax_action: all-zero mask");
  return best;
}

class RolloutWorker {
 public:
  RolloutWorker(SfcEnv env, std::shared_ptr<const TrafficTrace> trace, std::size_t start, std::uint64_t seed)
      : env_(std::move(env)), feeder_(std::move(trace), start), rng_(seed) {}

  SfcEnv& env() { return env_; }

  /// Appends n transitions under `policy` into `out` (one segment).
  void collect(const Policy& policy, std::size_t n, RolloutBuffer& out) {
    RolloutSegment seg{out.steps.size(), out.steps.size(), 0.0};
    for (std::size_t k = 0; k < n; ++k) {
      if (!env_.active()) begin_episode(out);
      const ActionMask mask = env_.action_mask();
      const auto fw = policy.forward(obs_);
      const auto lp = masked_log_probs(fw.logits, mask);
      std::vector<double> probs(lp.size(), 0.0);
      for (std::size_t j = 0; j < lp.size(); ++j)
        if (mask[j]) probs[j] = std::exp(lp[j]);
      const int a = sample_action(probs, rng_);
      if (!mask[static_cast<std::size_t>(a)])
        throw std::logic_error(fmt::format("collect: sampled masked action {}", a));
      auto res = env_.step(a);
      out.steps.push_back(Transition{std::move(obs_), mask, a, lp[static_cast<std::size_t>(a)], res.reward, fw.value,
                                     res.done});
      ep_reward_ += res.reward;
      if (res.done) {
        out.episodes.push_back({ep_reward_, res.terminal == TerminalKind::Success});
        ep_reward_ = 0.0;
      }
      obs_ = std::move(res.obs);
    }
    seg.end = out.steps.size();
    seg.bootstrap = env_.active() ? policy.forward(obs_).value : 0.0;
    out.segments.push_back(seg);
  }

 private:
  /// Advances the feeder until an episode with at least one decision starts.
  /// Flows that resolve without a decision produce no transition; the ones
  /// that dead-end at once still count as failed episodes.
  void begin_episode(RolloutBuffer& out) {
    for (;;) {
      bool new_hour = false;
      const FlowRequest& f = feeder_.next(new_hour);
      if (new_hour) env_.hour_boundary(f.hour);
      try {
        obs_ = env_.reset(f);
      } catch (const ChainError&) {
        continue;
      }
      if (!env_.active()) continue;
      if (mask_empty(env_.action_mask())) {
        const auto res = env_.step(0);
        out.episodes.push_back({res.reward, false});
        continue;
      }
      ep_reward_ = 0.0;
      return;
    }
  }

  SfcEnv env_;
  FlowFeeder feeder_;
  Rng rng_;
  Observation obs_;
  double ep_reward_ = 0.0;
};

/// Fans collection out over the workers (one thread each when more than
/// one) and concatenates their output in worker order.
inline RolloutBuffer collect(std::vector<RolloutWorker>& workers, const Policy& params, std::size_t n) {
  const std::size_t w = workers.size();
  if (w == 0 || n % w != 0) throw std::invalid_argument("collect: n must split evenly across workers");
  std::vector<RolloutBuffer> parts(w);
  if (w == 1) {
    Policy snapshot = params;
    workers[0].collect(snapshot, n, parts[0]);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(w);
    for (std::size_t i = 0; i < w; ++i) {
      threads.emplace_back([&, i] {
        try {
          Policy snapshot = params;
          workers[i].collect(snapshot, n / w, parts[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  RolloutBuffer out;
  for (auto& p : parts) {
    const std::size_t off = out.steps.size();
    for (auto s : p.segments) out.segments.push_back({s.begin + off, s.end + off, s.bootstrap});
    std::move(p.steps.begin(), p.steps.end(), std::back_inserter(out.steps));
    out.episodes.insert(out.episodes.end(), p.episodes.begin(), p.episodes.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

inline constexpr std::string_view kLearningCurveHeader = "steps,mean_reward,success_rate,clip_frac,kl";

struct CurveRow {
  std::int64_t steps = 0;
  double mean_reward = 0.0;
  double success_rate = 0.0;
  double clip_frac = 0.0;
  double kl = 0.0;
};

inline std::string curve_row(const CurveRow& r) {
  return fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f}\n", r.steps, r.mean_reward, r.success_rate, r.clip_frac, r.kl);
}

inline std::string_view mode_name(ChainMode m) { return m == ChainMode::Joint ? "joint" : "fixed"; }

struct TrainSetup {
  std::shared_ptr<const Topology> topology;
  std::shared_ptr<const TrafficTrace> trace;
  ChainMode mode = ChainMode::Joint;
  TrainConfig train;
  RewardConfig reward;
  PowerParams power;
  std::uint64_t config_hash = 0;
};

struct TrainResult {
  Policy policy;
  std::vector<CurveRow> curve;
  std::vector<EpisodeStat> episodes;
  std::string checkpoint;  // empty when no output directory was given
};

/// Alternates collection and update until total_steps. Learning-curve rows
/// are written to `curve_out` after every round; checkpoints land in out_dir.
inline TrainResult train(const TrainSetup& s, const std::filesystem::path& out_dir = {},
                         std::ostream* curve_out = nullptr) {
  const auto& cfg = s.train;
  cfg.validate();
  s.power.validate();
  std::vector<RolloutWorker> workers;
  const std::size_t per_worker_offset = s.trace->flows.size() / static_cast<std::size_t>(cfg.workers);
  for (int i = 0; i < cfg.workers; ++i)
    workers.emplace_back(SfcEnv(NetworkGraph(s.topology), s.mode, s.reward, s.power), s.trace,
                         per_worker_offset * static_cast<std::size_t>(i), mix_seed(cfg.seed, 100 + static_cast<std::uint64_t>(i)));

  TrainResult result{make_policy(workers[0].env(), cfg.hidden, cfg.embed, mix_seed(cfg.seed, 1)), {}, {}, {}};
  Adam<float> opt(result.policy.params().size(), cfg.lr, cfg.adam_eps);
  Rng shuffle_rng(mix_seed(cfg.seed, 2));

  auto write_checkpoint = [&](std::int64_t steps) {
    if (out_dir.empty()) return;
    std::filesystem::create_directories(out_dir);
    const auto path = out_dir / fmt::format("{}_{}.ckpt", mode_name(s.mode), steps);
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
    save_checkpoint(f, result.policy, s.config_hash);
    result.checkpoint = path.string();
  };

  if (curve_out) *curve_out << kLearningCurveHeader << '\n';
  std::int64_t steps = 0;
  std::int64_t next_ckpt = cfg.checkpoint_every > 0 ? cfg.checkpoint_every : std::numeric_limits<std::int64_t>::max();
  while (steps < cfg.total_steps) {
    auto buf = collect(workers, result.policy, static_cast<std::size_t>(cfg.rollout_size));
    steps += static_cast<std::int64_t>(buf.size());
    result.episodes.insert(result.episodes.end(), buf.episodes.begin(), buf.episodes.end());
    const auto st = ppo_update(result.policy, opt, buf, cfg, shuffle_rng);

    CurveRow row{steps, 0.0, 0.0, st.clip_frac, st.approx_kl};
    const std::size_t n = std::min<std::size_t>(result.episodes.size(), static_cast<std::size_t>(cfg.trailing_window));
    for (std::size_t i = result.episodes.size() - n; i < result.episodes.size(); ++i) {
      row.mean_reward += result.episodes[i].reward;
      row.success_rate += result.episodes[i].success ? 1.0 : 0.0;
    }
    if (n > 0) {
      row.mean_reward /= static_cast<double>(n);
      row.success_rate /= static_cast<double>(n);
    }
    result.curve.push_back(row);
    if (curve_out) {
      *curve_out << curve_row(row);
      curve_out->flush();
    }
    if (steps >= next_ckpt && steps < cfg.total_steps) {
      write_checkpoint(steps);
      next_ckpt += cfg.checkpoint_every;
    }
  }
  write_checkpoint(steps);
  return result;
}

}  // namespace oransfc
