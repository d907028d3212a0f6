#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <memory>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "oransfc/env.hpp"
#include "oransfc/rng.hpp"

namespace oransfc {

// ---------------------------------------------------------------------------
// Normalized adjacency

template <typename T>
struct CsrMatrix {
  int n = 0;
  std::vector<int> row_ptr{0};
  std::vector<int> col;
  std::vector<T> val;

  std::span<const int> cols(int r) const { return {col.data() + row_ptr[r], col.data() + row_ptr[r + 1]}; }
  std::span<const T> vals(int r) const { return {val.data() + row_ptr[r], val.data() + row_ptr[r + 1]}; }

  T at(int r, int c) const {
    for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k)
      if (col[k] == c) return val[k];
    return T(0);
  }
};

/// D^-1/2 (A + I) D^-1/2 over the undirected skeleton (directed twins count once).
template <typename T = double>
CsrMatrix<T> normalized_adjacency(const Topology& t) {
  const int n = t.num_nodes();
  std::vector<std::vector<int>> nbrs(n);
  for (LinkId l = 0; l < t.num_links(); ++l) {
    nbrs[t.link(l).src].push_back(t.link(l).dst);
    nbrs[t.link(l).dst].push_back(t.link(l).src);
  }
  for (int v = 0; v < n; ++v) {
    nbrs[v].push_back(v);
    std::sort(nbrs[v].begin(), nbrs[v].end());
    nbrs[v].erase(std::unique(nbrs[v].begin(), nbrs[v].end()), nbrs[v].end());
  }
  CsrMatrix<T> m;
  m.n = n;
  for (int v = 0; v < n; ++v) {
    for (int u : nbrs[v]) {
      m.col.push_back(u);
      m.val.push_back(static_cast<T>(1.0 / std::sqrt(double(nbrs[v].size()) * double(nbrs[u].size()))));
    }
    m.row_ptr.push_back(static_cast<int>(m.col.size()));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Masked categorical distribution

/// Softmax restricted to mask=1 entries; masked entries get probability 0
/// exactly. Sums are accumulated in double.
inline std::vector<double> masked_distribution(std::span<const double> logits, const ActionMask& mask) {
  if (logits.size() != mask.size()) throw std::invalid_argument("masked_distribution: size mismatch");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) mx = std::max(mx, logits[i]);
  if (mx == -std::numeric_limits<double>::infinity())
    throw std::invalid_argument("masked_distribution: all-zero mask");
  std::vector<double> p(logits.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) z += (p[i] = std::exp(logits[i] - mx));
  for (auto& x : p) x /= z;
  return p;
}

inline std::vector<double> masked_log_probs(std::span<const double> logits, const ActionMask& mask) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) mx = std::max(mx, logits[i]);
  if (mx == -std::numeric_limits<double>::infinity())
    throw std::invalid_argument("masked_log_probs: all-zero mask");
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) z += std::exp(logits[i] - mx);
  const double lse = mx + std::log(z);
  std::vector<double> lp(logits.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (mask[i]) lp[i] = logits[i] - lse;
  return lp;
}

inline double masked_entropy(std::span<const double> probs, std::span<const double> log_probs) {
  double h = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (probs[i] > 0.0) h -= probs[i] * log_probs[i];
  return h;
}

// ---------------------------------------------------------------------------
// Parameters

struct PolicyDims {
  int num_nodes = 0;
  int features = kNodeFeatures;
  int hidden = 64;
  int embed = 8;
  int actions = 9;
  int services = kNumServices;
  int hours = 24;
  int segments = kNumSegments;
  int roles = kNumTargetRoles;

  int trunk_input() const { return 2 * hidden + 6 * embed + 2; }
  bool operator==(const PolicyDims&) const = default;
};

struct TensorSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

/// Every trainable tensor lives in one flat buffer; slices name the pieces.
struct ParamLayout {
  explicit ParamLayout(const PolicyDims& d) : dims(d) {
    const auto H = static_cast<std::size_t>(d.hidden), E = static_cast<std::size_t>(d.embed);
    w1 = add("gcn1.weight", d.features, H);
    b1 = add("gcn1.bias", 1, H);
    w2 = add("gcn2.weight", H, H);
    b2 = add("gcn2.bias", 1, H);
    w3 = add("gcn3.weight", H, H);
    b3 = add("gcn3.bias", 1, H);
    emb_service = add("embed.service", d.services, E);
    emb_hour = add("embed.hour", d.hours, E);
    emb_segment = add("embed.segment", d.segments, E);
    emb_role = add("embed.target_role", d.roles, E);
    emb_node = add("embed.node", d.num_nodes, E);
    wt = add("trunk.weight", d.trunk_input(), H);
    bt = add("trunk.bias", 1, H);
    wa = add("actor.weight", H, d.actions);
    ba = add("actor.bias", 1, d.actions);
    wc = add("critic.weight", H, 1);
    bc = add("critic.bias", 1, 1);
  }

  PolicyDims dims;
  TensorSlice w1, b1, w2, b2, w3, b3, emb_service, emb_hour, emb_segment, emb_role, emb_node, wt, bt, wa, ba, wc, bc;
  std::vector<TensorSlice> tensors;
  std::size_t total = 0;

 private:
  TensorSlice add(std::string name, std::size_t rows, std::size_t cols) {
    TensorSlice s{std::move(name), total, rows, cols};
    total += s.size();
    tensors.push_back(s);
    return s;
  }
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loss callback for one sample: given the forward outputs, writes dL/dlogits
/// and dL/dvalue and returns the sample's loss contribution.
using SampleLoss = std::function<double(std::size_t, std::span<const double> logits, double value,
                                        std::span<double> dlogits, double& dvalue)>;

/// Three GCN layers over the node features, categorical embeddings, a shared
/// ReLU trunk and separate actor/critic linear heads.
///
/// The trunk input is [h(current) | h(target) | e_service | e_hour |
/// e_segment | e_target_role | e_node(current) | e_node(target) | dist |
/// remaining_latency] where h is the third GCN layer's output. T is the
/// storage and activation type; float for training, double for
/// finite-difference checks.
template <typename T>
class GcnPolicy {
 public:
  struct Output {
    std::vector<double> logits;
    double value = 0.0;
  };

  GcnPolicy(PolicyDims dims, CsrMatrix<T> adj)
      : layout_(dims), params_(layout_.total, T(0)), adj_(std::move(adj)) {
    if (adj_.n != dims.num_nodes) throw std::invalid_argument("GcnPolicy: adjacency size differs from num_nodes");
  }

  const PolicyDims& dims() const { return layout_.dims; }
  const ParamLayout& layout() const { return layout_; }
  const CsrMatrix<T>& adjacency() const { return adj_; }
  std::span<T> params() {
    cache_version_ = 0;
    return params_;
  }
  std::span<const T> params() const { return params_; }
  std::span<T> tensor(const TensorSlice& s) {
    cache_version_ = 0;
    return {params_.data() + s.offset, s.size()};
  }
  std::span<const T> tensor(const TensorSlice& s) const { return {params_.data() + s.offset, s.size()}; }

  /// Weights U(-sqrt(1/fan_in), +sqrt(1/fan_in)), biases 0, embeddings N(0, 0.02).
  void init(std::uint64_t seed) {
    Rng rng(seed);
    std::fill(params_.begin(), params_.end(), T(0));
    for (const auto* w : {&layout_.w1, &layout_.w2, &layout_.w3, &layout_.wt, &layout_.wa, &layout_.wc}) {
      const double bound = std::sqrt(1.0 / static_cast<double>(w->rows));
      for (auto& x : tensor(*w)) x = static_cast<T>(rng.uniform(-bound, bound));
    }
    for (const auto* e :
         {&layout_.emb_service, &layout_.emb_hour, &layout_.emb_segment, &layout_.emb_role, &layout_.emb_node})
      for (auto& x : tensor(*e)) x = static_cast<T>(rng.normal(0.0, 0.02));
    cache_version_ = 0;
  }

  template <typename U>
  void copy_params_from(const GcnPolicy<U>& other) {
    if (!(other.dims() == dims())) throw std::invalid_argument("copy_params_from: dims differ");
    auto src = other.params();
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i] = static_cast<T>(src[i]);
    cache_version_ = 0;
  }

  /// Deterministic forward pass. The GCN embedding is cached per node-feature
  /// version, so consecutive steps of one episode reuse it (not thread-safe;
  /// give each worker its own copy).
  Output forward(const Observation& obs) const {
    check_obs(obs);
    if (cache_version_ == 0 || cache_version_ != obs.nodes->version || cache_nodes_ != obs.nodes.get()) {
      std::vector<int> all(static_cast<std::size_t>(dims().num_nodes));
      std::iota(all.begin(), all.end(), 0);
      gcn_forward(*obs.nodes, all, cache_);
      cache_version_ = obs.nodes->version == 0 ? 0 : obs.nodes->version;
      cache_nodes_ = obs.nodes.get();
    }
    HeadWork w(layout_);
    head_forward(cache_, obs, w);
    return Output{w.logits, w.value};
  }

  /// Uncached forward; restricted to the receptive field of the observation.
  Output forward_uncached(const Observation& obs) const {
    check_obs(obs);
    Activations act;
    const int rows[2] = {obs.current_node, obs.target_node};
    gcn_forward(*obs.nodes, rows, act);
    HeadWork w(layout_);
    head_forward(act, obs, w);
    return Output{w.logits, w.value};
  }

  /// Forward and reverse pass over a batch. Gradients are added into `grad`
  /// (same layout as params). Samples sharing a node-feature snapshot share
  /// one GCN pass. Returns the summed loss.
  double accumulate_gradients(std::span<const Observation* const> batch, const SampleLoss& loss,
                              std::span<T> grad) const {
    if (grad.size() != params_.size()) throw std::invalid_argument("accumulate_gradients: grad size");
    std::map<const NodeFeatures*, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      check_obs(*batch[i]);
      groups[batch[i]->nodes.get()].push_back(i);
    }
    // Visit groups in first-appearance order so float sums are reproducible.
    std::vector<std::pair<std::size_t, const NodeFeatures*>> order;
    for (const auto& [ptr, idx] : groups) order.emplace_back(idx.front(), ptr);
    std::sort(order.begin(), order.end());

    double total = 0.0;
    Activations act;
    HeadWork w(layout_);
    std::vector<double> dlogits(static_cast<std::size_t>(dims().actions));
    const auto H = static_cast<std::size_t>(dims().hidden);
    for (const auto& [_, ptr] : order) {
      const auto& idx = groups[ptr];
      std::vector<int> rows;
      for (std::size_t i : idx) {
        rows.push_back(batch[i]->current_node);
        rows.push_back(batch[i]->target_node);
      }
      gcn_forward(*ptr, rows, act);
      act.dh3.assign(act.h3.size(), T(0));
      for (std::size_t i : idx) {
        const Observation& obs = *batch[i];
        head_forward(act, obs, w);
        std::fill(dlogits.begin(), dlogits.end(), 0.0);
        double dvalue = 0.0;
        const double l = loss(i, w.logits, w.value, dlogits, dvalue);
        if (!std::isfinite(l)) throw std::runtime_error(fmt::format("non-finite loss at sample {}", i));
        total += l;
        head_backward(obs, w, dlogits, dvalue, grad);
        T* dc = &act.dh3[static_cast<std::size_t>(obs.current_node) * H];
        T* dt = &act.dh3[static_cast<std::size_t>(obs.target_node) * H];
        for (std::size_t h = 0; h < H; ++h) {
          dc[h] += w.dx[h];
          dt[h] += w.dx[H + h];
        }
      }
      gcn_backward(act, grad);
    }
    return total;
  }

 private:
  struct Activations {
    std::vector<int> r1, r2, r3;
    std::vector<T> x, m1, z1, h1, m2, z2, h2, m3, z3, h3;
    std::vector<T> dh3, dh2, dh1, dz, dm;
  };

  struct HeadWork {
    explicit HeadWork(const ParamLayout& l)
        : x(static_cast<std::size_t>(l.dims.trunk_input())),
          y(static_cast<std::size_t>(l.dims.hidden)),
          z(y.size()),
          dz(y.size()),
          dx(x.size()),
          logits(static_cast<std::size_t>(l.dims.actions)) {}
    std::vector<T> x, y, z, dz, dx;
    std::vector<double> logits;
    double value = 0.0;
  };

  void check_obs(const Observation& o) const {
    const auto& d = dims();
    if (!o.nodes || o.nodes->num_nodes != d.num_nodes)
      throw std::invalid_argument("GcnPolicy: observation node count differs from the model");
    if (o.current_node < 0 || o.current_node >= d.num_nodes || o.target_node < 0 || o.target_node >= d.num_nodes ||
        o.service < 0 || o.service >= d.services || o.hour < 0 || o.hour >= d.hours || o.segment_idx < 0 ||
        o.segment_idx >= d.segments || o.target_role < 0 || o.target_role >= d.roles)
      throw std::invalid_argument("GcnPolicy: observation field out of range");
  }

  /// Rows of A that touch `rows` (A has self-loops, so this is a superset).
  std::vector<int> expand(std::span<const int> rows) const {
    std::vector<char> mark(static_cast<std::size_t>(adj_.n), 0);
    for (int r : rows)
      for (int c : adj_.cols(r)) mark[c] = 1;
    std::vector<int> out;
    for (int v = 0; v < adj_.n; ++v)
      if (mark[v]) out.push_back(v);
    return out;
  }

  // out[i,:] = sum_j A_ij in[j,:] for i in rows
  void spmm_rows(std::span<const int> rows, const std::vector<T>& in, std::size_t width, std::vector<T>& out) const {
    for (int i : rows) {
      T* o = &out[static_cast<std::size_t>(i) * width];
      std::fill(o, o + width, T(0));
      const auto cs = adj_.cols(i);
      const auto vs = adj_.vals(i);
      for (std::size_t k = 0; k < cs.size(); ++k) {
        const T a = vs[k];
        const T* src = &in[static_cast<std::size_t>(cs[k]) * width];
        for (std::size_t c = 0; c < width; ++c) o[c] += a * src[c];
      }
    }
  }

  // z[i,:] = b + m[i,:] W ; h = relu(z)
  void dense_rows(std::span<const int> rows, const std::vector<T>& m, std::size_t in_w, const TensorSlice& w,
                  const TensorSlice& b, std::vector<T>& z, std::vector<T>& h) const {
    const std::size_t out_w = w.cols;
    const T* W = params_.data() + w.offset;
    const T* B = params_.data() + b.offset;
    for (int i : rows) {
      T* zi = &z[static_cast<std::size_t>(i) * out_w];
      T* hi = &h[static_cast<std::size_t>(i) * out_w];
      std::copy(B, B + out_w, zi);
      const T* mi = &m[static_cast<std::size_t>(i) * in_w];
      for (std::size_t k = 0; k < in_w; ++k) {
        const T mk = mi[k];
        if (mk == T(0)) continue;
        const T* wk = W + k * out_w;
        for (std::size_t c = 0; c < out_w; ++c) zi[c] += mk * wk[c];
      }
      for (std::size_t c = 0; c < out_w; ++c) hi[c] = zi[c] > T(0) ? zi[c] : T(0);
    }
  }

  void gcn_forward(const NodeFeatures& nf, std::span<const int> rows3, Activations& a) const {
    const auto N = static_cast<std::size_t>(dims().num_nodes);
    const auto F = static_cast<std::size_t>(dims().features);
    const auto H = static_cast<std::size_t>(dims().hidden);
    std::vector<int> r3(rows3.begin(), rows3.end());
    std::sort(r3.begin(), r3.end());
    r3.erase(std::unique(r3.begin(), r3.end()), r3.end());
    a.r3 = std::move(r3);
    a.r2 = expand(a.r3);
    a.r1 = expand(a.r2);
    for (auto* v : {&a.m1}) v->resize(N * F);
    for (auto* v : {&a.z1, &a.h1, &a.m2, &a.z2, &a.h2, &a.m3, &a.z3, &a.h3}) v->resize(N * H);
    a.x.resize(N * F);
    for (std::size_t i = 0; i < N * F; ++i) a.x[i] = static_cast<T>(nf.x[i]);
    spmm_rows(a.r1, a.x, F, a.m1);
    dense_rows(a.r1, a.m1, F, layout_.w1, layout_.b1, a.z1, a.h1);
    spmm_rows(a.r2, a.h1, H, a.m2);
    dense_rows(a.r2, a.m2, H, layout_.w2, layout_.b2, a.z2, a.h2);
    spmm_rows(a.r3, a.h2, H, a.m3);
    dense_rows(a.r3, a.m3, H, layout_.w3, layout_.b3, a.z3, a.h3);
  }

  // Backward through one layer: dh (rows `rows`) -> weight grads and dprev
  // scattered through A onto the previous layer's rows.
  void layer_backward(std::span<const int> rows, const std::vector<T>& dh, const std::vector<T>& z,
                      const std::vector<T>& m, std::size_t in_w, const TensorSlice& w, const TensorSlice& b,
                      std::span<T> grad, std::vector<T>* dprev, std::span<const int> prev_rows,
                      Activations& a) const {
    const std::size_t out_w = w.cols;
    const T* W = params_.data() + w.offset;
    T* gW = grad.data() + w.offset;
    T* gB = grad.data() + b.offset;
    a.dz.resize(out_w);
    a.dm.resize(static_cast<std::size_t>(adj_.n) * in_w);
    for (int i : rows) {
      const T* dhi = &dh[static_cast<std::size_t>(i) * out_w];
      const T* zi = &z[static_cast<std::size_t>(i) * out_w];
      bool any = false;
      for (std::size_t c = 0; c < out_w; ++c) {
        a.dz[c] = zi[c] > T(0) ? dhi[c] : T(0);
        any = any || a.dz[c] != T(0);
      }
      T* dmi = &a.dm[static_cast<std::size_t>(i) * in_w];
      if (!any) {
        std::fill(dmi, dmi + in_w, T(0));
        continue;
      }
      for (std::size_t c = 0; c < out_w; ++c) gB[c] += a.dz[c];
      const T* mi = &m[static_cast<std::size_t>(i) * in_w];
      for (std::size_t k = 0; k < in_w; ++k) {
        const T mk = mi[k];
        const T* wk = W + k * out_w;
        T* gk = gW + k * out_w;
        T acc = T(0);
        for (std::size_t c = 0; c < out_w; ++c) {
          if (mk != T(0)) gk[c] += mk * a.dz[c];
          acc += wk[c] * a.dz[c];
        }
        dmi[k] = acc;
      }
    }
    if (!dprev) return;
    dprev->resize(static_cast<std::size_t>(adj_.n) * in_w);
    for (int j : prev_rows) std::fill(&(*dprev)[static_cast<std::size_t>(j) * in_w], &(*dprev)[static_cast<std::size_t>(j) * in_w] + in_w, T(0));
    for (int i : rows) {
      const T* dmi = &a.dm[static_cast<std::size_t>(i) * in_w];
      const auto cs = adj_.cols(i);
      const auto vs = adj_.vals(i);
      for (std::size_t k = 0; k < cs.size(); ++k) {
        T* dj = &(*dprev)[static_cast<std::size_t>(cs[k]) * in_w];
        const T av = vs[k];
        for (std::size_t c = 0; c < in_w; ++c) dj[c] += av * dmi[c];
      }
    }
  }

  void gcn_backward(Activations& a, std::span<T> grad) const {
    const auto F = static_cast<std::size_t>(dims().features);
    const auto H = static_cast<std::size_t>(dims().hidden);
    layer_backward(a.r3, a.dh3, a.z3, a.m3, H, layout_.w3, layout_.b3, grad, &a.dh2, a.r2, a);
    layer_backward(a.r2, a.dh2, a.z2, a.m2, H, layout_.w2, layout_.b2, grad, &a.dh1, a.r1, a);
    layer_backward(a.r1, a.dh1, a.z1, a.m1, F, layout_.w1, layout_.b1, grad, nullptr, {}, a);
  }

  void head_forward(const Activations& a, const Observation& o, HeadWork& w) const {
    const auto H = static_cast<std::size_t>(dims().hidden);
    const auto E = static_cast<std::size_t>(dims().embed);
    const auto A = static_cast<std::size_t>(dims().actions);
    T* x = w.x.data();
    std::copy_n(&a.h3[static_cast<std::size_t>(o.current_node) * H], H, x);
    std::copy_n(&a.h3[static_cast<std::size_t>(o.target_node) * H], H, x + H);
    std::size_t off = 2 * H;
    auto put_embedding = [&](const TensorSlice& s, int row) {
      std::copy_n(params_.data() + s.offset + static_cast<std::size_t>(row) * E, E, x + off);
      off += E;
    };
    put_embedding(layout_.emb_service, o.service);
    put_embedding(layout_.emb_hour, o.hour);
    put_embedding(layout_.emb_segment, o.segment_idx);
    put_embedding(layout_.emb_role, o.target_role);
    put_embedding(layout_.emb_node, o.current_node);
    put_embedding(layout_.emb_node, o.target_node);
    x[off++] = static_cast<T>(o.dist_to_target);
    x[off++] = static_cast<T>(o.remaining_latency);

    const T* Wt = params_.data() + layout_.wt.offset;
    std::copy_n(params_.data() + layout_.bt.offset, H, w.y.data());
    for (std::size_t k = 0; k < w.x.size(); ++k) {
      const T xk = x[k];
      if (xk == T(0)) continue;
      const T* row = Wt + k * H;
      for (std::size_t h = 0; h < H; ++h) w.y[h] += xk * row[h];
    }
    for (std::size_t h = 0; h < H; ++h) w.z[h] = w.y[h] > T(0) ? w.y[h] : T(0);

    const T* Wa = params_.data() + layout_.wa.offset;
    const T* Ba = params_.data() + layout_.ba.offset;
    const T* Wc = params_.data() + layout_.wc.offset;
    std::vector<T> acc(Ba, Ba + A);
    T v = params_[layout_.bc.offset];
    for (std::size_t h = 0; h < H; ++h) {
      const T zh = w.z[h];
      if (zh == T(0)) continue;
      for (std::size_t j = 0; j < A; ++j) acc[j] += zh * Wa[h * A + j];
      v += zh * Wc[h];
    }
    for (std::size_t j = 0; j < A; ++j) w.logits[j] = static_cast<double>(acc[j]);
    w.value = static_cast<double>(v);
  }

  void head_backward(const Observation& o, HeadWork& w, std::span<const double> dlogits, double dvalue,
                     std::span<T> grad) const {
    const auto H = static_cast<std::size_t>(dims().hidden);
    const auto E = static_cast<std::size_t>(dims().embed);
    const auto A = static_cast<std::size_t>(dims().actions);
    const T* Wa = params_.data() + layout_.wa.offset;
    const T* Wc = params_.data() + layout_.wc.offset;
    const T* Wt = params_.data() + layout_.wt.offset;
    T* gWa = grad.data() + layout_.wa.offset;
    T* gBa = grad.data() + layout_.ba.offset;
    T* gWc = grad.data() + layout_.wc.offset;
    T* gBc = grad.data() + layout_.bc.offset;
    T* gWt = grad.data() + layout_.wt.offset;
    T* gBt = grad.data() + layout_.bt.offset;

    std::vector<T> dl(A);
    for (std::size_t j = 0; j < A; ++j) dl[j] = static_cast<T>(dlogits[j]);
    const T dv = static_cast<T>(dvalue);
    for (std::size_t j = 0; j < A; ++j) gBa[j] += dl[j];
    gBc[0] += dv;
    for (std::size_t h = 0; h < H; ++h) {
      const T zh = w.z[h];
      T acc = Wc[h] * dv;
      for (std::size_t j = 0; j < A; ++j) {
        gWa[h * A + j] += zh * dl[j];
        acc += Wa[h * A + j] * dl[j];
      }
      gWc[h] += zh * dv;
      w.dz[h] = w.y[h] > T(0) ? acc : T(0);
    }
    for (std::size_t h = 0; h < H; ++h) gBt[h] += w.dz[h];
    for (std::size_t k = 0; k < w.x.size(); ++k) {
      const T xk = w.x[k];
      const T* row = Wt + k * H;
      T* grow = gWt + k * H;
      T acc = T(0);
      for (std::size_t h = 0; h < H; ++h) {
        if (xk != T(0)) grow[h] += xk * w.dz[h];
        acc += row[h] * w.dz[h];
      }
      w.dx[k] = acc;
    }
    std::size_t off = 2 * H;
    auto take_embedding = [&](const TensorSlice& s, int row) {
      T* g = grad.data() + s.offset + static_cast<std::size_t>(row) * E;
      for (std::size_t e = 0; e < E; ++e) g[e] += w.dx[off + e];
      off += E;
    };
    take_embedding(layout_.emb_service, o.service);
    take_embedding(layout_.emb_hour, o.hour);
    take_embedding(layout_.emb_segment, o.segment_idx);
    take_embedding(layout_.emb_role, o.target_role);
    take_embedding(layout_.emb_node, o.current_node);
    take_embedding(layout_.emb_node, o.target_node);
  }

  ParamLayout layout_;
  std::vector<T> params_;
  CsrMatrix<T> adj_;
  mutable Activations cache_;
  mutable std::uint64_t cache_version_ = 0;
  mutable const NodeFeatures* cache_nodes_ = nullptr;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::string_view kCheckpointMagic = "oransfc-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Text checkpoint: header, dimensions, then every tensor with its shape and
/// values as hex floats (exact round trip).
template <typename T>
void save_checkpoint(std::ostream& out, const GcnPolicy<T>& policy, std::uint64_t config_hash) {
  const auto& d = policy.dims();
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "config_hash " << fmt::format("{:016x}", config_hash) << '\n';
  out << fmt::format("dims {} {} {} {} {} {} {} {} {}\n", d.num_nodes, d.features, d.hidden, d.embed, d.actions,
                     d.services, d.hours, d.segments, d.roles);
  const auto params = policy.params();
  for (const auto& t : policy.layout().tensors) {
    out << "tensor " << t.name << ' ' << t.rows << ' ' << t.cols << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) {
      out << fmt::format("{:a}", static_cast<double>(params[t.offset + i]));
      out << ((i + 1) % 8 == 0 || i + 1 == t.size() ? '\n' : ' ');
    }
  }
}

struct CheckpointHeader {
  PolicyDims dims;
  std::uint64_t config_hash = 0;
};

template <typename T>
CheckpointHeader load_checkpoint(std::istream& in, GcnPolicy<T>& policy) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kCheckpointMagic || version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unrecognized header");
  CheckpointHeader h;
  std::string key, hex;
  in >> key >> hex;
  if (key != "config_hash") throw CheckpointError("checkpoint: missing config_hash");
  h.config_hash = std::stoull(hex, nullptr, 16);
  auto& d = h.dims;
  in >> key >> d.num_nodes >> d.features >> d.hidden >> d.embed >> d.actions >> d.services >> d.hours >> d.segments >>
      d.roles;
  if (key != "dims" || !in) throw CheckpointError("checkpoint: malformed dims line");
  const auto& want = policy.dims();
  if (!(d == want))
    throw CheckpointError(fmt::format(
        "checkpoint: dimensions (nodes={}, features={}, hidden={}, actions={}) do not match the scenario "
        "(nodes={}, features={}, hidden={}, actions={})",
        d.num_nodes, d.features, d.hidden, d.actions, want.num_nodes, want.features, want.hidden, want.actions));
  auto params = policy.params();
  for (const auto& t : policy.layout().tensors) {
    std::string name;
    std::size_t rows = 0, cols = 0;
    in >> key >> name >> rows >> cols;
    if (key != "tensor" || name != t.name || rows != t.rows || cols != t.cols)
      throw CheckpointError("checkpoint: tensor '" + t.name + "' missing or misshapen");
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::string tok;
      in >> tok;
      if (!in) throw CheckpointError("checkpoint: truncated tensor '" + t.name + "'");
      params[t.offset + i] = static_cast<T>(std::strtod(tok.c_str(), nullptr));
    }
  }
  return h;
}

}  // namespace oransfc
