#pragma once

// Residual MLP with prefix-depth forward/backward and SGD with momentum.
//
// Layout: x -> pre (dense) -> h_0 -> block_1 -> h_1 -> ... -> block_k -> h_k -> head -> logits
// where block_m(h) = h + fc2(relu(fc1(h))). Evaluating the prefix of depth k
// treats blocks k+1..K as the identity, so f_k = h_k is the feature handed
// to the head.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flextrain/error.hpp"
#include "flextrain/matrix.hpp"
#include "flextrain/rng.hpp"

namespace flextrain {

struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // out x in, row-major
  std::vector<double> bias;    // out

  Dense() = default;
  Dense(std::size_t in_dim, std::size_t out_dim)
      : in(in_dim), out(out_dim), weight(in_dim * out_dim, 0.0), bias(out_dim, 0.0) {}

  std::size_t param_count() const { return weight.size() + bias.size(); }
  bool operator==(const Dense&) const = default;
};

struct ResidualBlock {
  Dense fc1;
  Dense fc2;
  bool operator==(const ResidualBlock&) const = default;
};

struct NetShape {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_classes = 0;
  std::size_t depth = 0;  // K

  bool operator==(const NetShape&) const = default;

  void validate() const {
    if (input_dim == 0 || hidden_dim == 0 || num_classes == 0 || depth == 0)
      throw std::invalid_argument("NetShape: all dimensions and depth must be >= 1");
  }
  NetShape with_depth(std::size_t k) const {
    NetShape s = *this;
    s.depth = k;
    return s;
  }
};

// Layer index convention shared by the optimizer, aggregation and
// checkpointing: 0 = pre, m = block m (1-based), depth + 1 = head.
struct Parameters {
  Dense pre;
  std::vector<ResidualBlock> blocks;
  Dense head;

  Parameters() = default;
  explicit Parameters(const NetShape& s)
      : pre(s.input_dim, s.hidden_dim), head(s.hidden_dim, s.num_classes) {
    blocks.reserve(s.depth);
    for (std::size_t m = 0; m < s.depth; ++m)
      blocks.push_back({Dense(s.hidden_dim, s.hidden_dim), Dense(s.hidden_dim, s.hidden_dim)});
  }

  std::size_t depth() const { return blocks.size(); }
  std::size_t head_layer() const { return blocks.size() + 1; }

  bool operator==(const Parameters&) const = default;
};

// A named view of one parameter array.
template <typename T>
struct ArrayRef {
  std::string name;
  std::size_t layer;  // see Parameters
  std::vector<std::size_t> shape;
  std::span<T> values;
};

namespace detail {

template <typename P, typename F>
void visit_dense(P& d, const std::string& prefix, std::size_t layer, F& fn) {
  using V = std::conditional_t<std::is_const_v<P>, const double, double>;
  fn(ArrayRef<V>{prefix + ".weight", layer, {d.out, d.in}, std::span<V>(d.weight)});
  fn(ArrayRef<V>{prefix + ".bias", layer, {d.out}, std::span<V>(d.bias)});
}

template <typename P, typename F>
void visit_params(P& p, F&& fn) {
  visit_dense(p.pre, "pre", 0, fn);
  for (std::size_t m = 0; m < p.blocks.size(); ++m) {
    const std::string name = "block" + std::to_string(m + 1);
    visit_dense(p.blocks[m].fc1, name + ".fc1", m + 1, fn);
    visit_dense(p.blocks[m].fc2, name + ".fc2", m + 1, fn);
  }
  visit_dense(p.head, "head", p.blocks.size() + 1, fn);
}

}  // namespace detail

// Visits every array in canonical (checkpoint) order.
template <typename F>
void for_each_array(Parameters& p, F&& fn) {
  detail::visit_params(p, std::forward<F>(fn));
}
template <typename F>
void for_each_array(const Parameters& p, F&& fn) {
  detail::visit_params(p, std::forward<F>(fn));
}

// True when the layer belongs to the trainable prefix W~_k.
inline bool layer_active(std::size_t layer, std::size_t k, std::size_t depth) {
  return layer <= k || layer == depth + 1;
}

class ResidualNet {
 public:
  ResidualNet() = default;
  ResidualNet(const NetShape& shape, Parameters params, std::uint64_t seed = 0)
      : shape_(shape), params_(std::move(params)), seed_(seed) {
    shape_.validate();
    check_layout();
  }

  const NetShape& shape() const { return shape_; }
  std::size_t depth() const { return shape_.depth; }
  std::size_t input_dim() const { return shape_.input_dim; }
  std::size_t hidden_dim() const { return shape_.hidden_dim; }
  std::size_t num_classes() const { return shape_.num_classes; }
  std::uint64_t seed() const { return seed_; }

  const Parameters& params() const { return params_; }

  // Every write access bumps the revision, which invalidates open traces.
  Parameters& mutable_params() {
    ++revision_;
    return params_;
  }
  std::uint64_t revision() const { return revision_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for_each_array(params_, [&](const ArrayRef<const double>& a) { n += a.values.size(); });
    return n;
  }

  bool same_weights(const ResidualNet& other) const {
    return shape_ == other.shape_ && params_ == other.params_;
  }

 private:
  void check_layout() const {
    const Parameters reference(shape_);
    bool ok = params_.blocks.size() == reference.blocks.size();
    auto dims_match = [](const Dense& a, const Dense& b) {
      return a.in == b.in && a.out == b.out && a.weight.size() == b.weight.size() &&
             a.bias.size() == b.bias.size();
    };
    ok = ok && dims_match(params_.pre, reference.pre) && dims_match(params_.head, reference.head);
    for (std::size_t m = 0; ok && m < params_.blocks.size(); ++m)
      ok = dims_match(params_.blocks[m].fc1, reference.blocks[m].fc1) &&
           dims_match(params_.blocks[m].fc2, reference.blocks[m].fc2);
    if (!ok) throw std::invalid_argument("ResidualNet: parameter arrays do not match the shape");
  }

  NetShape shape_;
  Parameters params_;
  std::uint64_t seed_ = 0;
  std::uint64_t revision_ = 0;
};

// He-style fan-in init for pre, fc1 and head; fc2 and all biases start at zero
// so every block is the identity at initialization.
inline ResidualNet init_net(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_classes,
                            std::size_t depth, std::uint64_t seed) {
  const NetShape shape{input_dim, hidden_dim, num_classes, depth};
  shape.validate();
  Parameters p(shape);
  Rng rng(seed);
  auto he = [&](Dense& d) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(d.in));
    for (auto& w : d.weight) w = rng.normal(0.0, stddev);
  };
  he(p.pre);
  for (auto& b : p.blocks) he(b.fc1);
  he(p.head);
  return ResidualNet(shape, std::move(p), seed);
}

inline ResidualNet init_net(const NetShape& s, std::uint64_t seed) {
  return init_net(s.input_dim, s.hidden_dim, s.num_classes, s.depth, seed);
}

// Copies pre, blocks 1..k and head into a standalone depth-k network.
inline ResidualNet extract_prefix(const ResidualNet& net, std::size_t k) {
  if (k < 1 || k > net.depth()) throw std::out_of_range("extract_prefix: depth out of range");
  Parameters p;
  p.pre = net.params().pre;
  p.blocks.assign(net.params().blocks.begin(), net.params().blocks.begin() + static_cast<long>(k));
  p.head = net.params().head;
  return ResidualNet(net.shape().with_depth(k), std::move(p), net.seed());
}

struct ForwardTrace {
  const ResidualNet* net = nullptr;
  std::uint64_t revision = 0;
  std::size_t depth = 0;
  Matrix input;
  std::vector<Matrix> features;  // h_0 (pre output) .. h_depth
  std::vector<Matrix> pre_act;   // fc1 output of block m, before relu (index m-1)
  std::vector<Matrix> act;       // relu(pre_act)
  Matrix logits;

  std::size_t batch() const { return input.rows; }
  // f_j: post-block-j feature, j in 0..depth (j = 0 is the pre-layer output).
  const Matrix& feature(std::size_t j) const { return features.at(j); }
  const Matrix& final_feature() const { return features.back(); }
};

namespace detail {
inline void check_input(const ResidualNet& net, const Matrix& x, std::size_t k) {
  if (k < 1 || k > net.depth()) throw std::out_of_range("prefix depth out of range");
  if (x.cols != net.input_dim()) throw std::invalid_argument("input width does not match input_dim");
  if (x.rows == 0) throw std::invalid_argument("empty batch");
}
}  // namespace detail

inline ForwardTrace forward_prefix(const ResidualNet& net, const Matrix& x, std::size_t k) {
  detail::check_input(net, x, k);
  const Parameters& p = net.params();
  ForwardTrace t;
  t.net = &net;
  t.revision = net.revision();
  t.depth = k;
  t.input = x;
  t.features.resize(k + 1);
  t.pre_act.resize(k);
  t.act.resize(k);
  detail::dense_forward(x, p.pre.weight, p.pre.bias, p.pre.out, t.features[0]);
  Matrix branch;
  for (std::size_t m = 0; m < k; ++m) {
    const ResidualBlock& blk = p.blocks[m];
    detail::dense_forward(t.features[m], blk.fc1.weight, blk.fc1.bias, blk.fc1.out, t.pre_act[m]);
    t.act[m] = t.pre_act[m];
    for (auto& v : t.act[m].data) v = v > 0.0 ? v : 0.0;
    detail::dense_forward(t.act[m], blk.fc2.weight, blk.fc2.bias, blk.fc2.out, branch);
    t.features[m + 1] = t.features[m];
    auto& h = t.features[m + 1].data;
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += branch.data[i];
  }
  detail::dense_forward(t.features[k], p.head.weight, p.head.bias, p.head.out, t.logits);
  return t;
}

// Logits only; no trace is kept.
inline Matrix predict_logits(const ResidualNet& net, const Matrix& x, std::size_t k) {
  return forward_prefix(net, x, k).logits;
}

// Re-roots a depth-k' trace at a shallower depth k: reuses h_0..h_k and
// recomputes only the head.
inline ForwardTrace truncate_trace(const ForwardTrace& trace, std::size_t k) {
  if (trace.net == nullptr) throw std::invalid_argument("truncate_trace: empty trace");
  if (k < 1 || k > trace.depth) throw std::out_of_range("truncate_trace: depth out of range");
  if (trace.net->revision() != trace.revision)
    throw StaleTraceError("truncate_trace: network changed since forward pass");
  ForwardTrace t;
  t.net = trace.net;
  t.revision = trace.revision;
  t.depth = k;
  t.input = trace.input;
  t.features.assign(trace.features.begin(), trace.features.begin() + static_cast<long>(k + 1));
  t.pre_act.assign(trace.pre_act.begin(), trace.pre_act.begin() + static_cast<long>(k));
  t.act.assign(trace.act.begin(), trace.act.begin() + static_cast<long>(k));
  const Dense& head = trace.net->params().head;
  detail::dense_forward(t.features[k], head.weight, head.bias, head.out, t.logits);
  return t;
}

// Gradients for every array of the network; arrays outside W~_depth stay zero.
struct GradientSet {
  Parameters grads;
  std::size_t depth = 0;  // gradients are restricted to layers active at this depth

  GradientSet() = default;
  GradientSet(const NetShape& shape, std::size_t k) : grads(shape), depth(k) {}
};

// Extra upstream gradient added at feature h_index of the trace.
struct FeatureGrad {
  std::size_t index = 0;
  Matrix grad;
};

inline GradientSet backward_prefix(const ResidualNet& net, const ForwardTrace& trace,
                                   const Matrix& grad_logits,
                                   std::span<const FeatureGrad> feature_grads = {}) {
  if (trace.net != &net || trace.revision != net.revision())
    throw StaleTraceError("backward_prefix: trace does not belong to the current network state");
  const std::size_t k = trace.depth;
  if (grad_logits.rows != trace.batch() || grad_logits.cols != net.num_classes())
    throw std::invalid_argument("backward_prefix: logit gradient shape mismatch");
  for (const auto& fg : feature_grads) {
    if (fg.index > k) throw std::out_of_range("backward_prefix: feature gradient beyond depth");
    if (fg.grad.rows != trace.batch() || fg.grad.cols != net.hidden_dim())
      throw std::invalid_argument("backward_prefix: feature gradient shape mismatch");
  }
  auto add_feature_grads = [&](std::size_t j, Matrix& dh) {
    for (const auto& fg : feature_grads)
      if (fg.index == j)
        for (std::size_t i = 0; i < dh.data.size(); ++i) dh.data[i] += fg.grad.data[i];
  };

  const Parameters& p = net.params();
  GradientSet out(net.shape(), k);
  Parameters& g = out.grads;

  Matrix dh;
  detail::dense_backward(trace.features[k], p.head.weight, grad_logits, g.head.weight, g.head.bias, &dh);
  add_feature_grads(k, dh);
  Matrix dact;
  Matrix dz;
  for (std::size_t m = k; m-- > 0;) {
    const ResidualBlock& blk = p.blocks[m];
    ResidualBlock& gb = g.blocks[m];
    // h_{m+1} = h_m + fc2(relu(fc1(h_m)))
    detail::dense_backward(trace.act[m], blk.fc2.weight, dh, gb.fc2.weight, gb.fc2.bias, &dact);
    dz = std::move(dact);
    const auto& z = trace.pre_act[m].data;
    for (std::size_t i = 0; i < dz.data.size(); ++i)
      if (!(z[i] > 0.0)) dz.data[i] = 0.0;
    Matrix dh_branch;
    detail::dense_backward(trace.features[m], blk.fc1.weight, dz, gb.fc1.weight, gb.fc1.bias, &dh_branch);
    for (std::size_t i = 0; i < dh.data.size(); ++i) dh.data[i] += dh_branch.data[i];
    add_feature_grads(m, dh);
  }
  detail::dense_backward(trace.input, p.pre.weight, dh, g.pre.weight, g.pre.bias, nullptr);
  return out;
}

struct SgdOptions {
  double lr = 0.05;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

// Momentum buffers, one per parameter array, zero until first touched.
struct SgdState {
  Parameters velocity;

  SgdState() = default;
  explicit SgdState(const NetShape& shape) : velocity(shape) {}
  bool operator==(const SgdState&) const = default;
};

// v <- momentum * v + g + weight_decay * w ; w <- w - lr * v, on W~_k only.
inline void sgd_step(ResidualNet& net, const GradientSet& grads, const SgdOptions& opt, SgdState& state) {
  if (!(opt.lr >= 0.0)) throw std::invalid_argument("sgd_step: learning rate must be non-negative");
  const std::size_t depth = net.depth();
  if (grads.grads.depth() != depth || grads.depth < 1 || grads.depth > depth)
    throw std::invalid_argument("sgd_step: gradient set does not match network");
  if (state.velocity.depth() != depth) state = SgdState(net.shape());

  struct Slot {
    std::span<const double> g;
    std::string name;
  };
  std::vector<Slot> gslots;
  for_each_array(grads.grads, [&](const ArrayRef<const double>& a) {
    if (!layer_active(a.layer, grads.depth, depth)) return;
    for (double v : a.values)
      if (!std::isfinite(v)) throw DivergenceError("sgd_step: non-finite gradient in " + a.name);
    gslots.push_back({a.values, a.name});
  });
  if (opt.lr == 0.0) return;

  std::vector<std::span<double>> vslots;
  for_each_array(state.velocity, [&](const ArrayRef<double>& a) {
    if (layer_active(a.layer, grads.depth, depth)) vslots.push_back(a.values);
  });
  std::size_t idx = 0;
  for_each_array(net.mutable_params(), [&](const ArrayRef<double>& a) {
    if (!layer_active(a.layer, grads.depth, depth)) return;
    auto g = gslots[idx].g;
    auto v = vslots[idx];
    ++idx;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      v[i] = opt.momentum * v[i] + g[i] + opt.weight_decay * a.values[i];
      a.values[i] -= opt.lr * v[i];
    }
  });
}

}  // namespace flextrain
