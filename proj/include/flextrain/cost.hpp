#pragma once

// FLOP accounting. Convention: one multiply and one add are two FLOPs, so a
// dense layer d_in -> d_out costs 2*d_in*d_out + d_out per sample (the extra
// d_out are bias adds). ReLU and the residual add cost one FLOP per hidden
// unit each. Backward costs twice the forward pass.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "flextrain/nn.hpp"
#include "flextrain/sampler.hpp"

namespace flextrain {

inline constexpr std::uint64_t kBackwardMultiplier = 2;

inline std::uint64_t dense_flops(std::size_t in, std::size_t out) {
  return 2 * static_cast<std::uint64_t>(in) * out + out;
}

inline std::uint64_t block_flops(std::size_t hidden) {
  return 2 * dense_flops(hidden, hidden) + 2 * static_cast<std::uint64_t>(hidden);
}

inline std::uint64_t flop_count_prefix(const NetShape& shape, std::size_t k, std::size_t batch_size,
                                       bool include_backward) {
  if (k < 1 || k > shape.depth) throw std::out_of_range("flop_count_prefix: depth out of range");
  const std::uint64_t forward = dense_flops(shape.input_dim, shape.hidden_dim) +
                                k * block_flops(shape.hidden_dim) +
                                dense_flops(shape.hidden_dim, shape.num_classes);
  const std::uint64_t per_sample = include_backward ? forward * (1 + kBackwardMultiplier) : forward;
  return per_sample * batch_size;
}

inline std::uint64_t flop_count_prefix(const ResidualNet& net, std::size_t k, std::size_t batch_size,
                                       bool include_backward) {
  return flop_count_prefix(net.shape(), k, batch_size, include_backward);
}

// Per-sample forward cost of every prefix depth; entry k-1 is depth k.
class CostModel {
 public:
  explicit CostModel(std::vector<double> prefix_forward, double backward_multiplier = kBackwardMultiplier)
      : prefix_forward_(std::move(prefix_forward)), backward_multiplier_(backward_multiplier) {
    if (prefix_forward_.empty()) throw std::invalid_argument("CostModel: empty");
    for (std::size_t k = 0; k < prefix_forward_.size(); ++k) {
      if (!(prefix_forward_[k] > 0.0)) throw std::invalid_argument("CostModel: costs must be positive");
      if (k > 0 && !(prefix_forward_[k] > prefix_forward_[k - 1]))
        throw std::invalid_argument("CostModel: costs must increase with depth");
    }
  }

  static CostModel from_shape(const NetShape& shape) {
    std::vector<double> c;
    for (std::size_t k = 1; k <= shape.depth; ++k)
      c.push_back(static_cast<double>(flop_count_prefix(shape, k, 1, false)));
    return CostModel(std::move(c));
  }

  std::size_t depth() const { return prefix_forward_.size(); }
  double forward(std::size_t k) const { return prefix_forward_.at(k - 1); }
  double training_step(std::size_t k, std::size_t batch_size) const {
    return forward(k) * (1.0 + backward_multiplier_) * static_cast<double>(batch_size);
  }

 private:
  std::vector<double> prefix_forward_;
  double backward_multiplier_;
};

struct TrainingCost {
  double flops = 0.0;
  double full_model_flops = 0.0;
  double ratio = 0.0;  // flops / full_model_flops
};

// Expected cost of `steps` FlexTrain steps versus the same steps on the full model.
inline TrainingCost expected_training_cost(const ActivationDistribution& pi, const CostModel& cost,
                                           std::size_t steps, std::size_t batch_size) {
  if (pi.depth() != cost.depth()) throw std::invalid_argument("expected_training_cost: depth mismatch");
  double per_step = 0.0;
  for (std::size_t k = 1; k <= pi.depth(); ++k) per_step += pi.prob(k) * cost.training_step(k, batch_size);
  TrainingCost out;
  out.flops = per_step * static_cast<double>(steps);
  out.full_model_flops = cost.training_step(cost.depth(), batch_size) * static_cast<double>(steps);
  out.ratio = out.flops / out.full_model_flops;
  return out;
}

// Cost of training one independent model per listed depth for `steps` each.
inline double independent_training_cost(std::span<const std::size_t> depths, const CostModel& cost,
                                        std::size_t steps, std::size_t batch_size) {
  double total = 0.0;
  for (std::size_t k : depths) total += cost.training_step(k, batch_size) * static_cast<double>(steps);
  return total;
}

}  // namespace flextrain
