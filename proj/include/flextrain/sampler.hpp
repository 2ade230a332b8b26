#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flextrain/nn.hpp"
#include "flextrain/rng.hpp"

namespace flextrain {

// pi = [pi_1 .. pi_K]; probs()[k-1] is the probability of training prefix k.
class ActivationDistribution {
 public:
  static constexpr double kLoadTolerance = 1e-9;

  ActivationDistribution() = default;

  // Validates and, when the sum is within kLoadTolerance of 1, renormalizes.
  explicit ActivationDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) throw std::invalid_argument("ActivationDistribution: empty");
    double sum = 0.0;
    for (double p : probs_) {
      if (!std::isfinite(p) || p < 0.0)
        throw std::invalid_argument("ActivationDistribution: probabilities must be finite and >= 0");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kLoadTolerance)
      throw std::invalid_argument("ActivationDistribution: probabilities sum to " + std::to_string(sum));
    if (sum != 1.0)
      for (double& p : probs_) p /= sum;
  }

  static ActivationDistribution one_hot(std::size_t depth, std::size_t k) {
    if (k < 1 || k > depth) throw std::out_of_range("one_hot: depth out of range");
    std::vector<double> p(depth, 0.0);
    p[k - 1] = 1.0;
    return ActivationDistribution(std::move(p));
  }

  // Accepts (depth, probability) pairs; unlisted depths get zero mass.
  static ActivationDistribution from_pairs(std::size_t depth,
                                           const std::vector<std::pair<std::size_t, double>>& pairs) {
    std::vector<double> p(depth, 0.0);
    for (const auto& [k, prob] : pairs) {
      if (k < 1 || k > depth) throw std::out_of_range("from_pairs: depth out of range");
      p[k - 1] += prob;
    }
    return ActivationDistribution(std::move(p));
  }

  std::size_t depth() const { return probs_.size(); }
  std::span<const double> probs() const { return probs_; }
  double prob(std::size_t k) const { return probs_.at(k - 1); }

  // Depths with nonzero probability, ascending.
  std::vector<std::size_t> support() const {
    std::vector<std::size_t> s;
    for (std::size_t k = 1; k <= probs_.size(); ++k)
      if (probs_[k - 1] > 0.0) s.push_back(k);
    return s;
  }

  bool degenerate() const { return support().size() == 1; }

 private:
  std::vector<double> probs_;
};

// Inverse-CDF draw of a depth in 1..K. A distribution with a single support
// point consumes no randomness.
inline std::size_t sample_config(const ActivationDistribution& pi, Rng& rng) {
  const auto probs = pi.probs();
  if (probs.empty()) throw std::invalid_argument("sample_config: empty distribution");
  const auto support = pi.support();
  if (support.size() == 1) return support.front();
  const double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t k = 1; k <= probs.size(); ++k) {
    cum += probs[k - 1];
    if (u < cum) return k;
  }
  return support.back();
}

// A_k: parameters of pre, blocks 1..k and head.
inline std::size_t prefix_param_count(const NetShape& shape, std::size_t k) {
  if (k < 1 || k > shape.depth) throw std::out_of_range("prefix_param_count: depth out of range");
  const std::size_t h = shape.hidden_dim;
  const std::size_t pre = shape.input_dim * h + h;
  const std::size_t block = 2 * (h * h + h);
  const std::size_t head = h * shape.num_classes + shape.num_classes;
  return pre + k * block + head;
}

inline std::size_t prefix_param_count(const ResidualNet& net, std::size_t k) {
  return prefix_param_count(net.shape(), k);
}

inline std::vector<std::size_t> prefix_param_counts(const NetShape& shape) {
  std::vector<std::size_t> out;
  for (std::size_t k = 1; k <= shape.depth; ++k) out.push_back(prefix_param_count(shape, k));
  return out;
}

// r = sum_k pi_k A_k / A_K over an arbitrary increasing count table.
inline double expected_param_ratio(const ActivationDistribution& pi, std::span<const double> counts) {
  if (counts.size() != pi.depth())
    throw std::invalid_argument("expected_param_ratio: count table length differs from K");
  double acc = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) acc += pi.probs()[k] * counts[k];
  return acc / counts.back();
}

inline double expected_param_ratio(const ActivationDistribution& pi, const NetShape& shape) {
  if (pi.depth() != shape.depth) throw std::invalid_argument("expected_param_ratio: pi length differs from K");
  std::vector<double> counts;
  for (std::size_t c : prefix_param_counts(shape)) counts.push_back(static_cast<double>(c));
  return expected_param_ratio(pi, counts);
}

inline double expected_param_ratio(const ActivationDistribution& pi, const ResidualNet& net) {
  return expected_param_ratio(pi, net.shape());
}

struct DepthChoice {
  std::size_t depth = 1;
  bool over_budget = false;  // even A_1 exceeds fraction * A
};

// Largest k with A_k <= fraction * A, clamped to 1.
inline DepthChoice fraction_to_depth(const NetShape& shape, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::out_of_range("fraction_to_depth: fraction must be in (0, 1]");
  const auto total = static_cast<double>(prefix_param_count(shape, shape.depth));
  const double budget = fraction * total;
  DepthChoice choice{1, true};
  for (std::size_t k = 1; k <= shape.depth; ++k) {
    if (static_cast<double>(prefix_param_count(shape, k)) <= budget) {
      choice = {k, false};
    } else {
      break;
    }
  }
  if (fraction == 1.0) choice = {shape.depth, false};
  return choice;
}

inline DepthChoice fraction_to_depth(const ResidualNet& net, double fraction) {
  return fraction_to_depth(net.shape(), fraction);
}

}  // namespace flextrain
