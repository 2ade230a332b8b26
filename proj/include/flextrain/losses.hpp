#pragma once

// Softmax cross-entropy and the two feature auto-distillation losses.
//
// Both distillation losses add beta * mean_b ||f_student - stopgrad(f_teacher)||^2
// and always treat the DEEPER feature as the detached teacher:
//   centralized: student f_k,   teacher f_k'  (k <= k')
//   federated:   student f_k-1, teacher f_k   (the device's own depth k)

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "flextrain/nn.hpp"

namespace flextrain {

struct LossValue {
  double total = 0.0;
  double base_term = 0.0;
  double distill_term = 0.0;  // before beta weighting
  double beta = 0.0;
};

struct LogitLoss {
  LossValue value;
  Matrix grad_logits;
};

struct LossAndGrads {
  LossValue value;
  GradientSet grads;
};

// Mean softmax cross-entropy over the batch and its gradient at the logits.
inline LogitLoss base_loss(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows != labels.size()) throw std::invalid_argument("base_loss: batch size mismatch");
  if (logits.rows == 0) throw std::invalid_argument("base_loss: empty batch");
  const std::size_t c = logits.cols;
  const double inv_b = 1.0 / static_cast<double>(logits.rows);
  LogitLoss out;
  out.grad_logits = Matrix(logits.rows, c);
  double sum = 0.0;
  for (std::size_t b = 0; b < logits.rows; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw std::out_of_range("base_loss: label " + std::to_string(y) + " out of range");
    auto z = logits.row(b);
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double v : z) denom += std::exp(v - zmax);
    const double log_denom = std::log(denom);
    sum += log_denom - (z[static_cast<std::size_t>(y)] - zmax);
    auto g = out.grad_logits.row(b);
    for (std::size_t j = 0; j < c; ++j) g[j] = std::exp(z[j] - zmax - log_denom) * inv_b;
    g[static_cast<std::size_t>(y)] -= inv_b;
  }
  out.value.base_term = sum * inv_b;
  out.value.total = out.value.base_term;
  return out;
}

namespace detail {

// mean_b ||student - teacher||^2 and its gradient w.r.t. the student, scaled by beta.
inline double feature_penalty(const Matrix& student, const Matrix& teacher, double beta, Matrix* grad) {
  const double inv_b = 1.0 / static_cast<double>(student.rows);
  double sum = 0.0;
  if (grad != nullptr) *grad = Matrix(student.rows, student.cols);
  for (std::size_t i = 0; i < student.data.size(); ++i) {
    const double d = student.data[i] - teacher.data[i];
    sum += d * d;
    if (grad != nullptr) grad->data[i] = 2.0 * beta * inv_b * d;
  }
  return sum * inv_b;
}

inline LossValue combine(double base, double distill, double beta) {
  return {base + beta * distill, base, distill, beta};
}

}  // namespace detail

// Centralized distillation loss: CE at depth k plus beta * ||f_k - sg(f_k')||^2. One forward
// pass at depth k' provides both features.
inline LossAndGrads centralized_distill_loss(const ResidualNet& net, const Matrix& x,
                                             std::span<const int> labels, std::size_t k,
                                             std::size_t k_prime, double beta) {
  if (k_prime < k) throw std::invalid_argument("centralized_distill_loss: k' must be >= k");
  if (beta < 0.0) throw std::invalid_argument("centralized_distill_loss: beta must be >= 0");
  if (k < 1 || k_prime > net.depth()) throw std::out_of_range("centralized_distill_loss: depth out of range");
  const ForwardTrace teacher = forward_prefix(net, x, k_prime);
  const ForwardTrace student = k == k_prime ? teacher : truncate_trace(teacher, k);
  LogitLoss ce = base_loss(student.logits, labels);
  std::vector<FeatureGrad> extra;
  double distill = 0.0;
  if (k != k_prime) {
    Matrix g;
    distill = detail::feature_penalty(student.feature(k), teacher.feature(k_prime), beta,
                                      beta != 0.0 ? &g : nullptr);
    if (beta != 0.0) extra.push_back({k, std::move(g)});
  }
  return {detail::combine(ce.value.base_term, distill, beta),
          backward_prefix(net, student, ce.grad_logits, extra)};
}

// Federated device loss at depth k: CE at depth k plus
// beta * ||sg(f_k) - f_{k-1}||^2; the penalty is skipped at k = 1.
inline LossAndGrads federated_distill_loss(const ResidualNet& net, const Matrix& x,
                                           std::span<const int> labels, std::size_t k, double beta) {
  if (beta < 0.0) throw std::invalid_argument("federated_distill_loss: beta must be >= 0");
  const ForwardTrace trace = forward_prefix(net, x, k);
  LogitLoss ce = base_loss(trace.logits, labels);
  std::vector<FeatureGrad> extra;
  double distill = 0.0;
  if (k >= 2) {
    Matrix g;
    distill = detail::feature_penalty(trace.feature(k - 1), trace.feature(k), beta,
                                      beta != 0.0 ? &g : nullptr);
    if (beta != 0.0) extra.push_back({k - 1, std::move(g)});
  }
  return {detail::combine(ce.value.base_term, distill, beta),
          backward_prefix(net, trace, ce.grad_logits, extra)};
}

// CE-only loss and gradients at depth k.
inline LossAndGrads plain_loss(const ResidualNet& net, const Matrix& x, std::span<const int> labels,
                               std::size_t k) {
  const ForwardTrace trace = forward_prefix(net, x, k);
  LogitLoss ce = base_loss(trace.logits, labels);
  return {ce.value, backward_prefix(net, trace, ce.grad_logits)};
}

}  // namespace flextrain
