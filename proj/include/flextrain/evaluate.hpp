#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "flextrain/data.hpp"
#include "flextrain/losses.hpp"
#include "flextrain/nn.hpp"

namespace flextrain {

inline constexpr std::size_t kEvalChunk = 512;

// Index of the largest logit; ties go to the lowest class index.
inline std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

// Argmax accuracy of prefix depth k.
inline double evaluate_prefix(const ResidualNet& net, const Dataset& data, std::size_t k) {
  if (data.empty()) throw std::invalid_argument("evaluate_prefix: empty dataset");
  if (k < 1 || k > net.depth()) throw std::out_of_range("evaluate_prefix: depth out of range");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  Matrix x;
  std::vector<int> y;
  for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
    const std::size_t stop = std::min(data.size(), start + kEvalChunk);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    gather(data, idx, x, y);
    const Matrix logits = predict_logits(net, x, k);
    for (std::size_t b = 0; b < y.size(); ++b)
      if (argmax_row(logits.row(b)) == static_cast<std::size_t>(y[b])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// Mean cross-entropy of prefix depth k over the whole dataset.
inline double evaluate_loss(const ResidualNet& net, const Dataset& data, std::size_t k) {
  if (data.empty()) throw std::invalid_argument("evaluate_loss: empty dataset");
  double sum = 0.0;
  std::vector<std::size_t> idx;
  Matrix x;
  std::vector<int> y;
  for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
    const std::size_t stop = std::min(data.size(), start + kEvalChunk);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    gather(data, idx, x, y);
    sum += base_loss(predict_logits(net, x, k), y).value.base_term * static_cast<double>(y.size());
  }
  return sum / static_cast<double>(data.size());
}

}  // namespace flextrain
