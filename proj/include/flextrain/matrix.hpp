#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace flextrain {

// Dense row-major matrix of doubles. Rows are samples throughout the library.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

namespace detail {

// y[b, o] = sum_i x[b, i] * w[o, i] + bias[o]
inline void dense_forward(const Matrix& x, std::span<const double> w, std::span<const double> bias,
                          std::size_t out, Matrix& y) {
  const std::size_t in = x.cols;
  y = Matrix(x.rows, out);
  for (std::size_t b = 0; b < x.rows; ++b) {
    const double* xr = x.data.data() + b * in;
    double* yr = y.data.data() + b * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = w.data() + o * in;
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      yr[o] = acc + bias[o];
    }
  }
}

// Accumulates dW += dY^T X and db += colsum(dY); writes dX = dY W when dx != nullptr.
inline void dense_backward(const Matrix& x, std::span<const double> w, const Matrix& dy,
                           std::span<double> dw, std::span<double> db, Matrix* dx) {
  const std::size_t in = x.cols;
  const std::size_t out = dy.cols;
  if (dx != nullptr) *dx = Matrix(x.rows, in);
  for (std::size_t b = 0; b < x.rows; ++b) {
    const double* xr = x.data.data() + b * in;
    const double* gr = dy.data.data() + b * out;
    double* dxr = dx != nullptr ? dx->data.data() + b * in : nullptr;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = gr[o];
      if (g == 0.0) continue;
      db[o] += g;
      double* dwr = dw.data() + o * in;
      const double* wr = w.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) dwr[i] += g * xr[i];
      if (dxr != nullptr)
        for (std::size_t i = 0; i < in; ++i) dxr[i] += g * wr[i];
    }
  }
}

}  // namespace detail
}  // namespace flextrain
