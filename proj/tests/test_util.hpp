#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "flextrain/flextrain.hpp"

namespace ft_test {

using namespace flextrain;

// Fills every parameter with N(0, sd) so fc2 and the biases are non-trivial.
inline void randomize(ResidualNet& net, std::uint64_t seed, double sd = 0.5) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist(0.0, sd);
  for_each_array(net.mutable_params(), [&](const auto& a) {
    for (auto& v : a.values) v = dist(gen);
  });
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (auto& v : m.data) v = dist(gen);
  return m;
}

inline std::vector<double> flatten(const Parameters& p) {
  std::vector<double> out;
  for_each_array(p, [&](const auto& a) { out.insert(out.end(), a.values.begin(), a.values.end()); });
  return out;
}

inline std::vector<std::string> array_names(const Parameters& p) {
  std::vector<std::string> out;
  for_each_array(p, [&](const auto& a) {
    for (std::size_t i = 0; i < a.values.size(); ++i) out.push_back(a.name);
  });
  return out;
}

// Central differences of `loss` over every parameter of `net`.
inline std::vector<double> finite_difference(ResidualNet& net, const std::function<double(const ResidualNet&)>& loss,
                                             double step = 1e-5) {
  std::vector<double> out;
  std::vector<std::span<double>> arrays;
  for_each_array(net.mutable_params(), [&](const auto& a) { arrays.push_back(a.values); });
  for (auto values : arrays) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + step;
      const double up = loss(net);
      values[i] = orig - step;
      const double down = loss(net);
      values[i] = orig;
      out.push_back((up - down) / (2.0 * step));
    }
  }
  return out;
}

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

inline double squared_distance(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return s;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("flextrain_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

template <typename T>
T median(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

}  // namespace ft_test
