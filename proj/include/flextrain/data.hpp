#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flextrain/error.hpp"
#include "flextrain/matrix.hpp"
#include "flextrain/rng.hpp"

namespace flextrain {

struct Dataset {
  Matrix features;  // n x d
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string split = "train";
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols; }
  bool empty() const { return labels.empty(); }

  void validate() const {
    if (labels.empty()) throw std::invalid_argument("Dataset: no samples");
    if (features.rows != labels.size()) throw std::invalid_argument("Dataset: feature/label count mismatch");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
        throw std::invalid_argument("Dataset: label out of range");
    for (double v : features.data)
      if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite feature");
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> c(num_classes, 0);
    for (int y : labels) ++c[static_cast<std::size_t>(y)];
    return c;
  }
};

// Gathers rows [idx] into a batch.
inline void gather(const Dataset& d, std::span<const std::size_t> idx, Matrix& x, std::vector<int>& y) {
  x = Matrix(idx.size(), d.dim());
  y.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = d.features.row(idx[i]);
    std::copy(src.begin(), src.end(), x.row(i).begin());
    y[i] = d.labels[idx[i]];
  }
}

inline Dataset subset(const Dataset& d, std::span<const std::size_t> idx) {
  Dataset out;
  gather(d, idx, out.features, out.labels);
  out.num_classes = d.num_classes;
  out.split = d.split;
  out.provenance = d.provenance + "[subset:" + std::to_string(idx.size()) + "]";
  return out;
}

// Arm c of a C-arm spiral at parameter t in [0, 1): radius t, angle
// `turns` full turns plus the arm offset.
inline constexpr double kSpiralTurns = 1.5;

inline std::pair<double, double> spiral_point(std::size_t arm, std::size_t num_arms, double t,
                                              double turns = kSpiralTurns) {
  const double angle = 2.0 * std::numbers::pi *
                       (turns * t + static_cast<double>(arm) / static_cast<double>(num_arms));
  return {t * std::cos(angle), t * std::sin(angle)};
}

// Interleaved 2-D spirals; t ~ U(0,1) per point, isotropic Gaussian noise on
// the coordinates. Samples are ordered class by class.
inline Dataset gen_spiral(std::size_t n_per_class, std::size_t num_classes, double noise_std,
                          std::uint64_t seed, double turns = kSpiralTurns) {
  if (n_per_class < 1 || num_classes < 1) throw std::invalid_argument("gen_spiral: sizes must be >= 1");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("gen_spiral: noise_std must be >= 0");
  if (!(turns > 0.0)) throw std::invalid_argument("gen_spiral: turns must be > 0");
  Rng rng(seed);
  Dataset d;
  d.num_classes = num_classes;
  d.features = Matrix(n_per_class * num_classes, 2);
  d.labels.resize(n_per_class * num_classes);
  d.provenance = "spiral(seed=" + std::to_string(seed) + ")";
  std::size_t row = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
      const double t = rng.uniform();
      auto [px, py] = spiral_point(c, num_classes, t, turns);
      const double nx = rng.normal();
      const double ny = rng.normal();
      d.features(row, 0) = px + noise_std * nx;
      d.features(row, 1) = py + noise_std * ny;
      d.labels[row] = static_cast<int>(c);
    }
  }
  return d;
}

// Centers drawn uniformly in a cube, redrawn until every pair is at least
// `separation` apart.
inline Matrix blob_centers(std::size_t num_classes, std::size_t dim, double separation, std::uint64_t seed) {
  if (num_classes < 1 || dim < 1) throw std::invalid_argument("gen_blobs: sizes must be >= 1");
  if (!(separation >= 0.0)) throw std::invalid_argument("gen_blobs: separation must be >= 0");
  Rng rng(seed);
  const double side = std::max(1.0, separation) * std::cbrt(static_cast<double>(num_classes)) * 2.0;
  constexpr int kMaxAttempts = 1000;
  Matrix centers(num_classes, dim);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    for (auto& v : centers.data) v = (rng.uniform() - 0.5) * side;
    bool ok = true;
    for (std::size_t a = 0; a < num_classes && ok; ++a)
      for (std::size_t b = a + 1; b < num_classes && ok; ++b) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          const double diff = centers(a, j) - centers(b, j);
          d2 += diff * diff;
        }
        ok = std::sqrt(d2) >= separation;
      }
    if (ok) return centers;
  }
  throw std::invalid_argument("gen_blobs: could not place centers at the requested separation");
}

// Unit-variance Gaussian clusters around the given centers.
inline Dataset sample_blobs(const Matrix& centers, std::size_t n_per_class, std::uint64_t seed) {
  if (n_per_class < 1) throw std::invalid_argument("gen_blobs: n_per_class must be >= 1");
  Rng rng(seed);
  Dataset d;
  d.num_classes = centers.rows;
  d.features = Matrix(n_per_class * centers.rows, centers.cols);
  d.labels.resize(n_per_class * centers.rows);
  d.provenance = "blobs(seed=" + std::to_string(seed) + ")";
  std::size_t row = 0;
  for (std::size_t c = 0; c < centers.rows; ++c)
    for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
      for (std::size_t j = 0; j < centers.cols; ++j) d.features(row, j) = centers(c, j) + rng.normal();
      d.labels[row] = static_cast<int>(c);
    }
  return d;
}

inline Dataset gen_blobs(std::size_t n_per_class, std::size_t num_classes, std::size_t dim, double separation,
                         std::uint64_t seed) {
  return sample_blobs(blob_centers(num_classes, dim, separation, seed), n_per_class, derive_seed(seed, 1));
}

// ---- IDX ----

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IdxError(IdxErrorKind::kOpen, "idx: cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::span<const unsigned char> payload;
};

// Unsigned-byte IDX only: magic 0x00 0x00 0x08 <ndims>.
inline IdxArray parse_idx(const std::vector<unsigned char>& bytes, const std::string& what) {
  if (bytes.size() < 4) throw IdxError(IdxErrorKind::kTruncated, "idx: " + what + " shorter than its magic");
  if (bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 || bytes[3] == 0)
    throw IdxError(IdxErrorKind::kBadMagic, "idx: " + what + " has bad magic number");
  const std::size_t ndims = bytes[3];
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) throw IdxError(IdxErrorKind::kTruncated, "idx: " + what + " header truncated");
  IdxArray a;
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    a.dims.push_back(be32(bytes.data() + 4 + 4 * i));
    count *= a.dims.back();
  }
  if (bytes.size() - header < count)
    throw IdxError(IdxErrorKind::kTruncated, "idx: " + what + " payload truncated");
  a.payload = std::span<const unsigned char>(bytes.data() + header, count);
  return a;
}

}  // namespace detail

// Loads an IDX image file (N x d1 x ... ) and its IDX label file (N).
// Pixels are scaled by 1/255; num_classes = max label + 1 unless given.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::size_t num_classes = 0) {
  const auto img_bytes = detail::read_file(images_path);
  const auto lbl_bytes = detail::read_file(labels_path);
  const auto images = detail::parse_idx(img_bytes, "image file");
  const auto labels = detail::parse_idx(lbl_bytes, "label file");
  if (images.dims.size() < 2) throw IdxError(IdxErrorKind::kBadMagic, "idx: image file must have >= 2 dims");
  if (labels.dims.size() != 1) throw IdxError(IdxErrorKind::kBadMagic, "idx: label file must have 1 dim");
  if (images.dims[0] != labels.dims[0])
    throw IdxError(IdxErrorKind::kCountMismatch, "idx: " + std::to_string(images.dims[0]) + " images but " +
                                                     std::to_string(labels.dims[0]) + " labels");
  const std::size_t n = images.dims[0];
  std::size_t d = 1;
  for (std::size_t i = 1; i < images.dims.size(); ++i) d *= images.dims[i];
  Dataset out;
  out.features = Matrix(n, d);
  for (std::size_t i = 0; i < n * d; ++i) out.features.data[i] = static_cast<double>(images.payload[i]) / 255.0;
  out.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = labels.payload[i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.num_classes = num_classes != 0 ? num_classes : static_cast<std::size_t>(max_label) + 1;
  out.provenance = images_path;
  return out;
}

// CSV with header x0,...,x{d-1},label.
inline Dataset load_csv(const std::string& path, std::size_t num_classes = 0) {
  std::ifstream is(path);
  if (!is) throw IoError("csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line)) throw IoError("csv: '" + path + "' is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header.back() != "label") throw IoError("csv: header must end with 'label'");
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j)
    if (header[j] != "x" + std::to_string(j)) throw IoError("csv: expected column x" + std::to_string(j));
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = p + line.size();
    for (std::size_t j = 0; j <= d; ++j) {
      if (j == d) {
        int y = 0;
        auto [q, ec] = std::from_chars(p, end, y);
        if (ec != std::errc() || q != end) throw IoError("csv: bad label on line " + std::to_string(lineno));
        labels.push_back(y);
      } else {
        double v = 0.0;
        auto [q, ec] = std::from_chars(p, end, v);
        if (ec != std::errc() || q == end || *q != ',')
          throw IoError("csv: bad value on line " + std::to_string(lineno));
        values.push_back(v);
        p = q + 1;
      }
    }
  }
  Dataset out;
  out.features = Matrix(labels.size(), d);
  out.features.data = std::move(values);
  out.labels = std::move(labels);
  int max_label = 0;
  for (int y : out.labels) max_label = std::max(max_label, y);
  out.num_classes = num_classes != 0 ? num_classes : static_cast<std::size_t>(max_label) + 1;
  out.provenance = path;
  out.validate();
  return out;
}

// ---- partitions ----

enum class PartitionMethod { kIid, kDirichlet, kShards };

struct PartitionPlan {
  PartitionMethod method = PartitionMethod::kIid;
  double parameter = 0.0;  // Dirichlet alpha or shards per device
  std::vector<std::vector<std::size_t>> devices;

  std::size_t num_devices() const { return devices.size(); }
};

// Random permutation cut into contiguous chunks; the first n % J devices get one extra.
inline PartitionPlan partition_iid(const Dataset& d, std::size_t num_devices, std::uint64_t seed) {
  const std::size_t n = d.size();
  if (num_devices == 0 || num_devices > n) throw std::invalid_argument("partition_iid: need 1 <= J <= n");
  Rng rng(seed);
  const auto perm = rng.permutation(n);
  PartitionPlan plan;
  plan.method = PartitionMethod::kIid;
  plan.devices.resize(num_devices);
  const std::size_t base = n / num_devices;
  const std::size_t extra = n % num_devices;
  std::size_t pos = 0;
  for (std::size_t j = 0; j < num_devices; ++j) {
    const std::size_t len = base + (j < extra ? 1 : 0);
    plan.devices[j].assign(perm.begin() + static_cast<long>(pos), perm.begin() + static_cast<long>(pos + len));
    pos += len;
  }
  return plan;
}

// Label skew: for every class, device shares ~ Dirichlet(alpha * 1_J). Empty
// devices then take one sample each from the currently largest device.
inline PartitionPlan partition_dirichlet(const Dataset& d, std::size_t num_devices, double alpha,
                                         std::uint64_t seed) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("partition_dirichlet: alpha must be > 0");
  const std::size_t n = d.size();
  if (num_devices == 0 || num_devices > n) throw std::invalid_argument("partition_dirichlet: need 1 <= J <= n");
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> by_class(d.num_classes);
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(d.labels[i])].push_back(i);
  PartitionPlan plan;
  plan.method = PartitionMethod::kDirichlet;
  plan.parameter = alpha;
  plan.devices.resize(num_devices);
  for (auto& members : by_class) {
    rng.shuffle(std::span<std::size_t>(members));
    const auto shares = rng.dirichlet(num_devices, alpha);
    // Cut points from the cumulative shares.
    double cum = 0.0;
    std::size_t start = 0;
    for (std::size_t j = 0; j < num_devices; ++j) {
      cum += shares[j];
      std::size_t stop = j + 1 == num_devices
                             ? members.size()
                             : std::min(members.size(), static_cast<std::size_t>(std::llround(cum * members.size())));
      stop = std::max(stop, start);
      plan.devices[j].insert(plan.devices[j].end(), members.begin() + static_cast<long>(start),
                             members.begin() + static_cast<long>(stop));
      start = stop;
    }
  }
  for (std::size_t j = 0; j < num_devices; ++j) {
    if (!plan.devices[j].empty()) continue;
    auto donor = std::max_element(plan.devices.begin(), plan.devices.end(),
                                  [](const auto& a, const auto& b) { return a.size() < b.size(); });
    plan.devices[j].push_back(donor->back());
    donor->pop_back();
  }
  for (auto& dev : plan.devices) std::sort(dev.begin(), dev.end());
  return plan;
}

// Sort by label, cut into J * shards_per_device equal shards, deal shards at random.
inline PartitionPlan partition_shards(const Dataset& d, std::size_t num_devices, std::size_t shards_per_device,
                                      std::uint64_t seed) {
  const std::size_t n = d.size();
  const std::size_t num_shards = num_devices * shards_per_device;
  if (num_devices == 0 || shards_per_device == 0 || num_shards > n)
    throw std::invalid_argument("partition_shards: need 1 <= J * shards <= n");
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d.labels[a] < d.labels[b]; });
  const auto shard_perm = rng.permutation(num_shards);
  PartitionPlan plan;
  plan.method = PartitionMethod::kShards;
  plan.parameter = static_cast<double>(shards_per_device);
  plan.devices.resize(num_devices);
  for (std::size_t s = 0; s < num_shards; ++s) {
    const std::size_t shard = shard_perm[s];
    const std::size_t lo = shard * n / num_shards;
    const std::size_t hi = (shard + 1) * n / num_shards;
    auto& dev = plan.devices[s / shards_per_device];
    dev.insert(dev.end(), order.begin() + static_cast<long>(lo), order.begin() + static_cast<long>(hi));
  }
  for (auto& dev : plan.devices) std::sort(dev.begin(), dev.end());
  return plan;
}

// Disjoint, every list nonempty, optionally covering all of [0, n).
inline bool is_partition(const PartitionPlan& plan, std::size_t n, bool require_cover) {
  std::vector<char> seen(n, 0);
  std::size_t total = 0;
  for (const auto& dev : plan.devices) {
    if (dev.empty()) return false;
    for (std::size_t i : dev) {
      if (i >= n || seen[i]) return false;
      seen[i] = 1;
      ++total;
    }
  }
  return !require_cover || total == n;
}

}  // namespace flextrain
