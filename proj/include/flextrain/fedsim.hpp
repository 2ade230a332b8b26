#pragma once

// Federated FlexTrain simulator with the FedSmall and FedClass baselines.
//
// Each device owns a random stream and momentum buffers that persist across
// rounds; only prefix weights travel between server and devices. Within a
// round devices are independent (optionally run on worker threads) and every
// cross-device reduction iterates in ascending device_id, so results do not
// depend on execution order.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <optional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "flextrain/checkpoint.hpp"
#include "flextrain/data.hpp"
#include "flextrain/evaluate.hpp"
#include "flextrain/nn.hpp"
#include "flextrain/report.hpp"
#include "flextrain/sampler.hpp"
#include "flextrain/trainer.hpp"

namespace flextrain {

struct DeviceProfile {
  std::size_t device_id = 0;
  double capacity_ratio = 1.0;  // r_j
  std::size_t depth = 1;        // k_j
  bool over_budget = false;     // r_j below A_1 / A; clamped to depth 1
  Dataset data;
  std::uint64_t seed = 0;
};

enum class AggregationMode { kPerLayer, kPaddedAverage };
enum class Weighting { kUniform, kDatasetSize };

struct FederationConfig {
  std::size_t rounds = 1;
  std::size_t local_epochs = 1;
  std::size_t devices_per_round = 0;  // 0: every device, every round
  AggregationMode aggregation = AggregationMode::kPerLayer;
  Weighting weighting = Weighting::kUniform;
  TrainConfig local;  // lr, momentum, weight decay, batch size, beta
  std::uint64_t seed = 0;  // server stream (device sampling)
  std::size_t threads = 1;
  std::vector<std::size_t> eval_depths;  // extra depths reported each round

  void validate(std::size_t num_devices) const {
    if (local_epochs < 1) throw ConfigError("federation: local_epochs must be >= 1");
    if (devices_per_round > num_devices) throw ConfigError("federation: devices_per_round exceeds device count");
    if (threads < 1) throw ConfigError("federation: threads must be >= 1");
  }
};

// Capability ratios of the reference 20-device population
// (rows: ratio, device count).
inline constexpr std::pair<double, std::size_t> kReferenceCapabilities[] = {
    {0.052, 2}, {0.117, 2}, {0.203, 2}, {0.246, 2}, {0.483, 2}, {0.655, 2}, {0.827, 2}, {1.0, 6}};

// J ratios drawn evenly (by quantile) from the reference population, ascending.
inline std::vector<double> reference_capacities(std::size_t num_devices) {
  std::vector<double> population;
  for (const auto& [ratio, count] : kReferenceCapabilities) population.insert(population.end(), count, ratio);
  std::vector<double> out;
  for (std::size_t i = 0; i < num_devices; ++i) {
    const std::size_t idx = ((2 * i + 1) * population.size()) / (2 * num_devices);
    out.push_back(population[std::min(idx, population.size() - 1)]);
  }
  return out;
}

// Builds profiles from a partition; k_j = fraction_to_depth(r_j).
inline std::vector<DeviceProfile> make_devices(const NetShape& shape, const Dataset& data, const PartitionPlan& plan,
                                               std::span<const double> capacities, std::uint64_t master_seed) {
  if (capacities.size() != plan.num_devices())
    throw std::invalid_argument("make_devices: one capacity per device required");
  std::vector<DeviceProfile> out;
  for (std::size_t j = 0; j < plan.num_devices(); ++j) {
    const DepthChoice dc = fraction_to_depth(shape, capacities[j]);
    DeviceProfile d;
    d.device_id = j;
    d.capacity_ratio = capacities[j];
    d.depth = dc.depth;
    d.over_budget = dc.over_budget;
    d.data = subset(data, plan.devices[j]);
    d.seed = derive_seed(master_seed, 1000 + j);
    out.push_back(std::move(d));
  }
  return out;
}

struct DeviceState {
  Rng rng;
  SgdState optimizer;
  bool initialized = false;
};

struct LocalResult {
  ResidualNet weights;
  double mean_loss = 0.0;
  std::size_t steps = 0;
};

namespace detail {

inline LocalResult local_train(const Dataset& data, std::uint64_t seed, ResidualNet prefix, const TrainConfig& cfg,
                               std::size_t local_epochs, DeviceState& state) {
  if (data.empty()) throw std::invalid_argument("local_update: empty local dataset");
  if (!state.initialized) {
    state.rng = Rng(seed);
    state.optimizer = SgdState(prefix.shape());
    state.initialized = true;
  }
  TrainConfig local = cfg;
  local.distill_mode = DistillMode::kFederated;
  TrainerState st;
  st.rng = state.rng;
  st.optimizer = std::move(state.optimizer);
  const std::size_t k = prefix.depth();
  double loss_sum = 0.0;
  std::size_t steps = 0;
  for (std::size_t e = 0; e < local_epochs; ++e) {
    const EpochLog log = run_epoch(prefix, data, local, e, st, [k](Rng&) { return k; });
    loss_sum += log.mean_total * static_cast<double>(log.steps);
    steps += log.steps;
  }
  state.rng = st.rng;
  state.optimizer = std::move(st.optimizer);
  return {std::move(prefix), steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0, steps};
}

}  // namespace detail

// Device update of a federated round: l epochs of mini-batch SGD on the device's
// data at its own depth, minimizing the federated distillation loss.
inline LocalResult local_update(const DeviceProfile& device, ResidualNet prefix, const TrainConfig& cfg,
                                std::size_t local_epochs, DeviceState& state) {
  if (prefix.depth() != device.depth)
    throw std::invalid_argument("local_update: prefix depth differs from device depth");
  return detail::local_train(device.data, device.seed, std::move(prefix), cfg, local_epochs, state);
}

struct DeviceUpdate {
  std::size_t device_id = 0;
  std::size_t depth = 0;
  std::size_t num_samples = 0;
  ResidualNet weights;  // depth-k prefix network
};

namespace detail {

inline const Dense& dense_at(const Parameters& p, std::size_t layer, int which) {
  if (layer == 0) return p.pre;
  if (layer == p.head_layer()) return p.head;
  return which == 0 ? p.blocks[layer - 1].fc1 : p.blocks[layer - 1].fc2;
}

inline Dense& dense_at(Parameters& p, std::size_t layer, int which) {
  return const_cast<Dense&>(dense_at(static_cast<const Parameters&>(p), layer, which));
}

// out = sum_i coeff_i * src_i, summed in list order.
inline void weighted_sum(Dense& out, const std::vector<const Dense*>& srcs, const std::vector<double>& coeffs) {
  std::fill(out.weight.begin(), out.weight.end(), 0.0);
  std::fill(out.bias.begin(), out.bias.end(), 0.0);
  for (std::size_t i = 0; i < srcs.size(); ++i) {
    for (std::size_t e = 0; e < out.weight.size(); ++e) out.weight[e] += coeffs[i] * srcs[i]->weight[e];
    for (std::size_t e = 0; e < out.bias.size(); ++e) out.bias[e] += coeffs[i] * srcs[i]->bias[e];
  }
}

}  // namespace detail

// Normalized aggregation coefficients over a set of contributors.
inline std::vector<double> aggregation_weights(std::span<const DeviceUpdate* const> contributors, Weighting w) {
  std::vector<double> raw;
  double total = 0.0;
  for (const auto* u : contributors) {
    raw.push_back(w == Weighting::kUniform ? 1.0 : static_cast<double>(u->num_samples));
    total += raw.back();
  }
  if (!(total > 0.0)) throw std::invalid_argument("aggregation_weights: contributors carry no weight");
  for (double& r : raw) r /= total;
  return raw;
}

// Server aggregation of heterogeneous-depth prefix updates.
//   per-layer: each layer is the weighted mean over the devices that trained
//              it (pre and head: everyone; block m: devices with k_j >= m);
//              untouched layers keep the server's weights.
//   padded:    each update is padded with the server's blocks beyond k_j,
//              then the padded models are averaged.
inline ResidualNet aggregate(const ResidualNet& server, std::vector<DeviceUpdate> updates, AggregationMode mode,
                             Weighting weighting) {
  if (updates.empty()) throw std::invalid_argument("aggregate: no updates");
  std::sort(updates.begin(), updates.end(),
            [](const DeviceUpdate& a, const DeviceUpdate& b) { return a.device_id < b.device_id; });
  for (const auto& u : updates) {
    if (u.depth < 1 || u.depth > server.depth() || u.weights.depth() != u.depth ||
        u.weights.shape().with_depth(server.depth()) != server.shape())
      throw std::invalid_argument("aggregate: update from device " + std::to_string(u.device_id) +
                                  " does not match the server prefix");
  }
  const Parameters& sp = server.params();
  Parameters out = sp;
  const std::size_t depth = server.depth();
  for (std::size_t layer = 0; layer <= depth + 1; ++layer) {
    std::vector<const DeviceUpdate*> contributors;
    std::vector<const Parameters*> sources;
    for (const auto& u : updates) {
      const bool trained = layer_active(layer, u.depth, depth);
      if (trained) {
        contributors.push_back(&u);
        sources.push_back(&u.weights.params());
      } else if (mode == AggregationMode::kPaddedAverage) {
        contributors.push_back(&u);
        sources.push_back(&sp);
      }
    }
    if (contributors.empty()) continue;
    const auto coeffs = aggregation_weights(contributors, weighting);
    for (int which = 0; which < ((layer == 0 || layer == depth + 1) ? 1 : 2); ++which) {
      std::vector<const Dense*> srcs;
      for (std::size_t i = 0; i < sources.size(); ++i) {
        // Updates index layers by their own (shorter) head position.
        const Parameters& p = *sources[i];
        const std::size_t src_layer = (layer == depth + 1 && sources[i] != &sp) ? p.head_layer() : layer;
        srcs.push_back(&detail::dense_at(p, src_layer, which));
      }
      detail::weighted_sum(detail::dense_at(out, layer, which), srcs, coeffs);
    }
  }
  return ResidualNet(server.shape(), std::move(out), server.seed());
}

struct RoundReport {
  std::size_t round = 0;
  std::vector<std::size_t> sampled;                           // ascending device ids
  std::vector<std::pair<std::size_t, double>> device_loss;    // (device_id, mean local loss)
  std::vector<std::pair<std::size_t, double>> depth_accuracy; // (k, held-out accuracy)
  std::vector<std::pair<std::size_t, std::size_t>> bytes_to_device;  // (device_id, bytes)
  double mean_device_accuracy = 0.0;
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;

  bool operator==(const RoundReport&) const = default;
};

struct FedResult {
  ResidualNet server;
  std::vector<RoundReport> reports;
};

namespace detail {

// FedAvg over heterogeneous depths. `depth_override` forces every device to
// one depth (FedSmall / FedClass); `beta_override` replaces the local beta.
inline FedResult run_fedavg(ResidualNet server, const std::vector<DeviceProfile>& devices, const Dataset& test,
                            const FederationConfig& fcfg, std::optional<std::size_t> depth_override,
                            std::optional<double> beta_override) {
  if (devices.empty()) throw std::invalid_argument("federation: no devices");
  fcfg.validate(devices.size());
  fcfg.local.validate(server.depth());
  std::vector<const DeviceProfile*> order;
  for (const auto& d : devices) order.push_back(&d);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->device_id < b->device_id; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (order[i]->device_id == order[i - 1]->device_id) throw std::invalid_argument("federation: duplicate device_id");

  auto depth_of = [&](const DeviceProfile& d) { return depth_override ? *depth_override : d.depth; };
  for (const auto* d : order)
    if (depth_of(*d) < 1 || depth_of(*d) > server.depth())
      throw std::invalid_argument("federation: device " + std::to_string(d->device_id) + " depth outside 1..K");

  TrainConfig local = fcfg.local;
  if (beta_override) local.beta = *beta_override;

  std::set<std::size_t> eval_set(fcfg.eval_depths.begin(), fcfg.eval_depths.end());
  for (const auto* d : order) eval_set.insert(depth_of(*d));

  Rng server_rng(fcfg.seed);
  std::vector<DeviceState> states(order.size());
  const std::size_t per_round = fcfg.devices_per_round == 0 ? order.size() : fcfg.devices_per_round;

  FedResult result{std::move(server), {}};
  for (std::size_t round = 0; round < fcfg.rounds; ++round) {
    std::vector<std::size_t> chosen;  // positions in `order`
    if (per_round == order.size()) {
      for (std::size_t i = 0; i < order.size(); ++i) chosen.push_back(i);
    } else {
      auto perm = server_rng.permutation(order.size());
      chosen.assign(perm.begin(), perm.begin() + static_cast<long>(per_round));
      std::sort(chosen.begin(), chosen.end());
    }

    std::vector<std::optional<LocalResult>> results(chosen.size());
    std::vector<std::exception_ptr> errors(chosen.size());
    auto work = [&](std::size_t slot) {
      const DeviceProfile& dev = *order[chosen[slot]];
      try {
        results[slot] = local_train(dev.data, dev.seed, extract_prefix(result.server, depth_of(dev)), local,
                                    fcfg.local_epochs, states[chosen[slot]]);
      } catch (...) {
        errors[slot] = std::current_exception();
      }
    };
    const std::size_t nthreads = std::min(fcfg.threads, chosen.size());
    if (nthreads <= 1) {
      for (std::size_t s = 0; s < chosen.size(); ++s) work(s);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < nthreads; ++t)
        pool.emplace_back([&, t] {
          for (std::size_t s = t; s < chosen.size(); s += nthreads) work(s);
        });
    }
    for (std::size_t s = 0; s < chosen.size(); ++s) {
      if (!errors[s]) continue;
      const std::string who = "device " + std::to_string(order[chosen[s]]->device_id) + ": ";
      try {
        std::rethrow_exception(errors[s]);
      } catch (const DivergenceError& e) {
        throw DivergenceError(who + e.what());
      } catch (const std::exception& e) {
        throw Error(who + e.what());
      }
    }

    RoundReport rep;
    rep.round = round + 1;
    std::vector<DeviceUpdate> updates;
    for (std::size_t s = 0; s < chosen.size(); ++s) {
      const DeviceProfile& dev = *order[chosen[s]];
      const std::size_t k = depth_of(dev);
      const std::size_t bytes = checkpoint_size(results[s]->weights);
      rep.sampled.push_back(dev.device_id);
      rep.device_loss.emplace_back(dev.device_id, results[s]->mean_loss);
      rep.bytes_to_device.emplace_back(dev.device_id, bytes);
      rep.bytes_down += bytes;
      rep.bytes_up += bytes;
      updates.push_back({dev.device_id, k, dev.data.size(), std::move(results[s]->weights)});
    }
    result.server = aggregate(result.server, std::move(updates), fcfg.aggregation, fcfg.weighting);

    std::map<std::size_t, double> acc;
    for (std::size_t k : eval_set) acc[k] = evaluate_prefix(result.server, test, k);
    rep.depth_accuracy.assign(acc.begin(), acc.end());
    double sum = 0.0;
    for (const auto* d : order) sum += acc.at(depth_of(*d));
    rep.mean_device_accuracy = sum / static_cast<double>(order.size());
    result.reports.push_back(std::move(rep));
  }
  return result;
}

}  // namespace detail

// Federated FlexTrain with per-device depths k_j and federated auto-distillation.
inline FedResult run_federated(ResidualNet server, const std::vector<DeviceProfile>& devices, const Dataset& test,
                               const FederationConfig& fcfg) {
  return detail::run_fedavg(std::move(server), devices, test, fcfg, std::nullopt, std::nullopt);
}

inline std::size_t weakest_depth(const std::vector<DeviceProfile>& devices) {
  if (devices.empty()) throw std::invalid_argument("weakest_depth: no devices");
  std::size_t k = devices.front().depth;
  for (const auto& d : devices) k = std::min(k, d.depth);
  return k;
}

// FedAvg at the depth of the least capable device; no distillation.
inline FedResult run_fedsmall(ResidualNet server, const std::vector<DeviceProfile>& devices, const Dataset& test,
                              const FederationConfig& fcfg) {
  return detail::run_fedavg(std::move(server), devices, test, fcfg, weakest_depth(devices), 0.0);
}

struct FedClassResult {
  std::vector<std::pair<std::size_t, ResidualNet>> models;  // (class depth, model)
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> classes;  // (depth, device ids)
  std::vector<RoundReport> reports;  // merged over classes
};

// One independent FedAvg run per distinct device depth, each on that class's
// devices only; every run starts from the same initial server weights.
inline FedClassResult run_fedclass(const ResidualNet& server, const std::vector<DeviceProfile>& devices,
                                   const Dataset& test, const FederationConfig& fcfg) {
  if (devices.empty()) throw std::invalid_argument("fedclass: no devices");
  std::map<std::size_t, std::vector<DeviceProfile>> by_depth;
  for (const auto& d : devices) by_depth[d.depth].push_back(d);
  FedClassResult out;
  std::vector<FedResult> runs;
  for (auto& [k, members] : by_depth) {
    FederationConfig class_cfg = fcfg;
    class_cfg.eval_depths.clear();
    if (class_cfg.devices_per_round > members.size()) class_cfg.devices_per_round = members.size();
    std::vector<std::size_t> ids;
    for (const auto& d : members) ids.push_back(d.device_id);
    out.classes.emplace_back(k, ids);
    runs.push_back(detail::run_fedavg(server, members, test, class_cfg, k, 0.0));
    out.models.emplace_back(k, runs.back().server);
  }
  const double total = static_cast<double>(devices.size());
  for (std::size_t r = 0; r < fcfg.rounds; ++r) {
    RoundReport merged;
    merged.round = r + 1;
    std::map<std::size_t, std::size_t> bytes;
    for (std::size_t c = 0; c < runs.size(); ++c) {
      const RoundReport& rep = runs[c].reports[r];
      merged.sampled.insert(merged.sampled.end(), rep.sampled.begin(), rep.sampled.end());
      merged.device_loss.insert(merged.device_loss.end(), rep.device_loss.begin(), rep.device_loss.end());
      merged.bytes_to_device.insert(merged.bytes_to_device.end(), rep.bytes_to_device.begin(),
                                    rep.bytes_to_device.end());
      merged.depth_accuracy.insert(merged.depth_accuracy.end(), rep.depth_accuracy.begin(), rep.depth_accuracy.end());
      merged.mean_device_accuracy +=
          rep.mean_device_accuracy * static_cast<double>(out.classes[c].second.size()) / total;
      merged.bytes_down += rep.bytes_down;
      merged.bytes_up += rep.bytes_up;
    }
    std::sort(merged.sampled.begin(), merged.sampled.end());
    std::sort(merged.device_loss.begin(), merged.device_loss.end());
    std::sort(merged.bytes_to_device.begin(), merged.bytes_to_device.end());
    std::sort(merged.depth_accuracy.begin(), merged.depth_accuracy.end());
    out.reports.push_back(std::move(merged));
  }
  return out;
}

inline std::vector<Record> round_records(const std::string& run_id, const std::string& stage,
                                         const std::vector<RoundReport>& reports) {
  std::vector<Record> out;
  for (const auto& r : reports) {
    const auto idx = static_cast<std::uint64_t>(r.round);
    out.push_back({run_id, stage, idx, 0, "test", "mean_device_accuracy", r.mean_device_accuracy});
    out.push_back({run_id, stage, idx, 0, "wire", "bytes_down", static_cast<double>(r.bytes_down)});
    out.push_back({run_id, stage, idx, 0, "wire", "bytes_up", static_cast<double>(r.bytes_up)});
    out.push_back({run_id, stage, idx, 0, "train", "devices_sampled", static_cast<double>(r.sampled.size())});
    double loss = 0.0;
    for (const auto& [id, l] : r.device_loss) loss += l;
    if (!r.device_loss.empty())
      out.push_back({run_id, stage, idx, 0, "train", "mean_local_loss", loss / static_cast<double>(r.device_loss.size())});
    for (const auto& [k, acc] : r.depth_accuracy) out.push_back({run_id, stage, idx, k, "test", "accuracy", acc});
  }
  return out;
}

}  // namespace flextrain
