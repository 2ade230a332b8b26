#pragma once

// JSON run configuration. Every section rejects unknown keys.
//
// {
//   "seed": 7,
//   "model":  {"input_dim": 2, "hidden_dim": 32, "num_classes": 3, "K": 6},
//   "data":   {"source": "spiral" | "blobs" | "idx" | "csv",
//              "n_per_class": 500, "test_n_per_class": 500, "noise_std": 0.1, "turns": 1.5,
//              "dim": 2, "separation": 6.0, "train_seed": 1, "test_seed": 2,
//              "train_images": "..", "train_labels": "..", "test_images": "..", "test_labels": "..",
//              "train_csv": "..", "test_csv": "..",
//              "partition": {"method": "iid" | "dirichlet" | "shards", "alpha": 0.5, "shards": 2}},
//   "train":  {"lr": 0.05, "momentum": 0.9, "weight_decay": 0.001, "batch_size": 64,
//              "epochs": 200, "beta": 0.2,
//              "distill_mode": "off" | "centralized-k+1" | "centralized-full-K" | "federated",
//              "pi": [{"depth": 2, "probability": 0.25}, {"fraction": 0.35, "probability": 0.25}, ...],
//              "eval_depths": [2, 4, 6], "sampling": "per-step" | "per-epoch",
//              "lr_step_epochs": 0, "lr_gamma": 1.0, "eval_every": 1, "checkpoint_every": 0,
//              "independent_depths": [2, 4, 6]},
//   "federation": {"num_devices": 8, "rounds": 40, "local_epochs": 5, "devices_per_round": 0,
//                  "aggregation": "per-layer" | "padded-average", "weighting": "uniform" | "dataset-size",
//                  "capacities": [0.052, ...], "threads": 1},
//   "cost":   {"prefix_fractions": [0.15, 0.35, 1.0]},
//   "output": {"dir": "out", "format": "csv" | "json", "run_id": "run", "checkpoint": true}
// }

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "flextrain/data.hpp"
#include "flextrain/error.hpp"
#include "flextrain/fedsim.hpp"
#include "flextrain/nn.hpp"
#include "flextrain/report.hpp"
#include "flextrain/sampler.hpp"
#include "flextrain/trainer.hpp"

namespace flextrain {

struct PiEntry {
  std::optional<std::size_t> depth;
  std::optional<double> fraction;
  double probability = 0.0;
};

struct PartitionConfig {
  PartitionMethod method = PartitionMethod::kIid;
  double alpha = 0.5;
  std::size_t shards = 2;
};

struct DataConfig {
  std::string source = "spiral";
  std::size_t n_per_class = 500;
  std::size_t test_n_per_class = 500;
  double noise_std = 0.1;
  double turns = kSpiralTurns;
  std::size_t dim = 2;
  double separation = 6.0;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::uint64_t> test_seed;
  std::string train_images, train_labels, test_images, test_labels;
  std::string train_csv, test_csv;
  PartitionConfig partition;
};

struct FederationSection {
  std::size_t num_devices = 8;
  std::size_t rounds = 40;
  std::size_t local_epochs = 5;
  std::size_t devices_per_round = 0;
  AggregationMode aggregation = AggregationMode::kPerLayer;
  Weighting weighting = Weighting::kUniform;
  std::vector<double> capacities;  // empty: reference population
  std::size_t threads = 1;
};

struct OutputConfig {
  std::string dir;
  ReportFormat format = ReportFormat::kCsv;
  std::string run_id = "run";
  bool checkpoint = true;
};

struct RunConfig {
  std::uint64_t seed = 0;
  NetShape model;
  DataConfig data;
  TrainConfig train;  // train.pi is resolved by resolve_pi()
  std::vector<PiEntry> pi_entries;
  std::vector<std::size_t> independent_depths;
  std::optional<FederationSection> federation;
  std::vector<double> cost_fractions;
  OutputConfig output;

  // Seeds derived from the master seed unless given explicitly.
  std::uint64_t init_seed() const { return seed; }
  std::uint64_t train_stream_seed() const { return derive_seed(seed, 1); }
  std::uint64_t train_data_seed() const { return data.train_seed.value_or(derive_seed(seed, 2)); }
  std::uint64_t test_data_seed() const { return data.test_seed.value_or(derive_seed(seed, 3)); }
  std::uint64_t partition_seed() const { return derive_seed(seed, 4); }
  std::uint64_t server_seed() const { return derive_seed(seed, 5); }
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& section) {
  if (!obj.is_object()) throw ConfigError("config: '" + section + "' must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in '" + section + "'");
}

template <typename T>
T get_as(const json& obj, const std::string& key, const std::string& section) {
  const json& v = obj.at(key);
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
        throw ConfigError("");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config: '" + section + "." + key + "' has the wrong type");
  }
}

template <typename T>
void read_opt(const json& obj, const std::string& key, const std::string& section, T& out) {
  if (obj.contains(key)) out = get_as<T>(obj, key, section);
}

template <typename T>
void read_opt(const json& obj, const std::string& key, const std::string& section, std::optional<T>& out) {
  if (obj.contains(key)) out = get_as<T>(obj, key, section);
}

inline std::vector<std::size_t> read_depth_list(const json& obj, const std::string& key, const std::string& section) {
  std::vector<std::size_t> out;
  if (!obj.contains(key)) return out;
  if (!obj.at(key).is_array()) throw ConfigError("config: '" + section + "." + key + "' must be an array");
  for (const auto& v : obj.at(key)) {
    if (!v.is_number_integer() || v.get<long long>() < 1)
      throw ConfigError("config: '" + section + "." + key + "' entries must be positive integers");
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

inline std::vector<double> read_number_list(const json& obj, const std::string& key, const std::string& section) {
  std::vector<double> out;
  if (!obj.contains(key)) return out;
  if (!obj.at(key).is_array()) throw ConfigError("config: '" + section + "." + key + "' must be an array");
  for (const auto& v : obj.at(key)) {
    if (!v.is_number()) throw ConfigError("config: '" + section + "." + key + "' entries must be numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

template <typename E>
E read_enum(const json& obj, const std::string& key, const std::string& section,
            std::initializer_list<std::pair<const char*, E>> options, E fallback) {
  if (!obj.contains(key)) return fallback;
  const auto s = get_as<std::string>(obj, key, section);
  for (const auto& [name, value] : options)
    if (s == name) return value;
  throw ConfigError("config: '" + section + "." + key + "' has unsupported value '" + s + "'");
}

inline RunConfig parse_sections(const nlohmann::json& root) {
  check_keys(root, {"seed", "model", "data", "train", "federation", "cost", "output"}, "root");
  RunConfig cfg;
  read_opt(root, "seed", "root", cfg.seed);

  if (!root.contains("model")) throw ConfigError("config: missing 'model' section");
  const auto& m = root.at("model");
  check_keys(m, {"input_dim", "hidden_dim", "num_classes", "K"}, "model");
  for (const char* key : {"input_dim", "hidden_dim", "num_classes", "K"})
    if (!m.contains(key)) throw ConfigError(std::string("config: missing 'model.") + key + "'");
  cfg.model = {detail::get_as<std::size_t>(m, "input_dim", "model"), detail::get_as<std::size_t>(m, "hidden_dim", "model"),
               detail::get_as<std::size_t>(m, "num_classes", "model"), detail::get_as<std::size_t>(m, "K", "model")};
  if (cfg.model.input_dim == 0 || cfg.model.hidden_dim == 0 || cfg.model.num_classes == 0 || cfg.model.depth == 0)
    throw ConfigError("config: model dimensions must be >= 1");

  if (root.contains("data")) {
    const auto& d = root.at("data");
    check_keys(d, {"source", "n_per_class", "test_n_per_class", "noise_std", "turns", "dim", "separation", "train_seed",
                   "test_seed", "train_images", "train_labels", "test_images", "test_labels", "train_csv",
                   "test_csv", "partition"},
               "data");
    auto& dc = cfg.data;
    read_opt(d, "source", "data", dc.source);
    if (dc.source != "spiral" && dc.source != "blobs" && dc.source != "idx" && dc.source != "csv")
      throw ConfigError("config: 'data.source' has unsupported value '" + dc.source + "'");
    read_opt(d, "n_per_class", "data", dc.n_per_class);
    read_opt(d, "test_n_per_class", "data", dc.test_n_per_class);
    read_opt(d, "noise_std", "data", dc.noise_std);
    read_opt(d, "turns", "data", dc.turns);
    read_opt(d, "dim", "data", dc.dim);
    read_opt(d, "separation", "data", dc.separation);
    read_opt(d, "train_seed", "data", dc.train_seed);
    read_opt(d, "test_seed", "data", dc.test_seed);
    for (auto [key, dst] : {std::pair{"train_images", &dc.train_images}, {"train_labels", &dc.train_labels},
                            {"test_images", &dc.test_images}, {"test_labels", &dc.test_labels},
                            {"train_csv", &dc.train_csv}, {"test_csv", &dc.test_csv}})
      read_opt(d, key, "data", *dst);
    if (dc.n_per_class == 0 || dc.test_n_per_class == 0) throw ConfigError("config: data sizes must be >= 1");
    if (!(dc.noise_std >= 0.0)) throw ConfigError("config: 'data.noise_std' must be >= 0");
    if (!(dc.turns > 0.0)) throw ConfigError("config: 'data.turns' must be > 0");
    if (d.contains("partition")) {
      const auto& p = d.at("partition");
      check_keys(p, {"method", "alpha", "shards"}, "data.partition");
      dc.partition.method = detail::read_enum<PartitionMethod>(
          p, "method", "data.partition",
          {{"iid", PartitionMethod::kIid}, {"dirichlet", PartitionMethod::kDirichlet}, {"shards", PartitionMethod::kShards}},
          PartitionMethod::kIid);
      read_opt(p, "alpha", "data.partition", dc.partition.alpha);
      read_opt(p, "shards", "data.partition", dc.partition.shards);
      if (!(dc.partition.alpha > 0.0)) throw ConfigError("config: 'data.partition.alpha' must be > 0");
      if (dc.partition.shards == 0) throw ConfigError("config: 'data.partition.shards' must be >= 1");
    }
  }

  if (root.contains("train")) {
    const auto& t = root.at("train");
    check_keys(t, {"lr", "momentum", "weight_decay", "batch_size", "epochs", "beta", "distill_mode", "pi",
                   "eval_depths", "sampling", "lr_step_epochs", "lr_gamma", "eval_every", "checkpoint_every",
                   "independent_depths"},
               "train");
    auto& tc = cfg.train;
    read_opt(t, "lr", "train", tc.lr);
    read_opt(t, "momentum", "train", tc.momentum);
    read_opt(t, "weight_decay", "train", tc.weight_decay);
    read_opt(t, "batch_size", "train", tc.batch_size);
    read_opt(t, "epochs", "train", tc.epochs);
    read_opt(t, "beta", "train", tc.beta);
    read_opt(t, "lr_step_epochs", "train", tc.lr_step_epochs);
    read_opt(t, "lr_gamma", "train", tc.lr_gamma);
    read_opt(t, "eval_every", "train", tc.eval_every);
    read_opt(t, "checkpoint_every", "train", tc.checkpoint_every);
    tc.distill_mode = detail::read_enum<DistillMode>(t, "distill_mode", "train",
                                                     {{"off", DistillMode::kOff},
                                                      {"centralized-k+1", DistillMode::kCentralizedNext},
                                                      {"centralized-full-K", DistillMode::kCentralizedFull},
                                                      {"federated", DistillMode::kFederated}},
                                                     DistillMode::kCentralizedNext);
    tc.sampling = detail::read_enum<SamplingGranularity>(
        t, "sampling", "train", {{"per-step", SamplingGranularity::kPerStep}, {"per-epoch", SamplingGranularity::kPerEpoch}},
        SamplingGranularity::kPerStep);
    tc.eval_depths = detail::read_depth_list(t, "eval_depths", "train");
    cfg.independent_depths = detail::read_depth_list(t, "independent_depths", "train");
    if (t.contains("pi")) {
      if (!t.at("pi").is_array() || t.at("pi").empty()) throw ConfigError("config: 'train.pi' must be a non-empty array");
      for (const auto& e : t.at("pi")) {
        detail::check_keys(e, {"depth", "fraction", "probability"}, "train.pi[]");
        PiEntry entry;
        detail::read_opt(e, "depth", "train.pi[]", entry.depth);
        detail::read_opt(e, "fraction", "train.pi[]", entry.fraction);
        if (!e.contains("probability")) throw ConfigError("config: 'train.pi[]' entry without probability");
        entry.probability = detail::get_as<double>(e, "probability", "train.pi[]");
        if (entry.depth.has_value() == entry.fraction.has_value())
          throw ConfigError("config: each 'train.pi[]' entry needs exactly one of depth / fraction");
        cfg.pi_entries.push_back(entry);
      }
    }
  }

  if (root.contains("federation")) {
    const auto& f = root.at("federation");
    check_keys(f, {"num_devices", "rounds", "local_epochs", "devices_per_round", "aggregation", "weighting",
                   "capacities", "threads"},
               "federation");
    FederationSection fs;
    read_opt(f, "num_devices", "federation", fs.num_devices);
    read_opt(f, "rounds", "federation", fs.rounds);
    read_opt(f, "local_epochs", "federation", fs.local_epochs);
    read_opt(f, "devices_per_round", "federation", fs.devices_per_round);
    read_opt(f, "threads", "federation", fs.threads);
    fs.aggregation = detail::read_enum<AggregationMode>(
        f, "aggregation", "federation",
        {{"per-layer", AggregationMode::kPerLayer}, {"padded-average", AggregationMode::kPaddedAverage}},
        AggregationMode::kPerLayer);
    fs.weighting = detail::read_enum<Weighting>(
        f, "weighting", "federation", {{"uniform", Weighting::kUniform}, {"dataset-size", Weighting::kDatasetSize}},
        Weighting::kUniform);
    fs.capacities = detail::read_number_list(f, "capacities", "federation");
    if (fs.num_devices == 0) throw ConfigError("config: 'federation.num_devices' must be >= 1");
    if (fs.local_epochs == 0) throw ConfigError("config: 'federation.local_epochs' must be >= 1");
    if (fs.devices_per_round > fs.num_devices)
      throw ConfigError("config: 'federation.devices_per_round' exceeds num_devices");
    if (!fs.capacities.empty() && fs.capacities.size() != fs.num_devices)
      throw ConfigError("config: 'federation.capacities' needs one entry per device");
    for (double r : fs.capacities)
      if (!(r > 0.0 && r <= 1.0)) throw ConfigError("config: capacities must be in (0, 1]");
    if (fs.threads == 0) throw ConfigError("config: 'federation.threads' must be >= 1");
    cfg.federation = fs;
  }

  if (root.contains("cost")) {
    const auto& c = root.at("cost");
    check_keys(c, {"prefix_fractions"}, "cost");
    cfg.cost_fractions = detail::read_number_list(c, "prefix_fractions", "cost");
    for (std::size_t i = 0; i < cfg.cost_fractions.size(); ++i) {
      if (!(cfg.cost_fractions[i] > 0.0 && cfg.cost_fractions[i] <= 1.0) ||
          (i > 0 && !(cfg.cost_fractions[i] > cfg.cost_fractions[i - 1])))
        throw ConfigError("config: 'cost.prefix_fractions' must be increasing values in (0, 1]");
    }
    if (!cfg.cost_fractions.empty() && cfg.cost_fractions.back() != 1.0)
      throw ConfigError("config: 'cost.prefix_fractions' must end at 1.0");
  }

  if (root.contains("output")) {
    const auto& o = root.at("output");
    check_keys(o, {"dir", "format", "run_id", "checkpoint"}, "output");
    read_opt(o, "dir", "output", cfg.output.dir);
    read_opt(o, "run_id", "output", cfg.output.run_id);
    read_opt(o, "checkpoint", "output", cfg.output.checkpoint);
    cfg.output.format = detail::read_enum<ReportFormat>(o, "format", "output",
                                                        {{"csv", ReportFormat::kCsv}, {"json", ReportFormat::kJson}},
                                                        ReportFormat::kCsv);
    if (cfg.output.run_id.empty() || cfg.output.run_id.find_first_of(",/\"\n") != std::string::npos)
      throw ConfigError("config: 'output.run_id' must be non-empty without separators");
  }

  cfg.train.validate(cfg.model.depth);
  return cfg;
}

}  // namespace detail

// Number of depths the activation distribution ranges over: the model depth,
// or the length of cost.prefix_fractions when that table is given.
inline std::size_t pi_length(const RunConfig& cfg) {
  return cfg.cost_fractions.empty() ? cfg.model.depth : cfg.cost_fractions.size();
}

// Maps pi entries to depths; fractions go through fraction_to_depth (or the
// cost table when present). No entries: all mass on the full depth.
inline ActivationDistribution resolve_pi(const RunConfig& cfg) {
  const std::size_t len = pi_length(cfg);
  if (cfg.pi_entries.empty()) return ActivationDistribution::one_hot(len, len);
  std::vector<std::pair<std::size_t, double>> pairs;
  for (const auto& e : cfg.pi_entries) {
    std::size_t k = 0;
    if (e.depth) {
      k = *e.depth;
      if (k < 1 || k > len) throw ConfigError("config: pi depth " + std::to_string(k) + " outside 1.." + std::to_string(len));
    } else {
      const double f = *e.fraction;
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("config: pi fraction must be in (0, 1]");
      if (cfg.cost_fractions.empty()) {
        k = fraction_to_depth(cfg.model, f).depth;
      } else {
        k = 1;
        for (std::size_t i = 0; i < len; ++i)
          if (cfg.cost_fractions[i] <= f + 1e-12) k = i + 1;
      }
    }
    pairs.emplace_back(k, e.probability);
  }
  try {
    return ActivationDistribution::from_pairs(len, pairs);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: invalid pi: ") + e.what());
  }
}

// Parses and validates a configuration. Without a cost table the activation
// distribution is resolved against the model into train.pi.
inline RunConfig parse_run_config(const nlohmann::json& root) {
  RunConfig cfg = detail::parse_sections(root);
  if (cfg.cost_fractions.empty()) cfg.train.pi = resolve_pi(cfg);
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open '" + path + "'");
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_run_config(root);
}

}  // namespace flextrain
