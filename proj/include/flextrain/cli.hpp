#pragma once

// Command-line driver. One subcommand per experiment:
//
//   flextrain <train|single|independents|fedtrain|fedsmall|fedclass|flops|eval>
//             --config PATH [--seed N] [--out DIR] [--rounds N] [--epochs N]
//             [--checkpoint PATH]   (eval only)
//
// Exit codes: 0 success, 1 usage / configuration error, 2 runtime error.
// Output directory: --out, else output.dir, else $FLEXTRAIN_OUT_DIR, else ".".

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "flextrain/checkpoint.hpp"
#include "flextrain/config.hpp"
#include "flextrain/cost.hpp"
#include "flextrain/data.hpp"
#include "flextrain/error.hpp"
#include "flextrain/evaluate.hpp"
#include "flextrain/fedsim.hpp"
#include "flextrain/report.hpp"
#include "flextrain/sampler.hpp"
#include "flextrain/trainer.hpp"

namespace flextrain {

struct CliOptions {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<std::size_t> rounds;
  std::optional<std::size_t> epochs;
  std::string checkpoint;
};

namespace detail {

inline std::string output_dir(const CliOptions& opt, const RunConfig& cfg) {
  if (!opt.out_dir.empty()) return opt.out_dir;
  if (!cfg.output.dir.empty()) return cfg.output.dir;
  if (const char* env = std::getenv("FLEXTRAIN_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return ".";
}

struct Outputs {
  std::filesystem::path dir;
  std::string stem;  // <run_id>_<command>
  ReportFormat format = ReportFormat::kCsv;

  std::string report() const {
    return (dir / (stem + (format == ReportFormat::kCsv ? ".csv" : ".json"))).string();
  }
  std::string checkpoint(const std::string& suffix = "") const { return (dir / (stem + suffix + ".ckpt")).string(); }
};

struct Datasets {
  Dataset train;
  Dataset test;
};

inline Datasets build_datasets(const RunConfig& cfg) {
  const DataConfig& dc = cfg.data;
  const NetShape& m = cfg.model;
  Datasets out;
  if (dc.source == "spiral") {
    if (m.input_dim != 2) throw ConfigError("config: spiral data needs model.input_dim = 2");
    out.train = gen_spiral(dc.n_per_class, m.num_classes, dc.noise_std, cfg.train_data_seed(), dc.turns);
    out.test = gen_spiral(dc.test_n_per_class, m.num_classes, dc.noise_std, cfg.test_data_seed(), dc.turns);
  } else if (dc.source == "blobs") {
    if (m.input_dim != dc.dim) throw ConfigError("config: blobs data needs data.dim = model.input_dim");
    Matrix centers;
    try {
      centers = blob_centers(m.num_classes, dc.dim, dc.separation, cfg.train_data_seed());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    out.train = sample_blobs(centers, dc.n_per_class, derive_seed(cfg.train_data_seed(), 1));
    out.test = sample_blobs(centers, dc.test_n_per_class, cfg.test_data_seed());
  } else if (dc.source == "idx") {
    if (dc.train_images.empty() || dc.train_labels.empty() || dc.test_images.empty() || dc.test_labels.empty())
      throw ConfigError("config: idx data needs train_images, train_labels, test_images, test_labels");
    out.train = load_idx(dc.train_images, dc.train_labels, m.num_classes);
    out.test = load_idx(dc.test_images, dc.test_labels, m.num_classes);
  } else {
    if (dc.train_csv.empty() || dc.test_csv.empty()) throw ConfigError("config: csv data needs train_csv and test_csv");
    out.train = load_csv(dc.train_csv, m.num_classes);
    out.test = load_csv(dc.test_csv, m.num_classes);
  }
  out.train.split = "train";
  out.test.split = "test";
  for (const Dataset* d : {&out.train, &out.test}) {
    if (d->dim() != m.input_dim)
      throw ConfigError("config: data has " + std::to_string(d->dim()) + " features but model.input_dim is " +
                        std::to_string(m.input_dim));
    try {
      d->validate();
    } catch (const std::invalid_argument& e) {
      throw Error(std::string("data: ") + e.what());
    }
  }
  return out;
}

inline FederationConfig federation_config(const RunConfig& cfg) {
  const FederationSection fs = cfg.federation.value_or(FederationSection{});
  FederationConfig f;
  f.rounds = fs.rounds;
  f.local_epochs = fs.local_epochs;
  f.devices_per_round = fs.devices_per_round;
  f.aggregation = fs.aggregation;
  f.weighting = fs.weighting;
  f.local = cfg.train;
  f.local.eval_depths.clear();
  f.seed = cfg.server_seed();
  f.threads = fs.threads;
  f.eval_depths = cfg.train.eval_depths;
  return f;
}

inline std::vector<DeviceProfile> build_devices(const RunConfig& cfg, const Dataset& train) {
  const FederationSection fs = cfg.federation.value_or(FederationSection{});
  const PartitionConfig& pc = cfg.data.partition;
  PartitionPlan plan;
  try {
    switch (pc.method) {
      case PartitionMethod::kIid:
        plan = partition_iid(train, fs.num_devices, cfg.partition_seed());
        break;
      case PartitionMethod::kDirichlet:
        plan = partition_dirichlet(train, fs.num_devices, pc.alpha, cfg.partition_seed());
        break;
      case PartitionMethod::kShards:
        plan = partition_shards(train, fs.num_devices, pc.shards, cfg.partition_seed());
        break;
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  const std::vector<double> caps = fs.capacities.empty() ? reference_capacities(fs.num_devices) : fs.capacities;
  return make_devices(cfg.model, train, plan, caps, cfg.seed);
}

inline std::vector<Record> device_records(const std::string& run_id, const std::vector<DeviceProfile>& devices) {
  std::vector<Record> out;
  for (const auto& d : devices) {
    const auto id = static_cast<std::uint64_t>(d.device_id);
    out.push_back({run_id, "devices", id, d.depth, "train", "capacity_ratio", d.capacity_ratio});
    out.push_back({run_id, "devices", id, d.depth, "train", "num_samples", static_cast<double>(d.data.size())});
    out.push_back({run_id, "devices", id, d.depth, "train", "over_budget", d.over_budget ? 1.0 : 0.0});
  }
  return out;
}

inline std::vector<Record> curve_records(const std::string& run_id, const ResidualNet& net, const Dataset& test,
                                         const std::vector<std::size_t>& depths) {
  std::vector<Record> out;
  for (const auto& p : curve_accuracy_vs_fraction(net, test, depths)) {
    out.push_back({run_id, "curve", 0, p.depth, "test", "fraction", p.fraction});
    out.push_back({run_id, "curve", 0, p.depth, "test", "accuracy", p.accuracy});
  }
  return out;
}

inline std::vector<std::size_t> all_depths(std::size_t K) {
  std::vector<std::size_t> d(K);
  for (std::size_t k = 1; k <= K; ++k) d[k - 1] = k;
  return d;
}

inline double last_accuracy(const TrainResult& r) {
  if (r.logs.empty() || r.logs.back().eval_accuracy.empty()) return 0.0;
  return r.logs.back().eval_accuracy.back().second;
}

inline void reject_cost_section(const RunConfig& cfg, const std::string& command) {
  if (!cfg.cost_fractions.empty())
    throw ConfigError("config: the 'cost' section is only valid for the flops subcommand, not '" + command + "'");
}

inline std::string fmt(double v) { return format_double(v); }

inline int execute(const CliOptions& opt, std::ostream& out) {
  RunConfig cfg = load_run_config(opt.config_path);
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.epochs) {
    cfg.train.epochs = *opt.epochs;
    if (cfg.federation) cfg.federation->local_epochs = *opt.epochs;
  }
  if (opt.rounds) {
    if (!cfg.federation) cfg.federation = FederationSection{};
    cfg.federation->rounds = *opt.rounds;
  }
  if (opt.epochs && *opt.epochs == 0) throw ConfigError("--epochs must be >= 1");
  cfg.train.seed = cfg.train_stream_seed();
  const std::string& cmd = opt.command;
  const std::string& run_id = cfg.output.run_id;

  Outputs io{output_dir(opt, cfg), run_id + "_" + cmd, cfg.output.format};
  std::error_code ec;
  std::filesystem::create_directories(io.dir, ec);
  if (ec) throw IoError("cannot create output directory '" + io.dir.string() + "': " + ec.message());

  std::vector<Record> records;
  std::string summary;

  if (cmd == "flops") {
    const ActivationDistribution pi = resolve_pi(cfg);
    std::vector<double> counts;
    std::optional<CostModel> cost;
    if (!cfg.cost_fractions.empty()) {
      counts = cfg.cost_fractions;
      cost.emplace(cfg.cost_fractions);
    } else {
      for (std::size_t c : prefix_param_counts(cfg.model)) counts.push_back(static_cast<double>(c));
      cost.emplace(CostModel::from_shape(cfg.model));
    }
    const double r_bar = expected_param_ratio(pi, counts);
    const TrainingCost tc = expected_training_cost(pi, *cost, 1, cfg.train.batch_size);
    const auto support = pi.support();
    const double indep = independent_training_cost(support, *cost, 1, cfg.train.batch_size);
    const double vs_indep = tc.flops / indep;
    records.push_back({run_id, "flops", 0, 0, "model", "param_ratio", r_bar});
    records.push_back({run_id, "flops", 0, 0, "model", "flop_ratio_vs_full", tc.ratio});
    records.push_back({run_id, "flops", 0, 0, "model", "flop_ratio_vs_independent", vs_indep});
    for (std::size_t k = 1; k <= cost->depth(); ++k) {
      records.push_back({run_id, "flops", 0, k, "model", "prefix_forward_cost", cost->forward(k)});
      records.push_back({run_id, "flops", 0, k, "model", "pi", pi.prob(k)});
    }
    write_report(records, io.report(), io.format);
    out << "flops: r_bar=" << fmt(r_bar) << " flop_ratio=" << fmt(tc.ratio)
        << " flextrain_vs_independent=" << fmt(vs_indep) << " report=" << io.report() << "\n";
    return 0;
  }

  reject_cost_section(cfg, cmd);
  const Datasets data = build_datasets(cfg);

  if (cmd == "eval") {
    if (opt.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
    const ResidualNet net = load_checkpoint(opt.checkpoint);
    if (net.input_dim() != data.test.dim() || net.num_classes() < data.test.num_classes)
      throw ConfigError("eval: checkpoint shape does not match the configured data");
    const auto depths = all_depths(net.depth());
    for (std::size_t k : depths) {
      records.push_back({run_id, "eval", 0, k, "test", "accuracy", evaluate_prefix(net, data.test, k)});
      records.push_back({run_id, "eval", 0, k, "test", "loss", evaluate_loss(net, data.test, k)});
    }
    auto curve = curve_records(run_id, net, data.test, depths);
    records.insert(records.end(), curve.begin(), curve.end());
    write_report(records, io.report(), io.format);
    out << "eval: accuracy(k=" << net.depth() << ")=" << fmt(evaluate_prefix(net, data.test, net.depth()))
        << " report=" << io.report() << "\n";
    return 0;
  }

  if (cmd == "train" || cmd == "single") {
    ResidualNet net = init_net(cfg.model, cfg.init_seed());
    TrainConfig tc = cfg.train;
    if (cfg.output.checkpoint && tc.checkpoint_every > 0) tc.checkpoint_path = io.checkpoint();
    const TrainResult r = cmd == "train" ? train_flextrain(net, data.train, tc, &data.test)
                                         : train_single(net, data.train, tc, &data.test);
    records = epoch_records(run_id, cmd, r.logs, "test");
    const auto support = tc.distribution(cfg.model.depth).support();
    auto curve = curve_records(run_id, net, data.test, support);
    records.insert(records.end(), curve.begin(), curve.end());
    const double r_bar = cmd == "train" ? expected_param_ratio(tc.distribution(cfg.model.depth), cfg.model) : 1.0;
    records.push_back({run_id, cmd, 0, 0, "train", "param_ratio", r_bar});
    records.push_back({run_id, cmd, 0, 0, "train", "total_flops", static_cast<double>(r.total_flops)});
    write_report(records, io.report(), io.format);
    if (cfg.output.checkpoint) save_checkpoint(net, io.checkpoint());
    out << cmd << ": accuracy=" << fmt(last_accuracy(r)) << " flops=" << r.total_flops << " report=" << io.report()
        << "\n";
    return 0;
  }

  if (cmd == "independents") {
    std::vector<std::size_t> depths = cfg.independent_depths;
    if (depths.empty()) depths = cfg.train.distribution(cfg.model.depth).support();
    for (std::size_t k : depths)
      if (k < 1 || k > cfg.model.depth) throw ConfigError("config: independent depth outside 1..K");
    TrainConfig tc = cfg.train;
    tc.seed = cfg.train_stream_seed();
    IndependentResult r;
    try {
      r = train_independents(cfg.model, data.train, tc, depths, &data.test);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    double acc_sum = 0.0;
    for (const auto& run : r.runs) {
      auto recs = epoch_records(run_id, "independent_k" + std::to_string(run.depth), run.result.logs, "test");
      records.insert(records.end(), recs.begin(), recs.end());
      acc_sum += last_accuracy(run.result);
      if (cfg.output.checkpoint) save_checkpoint(run.net, io.checkpoint("_k" + std::to_string(run.depth)));
    }
    records.push_back({run_id, cmd, 0, 0, "train", "total_flops", static_cast<double>(r.total_flops)});
    write_report(records, io.report(), io.format);
    out << cmd << ": mean_accuracy=" << fmt(acc_sum / static_cast<double>(r.runs.size()))
        << " flops=" << r.total_flops << " report=" << io.report() << "\n";
    return 0;
  }

  // Federated subcommands.
  const std::vector<DeviceProfile> devices = build_devices(cfg, data.train);
  const FederationConfig fcfg = federation_config(cfg);
  const ResidualNet server = init_net(cfg.model, cfg.init_seed());
  records = device_records(run_id, devices);
  std::vector<RoundReport> reports;
  if (cmd == "fedclass") {
    FedClassResult r = run_fedclass(server, devices, data.test, fcfg);
    reports = r.reports;
    if (cfg.output.checkpoint)
      for (const auto& [k, net] : r.models) save_checkpoint(net, io.checkpoint("_k" + std::to_string(k)));
  } else {
    FedResult r = cmd == "fedtrain" ? run_federated(server, devices, data.test, fcfg)
                                    : run_fedsmall(server, devices, data.test, fcfg);
    reports = r.reports;
    if (cfg.output.checkpoint) save_checkpoint(r.server, io.checkpoint());
  }
  auto recs = round_records(run_id, cmd, reports);
  records.insert(records.end(), recs.begin(), recs.end());
  write_report(records, io.report(), io.format);
  const double acc = reports.empty() ? 0.0 : reports.back().mean_device_accuracy;
  out << cmd << ": mean_device_accuracy=" << fmt(acc) << " report=" << io.report() << "\n";
  return 0;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Depth-flexible residual network training and federated simulation", "flextrain"};
  app.require_subcommand(1, 1);
  CliOptions opt;

  const std::pair<const char*, const char*> commands[] = {
      {"train", "train with active-layers sampling and auto-distillation"},
      {"single", "train the full-depth model only"},
      {"independents", "train one separate model per depth"},
      {"fedtrain", "federated training with per-device depths"},
      {"fedsmall", "federated training at the weakest device's depth"},
      {"fedclass", "one federated model per device capability class"},
      {"flops", "report parameter and FLOP ratios"},
      {"eval", "evaluate a checkpoint at every prefix depth"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config_path, "JSON run configuration")->required();
    sub->add_option("--seed", opt.seed, "master seed override");
    sub->add_option("--out", opt.out_dir, "output directory");
    sub->add_option("--rounds", opt.rounds, "federated rounds override");
    sub->add_option("--epochs", opt.epochs, "epoch override (local epochs for federated runs)");
    if (std::string(name) == "eval") sub->add_option("--checkpoint", opt.checkpoint, "checkpoint to evaluate")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  }
  opt.command = app.get_subcommands().front()->get_name();

  try {
    return detail::execute(opt, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace flextrain
