#pragma once

// Centralized training: FlexTrain (active-layers sampling + auto-distillation)
// and the Single / Independent baselines.
//
// Random draw order, all from one stream seeded with TrainConfig::seed:
//   per epoch : [per-epoch sampling only] depth
//   per step  : [per-step sampling only] depth, then the batch indices
// Batches come from an incremental Fisher-Yates pass over the dataset, so an
// epoch visits every sample exactly once in ceil(n / B) steps. A degenerate
// activation distribution consumes no draws.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "flextrain/checkpoint.hpp"
#include "flextrain/cost.hpp"
#include "flextrain/data.hpp"
#include "flextrain/error.hpp"
#include "flextrain/evaluate.hpp"
#include "flextrain/losses.hpp"
#include "flextrain/nn.hpp"
#include "flextrain/report.hpp"
#include "flextrain/sampler.hpp"

namespace flextrain {

enum class DistillMode { kOff, kCentralizedNext, kCentralizedFull, kFederated };
enum class SamplingGranularity { kPerStep, kPerEpoch };

struct TrainConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.001;
  std::size_t batch_size = 64;
  std::size_t epochs = 1;
  double beta = 0.0;
  DistillMode distill_mode = DistillMode::kCentralizedNext;
  std::optional<ActivationDistribution> pi;  // unset: all mass on the full depth
  std::uint64_t seed = 0;
  std::vector<std::size_t> eval_depths;  // empty: support of pi
  SamplingGranularity sampling = SamplingGranularity::kPerStep;
  std::size_t lr_step_epochs = 0;  // 0: constant learning rate
  double lr_gamma = 1.0;
  std::size_t eval_every = 1;  // 0: evaluate after the last epoch only
  std::size_t checkpoint_every = 0;
  std::string checkpoint_path;

  ActivationDistribution distribution(std::size_t depth) const {
    return pi ? *pi : ActivationDistribution::one_hot(depth, depth);
  }

  std::vector<std::size_t> depths_to_evaluate(std::size_t depth) const {
    return eval_depths.empty() ? distribution(depth).support() : eval_depths;
  }

  SgdOptions sgd_for_epoch(std::size_t epoch) const {
    double rate = lr;
    if (lr_step_epochs > 0) rate *= std::pow(lr_gamma, static_cast<double>(epoch / lr_step_epochs));
    return {rate, momentum, weight_decay};
  }

  void validate(std::size_t depth) const {
    if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(beta >= 0.0)) throw ConfigError("train: beta must be >= 0");
    if (!(lr_gamma > 0.0)) throw ConfigError("train: lr_gamma must be > 0");
    if (pi && pi->depth() != depth) throw ConfigError("train: pi has a different length than K");
    for (std::size_t k : eval_depths)
      if (k < 1 || k > depth) throw ConfigError("train: eval depth " + std::to_string(k) + " outside 1..K");
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  std::vector<std::size_t> depth_histogram;  // index k; entry 0 unused
  std::size_t steps = 0;
  double mean_total = 0.0;
  double mean_base = 0.0;
  double mean_distill = 0.0;
  std::vector<std::pair<std::size_t, double>> eval_accuracy;  // (k, accuracy)
  std::uint64_t cumulative_flops = 0;
};

struct TrainResult {
  std::vector<EpochLog> logs;
  std::uint64_t total_flops = 0;
  std::size_t steps = 0;
};

// Loss and gradients for one step at depth k under cfg.distill_mode.
inline LossAndGrads training_loss(const ResidualNet& net, const Matrix& x, std::span<const int> y, std::size_t k,
                                  DistillMode mode, double beta) {
  if (beta == 0.0 && mode != DistillMode::kFederated) mode = DistillMode::kOff;
  switch (mode) {
    case DistillMode::kOff:
      return plain_loss(net, x, y, k);
    case DistillMode::kCentralizedNext:
      return centralized_distill_loss(net, x, y, k, std::min(k + 1, net.depth()), beta);
    case DistillMode::kCentralizedFull:
      return centralized_distill_loss(net, x, y, k, net.depth(), beta);
    case DistillMode::kFederated:
      return federated_distill_loss(net, x, y, k, beta);
  }
  throw std::logic_error("training_loss: unknown mode");
}

// Mutable state of one optimization run: the random stream and momentum buffers.
struct TrainerState {
  Rng rng;
  SgdState optimizer;
  std::uint64_t flops = 0;
  std::size_t steps = 0;

  TrainerState() = default;
  TrainerState(std::uint64_t seed, const NetShape& shape) : rng(seed), optimizer(shape) {}
};

// One pass over `data`. next_depth() is called once per step, before the
// step's batch is drawn.
template <typename NextDepth>
EpochLog run_epoch(ResidualNet& net, const Dataset& data, const TrainConfig& cfg, std::size_t epoch,
                   TrainerState& st, NextDepth&& next_depth) {
  const std::size_t n = data.size();
  const SgdOptions sgd = cfg.sgd_for_epoch(epoch);
  EpochLog log;
  log.epoch = epoch;
  log.depth_histogram.assign(net.depth() + 1, 0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Matrix x;
  std::vector<int> y;
  for (std::size_t pos = 0; pos < n; pos += cfg.batch_size) {
    const std::size_t k = next_depth(st.rng);
    const std::size_t stop = std::min(n, pos + cfg.batch_size);
    for (std::size_t i = pos; i < stop; ++i) std::swap(order[i], order[i + st.rng.uniform_index(n - i)]);
    gather(data, std::span<const std::size_t>(order).subspan(pos, stop - pos), x, y);

    LossAndGrads lg = training_loss(net, x, y, k, cfg.distill_mode, cfg.beta);
    if (!std::isfinite(lg.value.total))
      throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", depth " +
                            std::to_string(k));
    sgd_step(net, lg.grads, sgd, st.optimizer);

    ++log.depth_histogram[k];
    ++log.steps;
    log.mean_total += lg.value.total;
    log.mean_base += lg.value.base_term;
    log.mean_distill += lg.value.distill_term;
    st.flops += flop_count_prefix(net, k, stop - pos, true);
    ++st.steps;
  }
  if (log.steps > 0) {
    const auto s = static_cast<double>(log.steps);
    log.mean_total /= s;
    log.mean_base /= s;
    log.mean_distill /= s;
  }
  log.cumulative_flops = st.flops;
  return log;
}

// FlexTrain loop: per step draw k ~ pi, draw a batch, descend on the
// distillation loss restricted to W~_k.
inline TrainResult train_flextrain(ResidualNet& net, const Dataset& train, const TrainConfig& cfg,
                                   const Dataset* eval = nullptr) {
  if (train.empty()) throw std::invalid_argument("train_flextrain: empty dataset");
  if (train.dim() != net.input_dim()) throw std::invalid_argument("train_flextrain: dataset width differs from input_dim");
  cfg.validate(net.depth());
  const ActivationDistribution pi = cfg.distribution(net.depth());
  const auto eval_depths = cfg.depths_to_evaluate(net.depth());
  const Dataset& eval_set = eval != nullptr ? *eval : train;

  TrainerState st(cfg.seed, net.shape());
  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLog log;
    if (cfg.sampling == SamplingGranularity::kPerEpoch) {
      const std::size_t k = sample_config(pi, st.rng);
      log = run_epoch(net, train, cfg, epoch, st, [k](Rng&) { return k; });
    } else {
      log = run_epoch(net, train, cfg, epoch, st, [&pi](Rng& rng) { return sample_config(pi, rng); });
    }
    const bool last = epoch + 1 == cfg.epochs;
    if (last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0))
      for (std::size_t k : eval_depths) log.eval_accuracy.emplace_back(k, evaluate_prefix(net, eval_set, k));
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() && (epoch + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(net, cfg.checkpoint_path + ".epoch" + std::to_string(epoch + 1));
    result.logs.push_back(std::move(log));
  }
  result.total_flops = st.flops;
  result.steps = st.steps;
  return result;
}

// Plain full-depth training; evaluation still covers every requested prefix.
inline TrainResult train_single(ResidualNet& net, const Dataset& train, const TrainConfig& cfg,
                                const Dataset* eval = nullptr) {
  TrainConfig single = cfg;
  single.pi = ActivationDistribution::one_hot(net.depth(), net.depth());
  single.distill_mode = DistillMode::kOff;
  single.beta = 0.0;
  if (single.eval_depths.empty()) single.eval_depths = cfg.depths_to_evaluate(net.depth());
  return train_flextrain(net, train, single, eval);
}

struct IndependentRun {
  std::size_t depth = 0;
  ResidualNet net;
  TrainResult result;
};

struct IndependentResult {
  std::vector<IndependentRun> runs;
  std::uint64_t total_flops = 0;
};

// One fresh depth-k network per requested depth, each trained as train_single
// with the same seed; FLOPs are summed over all runs.
inline IndependentResult train_independents(const NetShape& shape, const Dataset& train, const TrainConfig& cfg,
                                            std::span<const std::size_t> depths, const Dataset* eval = nullptr) {
  std::vector<std::size_t> seen;
  for (std::size_t k : depths) {
    if (k < 1 || k > shape.depth) throw std::out_of_range("train_independents: depth outside 1..K");
    if (std::find(seen.begin(), seen.end(), k) != seen.end())
      throw std::invalid_argument("train_independents: depths must be distinct");
    seen.push_back(k);
  }
  IndependentResult out;
  for (std::size_t k : depths) {
    IndependentRun run{k, init_net(shape.with_depth(k), cfg.seed), {}};
    TrainConfig single = cfg;
    single.pi.reset();
    single.eval_depths = {k};
    run.result = train_single(run.net, train, single, eval);
    out.total_flops += run.result.total_flops;
    out.runs.push_back(std::move(run));
  }
  return out;
}

// Flattens epoch logs into report records.
inline std::vector<Record> epoch_records(const std::string& run_id, const std::string& stage,
                                         const std::vector<EpochLog>& logs, const std::string& eval_split) {
  std::vector<Record> out;
  for (const auto& log : logs) {
    const auto e = static_cast<std::uint64_t>(log.epoch + 1);
    out.push_back({run_id, stage, e, 0, "train", "loss_total", log.mean_total});
    out.push_back({run_id, stage, e, 0, "train", "loss_base", log.mean_base});
    out.push_back({run_id, stage, e, 0, "train", "loss_distill", log.mean_distill});
    out.push_back({run_id, stage, e, 0, "train", "cumulative_flops", static_cast<double>(log.cumulative_flops)});
    for (std::size_t k = 1; k < log.depth_histogram.size(); ++k)
      if (log.depth_histogram[k] > 0)
        out.push_back({run_id, stage, e, k, "train", "steps", static_cast<double>(log.depth_histogram[k])});
    for (const auto& [k, acc] : log.eval_accuracy) out.push_back({run_id, stage, e, k, eval_split, "accuracy", acc});
  }
  return out;
}

}  // namespace flextrain
