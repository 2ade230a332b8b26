#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace flextrain;

namespace {

DeviceUpdate update_from(const ResidualNet& net, std::size_t id, std::size_t k, std::size_t n = 10) {
  return {id, k, n, extract_prefix(net, k)};
}

FederationConfig fed_config(std::size_t rounds) {
  FederationConfig f;
  f.rounds = rounds;
  f.local_epochs = 1;
  f.local.lr = 0.05;
  f.local.momentum = 0.9;
  f.local.weight_decay = 0.001;
  f.local.batch_size = 16;
  f.local.beta = 0.0;
  f.seed = 3;
  return f;
}

std::vector<DeviceProfile> devices_with_depths(const Dataset& data, const std::vector<std::size_t>& depths,
                                               std::uint64_t seed) {
  const auto plan = partition_iid(data, depths.size(), seed);
  std::vector<DeviceProfile> out;
  for (std::size_t j = 0; j < depths.size(); ++j) {
    DeviceProfile d;
    d.device_id = j;
    d.depth = depths[j];
    d.data = subset(data, plan.devices[j]);
    d.seed = derive_seed(seed, 1000 + j);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace

TEST(Aggregate, IdenticalPrefixesReproduceServer) {
  ResidualNet u = init_net(2, 4, 3, 4, 1);
  ft_test::randomize(u, 2);
  std::vector<DeviceUpdate> ups = {update_from(u, 0, 1), update_from(u, 1, 4), update_from(u, 2, 2)};
  for (auto mode : {AggregationMode::kPerLayer, AggregationMode::kPaddedAverage}) {
    const ResidualNet out = aggregate(u, ups, mode, Weighting::kUniform);
    for (std::size_t i = 0; i < ft_test::flatten(out.params()).size(); ++i)
      EXPECT_NEAR(ft_test::flatten(out.params())[i], ft_test::flatten(u.params())[i], 1e-15);
  }
}

TEST(Aggregate, ScalarToyByHand) {
  // One-unit layers, K = 2, devices at depths 1 and 2.
  const NetShape s{1, 1, 1, 2};
  auto constant_net = [&](double v) {
    ResidualNet n = init_net(s, 0);
    for_each_array(n.mutable_params(), [&](const auto& a) { std::fill(a.values.begin(), a.values.end(), v); });
    return n;
  };
  const ResidualNet server = constant_net(0.0);
  const ResidualNet a = constant_net(2.0);
  const ResidualNet b = constant_net(6.0);
  const std::vector<DeviceUpdate> ups = {update_from(a, 0, 1, 1), update_from(b, 1, 2, 3)};

  const Parameters per_layer = aggregate(server, ups, AggregationMode::kPerLayer, Weighting::kUniform).params();
  EXPECT_EQ(per_layer.pre.weight[0], 4.0);
  EXPECT_EQ(per_layer.blocks[0].fc1.weight[0], 4.0);
  EXPECT_EQ(per_layer.blocks[1].fc2.bias[0], 6.0);
  EXPECT_EQ(per_layer.head.bias[0], 4.0);

  const Parameters sized = aggregate(server, ups, AggregationMode::kPerLayer, Weighting::kDatasetSize).params();
  EXPECT_EQ(sized.pre.weight[0], 0.25 * 2.0 + 0.75 * 6.0);
  EXPECT_EQ(sized.blocks[1].fc1.weight[0], 6.0);

  const Parameters padded = aggregate(server, ups, AggregationMode::kPaddedAverage, Weighting::kUniform).params();
  EXPECT_EQ(padded.head.weight[0], 4.0);
  EXPECT_EQ(padded.blocks[1].fc1.weight[0], 3.0);  // (server 0 + device 6) / 2
}

TEST(Aggregate, UntrainedLayersKeepServerWeights) {
  ResidualNet server = init_net(2, 4, 3, 4, 1);
  ft_test::randomize(server, 3);
  ResidualNet dev = server;
  ft_test::randomize(dev, 4);
  const ResidualNet out =
      aggregate(server, {update_from(dev, 5, 2)}, AggregationMode::kPerLayer, Weighting::kUniform);
  EXPECT_EQ(out.params().blocks[2], server.params().blocks[2]);
  EXPECT_EQ(out.params().blocks[3], server.params().blocks[3]);
  EXPECT_EQ(out.params().blocks[0], dev.params().blocks[0]);
  EXPECT_EQ(out.params().head, dev.params().head);
}

TEST(Aggregate, MatchesBruteForceOracle) {
  std::mt19937_64 gen(99);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t K = 1 + gen() % 4;
    const std::size_t J = 1 + gen() % 5;
    ResidualNet server = init_net(2, 3, 2, K, inst);
    ft_test::randomize(server, 1000 + inst);
    std::vector<DeviceUpdate> ups;
    std::vector<ResidualNet> full;
    for (std::size_t j = 0; j < J; ++j) {
      ResidualNet d = server;
      ft_test::randomize(d, 2000 + 10 * inst + j);
      const std::size_t k = 1 + gen() % K;
      ups.push_back(update_from(d, J - 1 - j, k, 1 + gen() % 50));
      full.push_back(std::move(d));
    }
    const auto weighting = inst % 2 == 0 ? Weighting::kUniform : Weighting::kDatasetSize;
    const auto mode = inst % 3 == 0 ? AggregationMode::kPaddedAverage : AggregationMode::kPerLayer;
    const ResidualNet out = aggregate(server, ups, mode, weighting);

    // Oracle: element by element over full-length copies.
    std::vector<std::vector<double>> flat;
    for (const auto& d : full) flat.push_back(ft_test::flatten(d.params()));
    const auto server_flat = ft_test::flatten(server.params());
    std::vector<std::size_t> layer_of;
    for_each_array(server.params(), [&](const auto& a) { layer_of.insert(layer_of.end(), a.values.size(), a.layer); });
    const auto got = ft_test::flatten(out.params());
    for (std::size_t e = 0; e < got.size(); ++e) {
      double num = 0.0, den = 0.0;
      for (std::size_t j = 0; j < J; ++j) {
        const double w = weighting == Weighting::kUniform ? 1.0 : static_cast<double>(ups[j].num_samples);
        if (layer_active(layer_of[e], ups[j].depth, K)) {
          num += w * flat[j][e];
          den += w;
        } else if (mode == AggregationMode::kPaddedAverage) {
          num += w * server_flat[e];
          den += w;
        }
      }
      const double expected = den > 0.0 ? num / den : server_flat[e];
      ASSERT_NEAR(got[e], expected, 1e-12) << "instance " << inst << " element " << e;
    }
  }
}

TEST(Aggregate, MismatchedUpdatesRejected) {
  const ResidualNet server = init_net(2, 4, 3, 3, 1);
  const ResidualNet other = init_net(2, 5, 3, 3, 1);
  EXPECT_THROW(aggregate(server, {}, AggregationMode::kPerLayer, Weighting::kUniform), std::invalid_argument);
  EXPECT_THROW(aggregate(server, {update_from(other, 0, 2)}, AggregationMode::kPerLayer, Weighting::kUniform),
               std::invalid_argument);
  DeviceUpdate bad = update_from(server, 0, 2);
  bad.depth = 3;
  EXPECT_THROW(aggregate(server, {bad}, AggregationMode::kPerLayer, Weighting::kUniform), std::invalid_argument);
}

TEST(LocalTrain, ZeroEpochsLeavesWeights) {
  const Dataset data = gen_spiral(10, 3, 0.1, 1);
  const ResidualNet net = init_net(2, 4, 3, 2, 1);
  DeviceState st;
  const auto r = detail::local_train(data, 5, net, fed_config(1).local, 0, st);
  EXPECT_TRUE(r.weights.same_weights(net));
  EXPECT_EQ(r.steps, 0u);
}

TEST(LocalTrain, OneFullBatchIsOneSgdStep) {
  const Dataset data = gen_spiral(10, 3, 0.1, 1);
  ResidualNet net = init_net(2, 4, 3, 3, 1);
  ft_test::randomize(net, 2, 0.3);
  TrainConfig cfg = fed_config(1).local;
  cfg.batch_size = 1000;
  cfg.beta = 0.2;
  DeviceState st;
  const auto r = detail::local_train(data, 5, net, cfg, 1, st);

  // Full batch: the order does not change the mean loss but does change the
  // row order, so gather in the same shuffled order.
  Rng rng(5);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < order.size(); ++i) std::swap(order[i], order[i + rng.uniform_index(order.size() - i)]);
  Matrix x;
  std::vector<int> y;
  gather(data, order, x, y);
  ResidualNet ref = net;
  SgdState sgd;
  sgd_step(ref, federated_distill_loss(ref, x, y, 3, 0.2).grads, {cfg.lr, cfg.momentum, cfg.weight_decay}, sgd);
  EXPECT_TRUE(r.weights.same_weights(ref));
  EXPECT_EQ(r.steps, 1u);
}

TEST(Federated, SingleFullDeviceReducesToCentralTraining) {
  const Dataset data = gen_spiral(30, 3, 0.1, 1);
  const Dataset test = gen_spiral(10, 3, 0.1, 2);
  auto devices = devices_with_depths(data, {3}, 7);
  FederationConfig f = fed_config(4);
  f.local_epochs = 2;
  f.local.beta = 0.05;
  const ResidualNet init = init_net(2, 6, 3, 3, 1);
  const FedResult fed = run_federated(init, devices, test, f);

  ResidualNet central = init;
  TrainConfig cfg = f.local;
  cfg.epochs = 8;
  cfg.seed = devices[0].seed;
  cfg.distill_mode = DistillMode::kFederated;
  cfg.pi = ActivationDistribution::one_hot(3, 3);
  train_flextrain(central, devices[0].data, cfg);
  EXPECT_TRUE(fed.server.same_weights(central));
}

TEST(Federated, ZeroRoundsLeavesServer) {
  const Dataset data = gen_spiral(30, 3, 0.1, 1);
  auto devices = devices_with_depths(data, {1, 2, 3}, 7);
  const ResidualNet init = init_net(2, 6, 3, 3, 1);
  const FedResult fed = run_federated(init, devices, data, fed_config(0));
  EXPECT_TRUE(fed.server.same_weights(init));
  EXPECT_TRUE(fed.reports.empty());
}

TEST(Federated, ThreadCountDoesNotChangeResults) {
  const Dataset data = gen_spiral(40, 3, 0.1, 1);
  auto devices = devices_with_depths(data, {1, 2, 3, 3, 2}, 7);
  FederationConfig f = fed_config(3);
  f.local.beta = 0.05;
  f.devices_per_round = 3;
  const ResidualNet init = init_net(2, 6, 3, 3, 1);
  const FedResult one = run_federated(init, devices, data, f);
  f.threads = 4;
  const FedResult four = run_federated(init, devices, data, f);
  EXPECT_TRUE(one.server.same_weights(four.server));
  EXPECT_EQ(one.reports, four.reports);
  for (const auto& r : one.reports) EXPECT_EQ(r.sampled.size(), 3u);
}

TEST(Federated, ReportsCoverDeviceDepthsAndBytes) {
  const Dataset data = gen_spiral(40, 3, 0.1, 1);
  auto devices = devices_with_depths(data, {1, 3}, 7);
  FederationConfig f = fed_config(2);
  f.eval_depths = {2};
  const ResidualNet init = init_net(2, 6, 3, 3, 1);
  const FedResult fed = run_federated(init, devices, data, f);
  const auto& rep = fed.reports.back();
  ASSERT_EQ(rep.depth_accuracy.size(), 3u);
  EXPECT_EQ(rep.bytes_to_device[0].second, checkpoint_size(extract_prefix(init, 1)));
  EXPECT_EQ(rep.bytes_to_device[1].second, checkpoint_size(init));
  EXPECT_NEAR(rep.mean_device_accuracy, (rep.depth_accuracy[0].second + rep.depth_accuracy[2].second) / 2, 1e-15);
}

TEST(Federated, IidDevicesLearn) {
  const Matrix centers = blob_centers(4, 5, 4.0, 1);
  const Dataset train = sample_blobs(centers, 200, 2);
  const Dataset test = sample_blobs(centers, 100, 3);
  const auto plan = partition_iid(train, 8, 2);
  const auto devices = make_devices({5, 16, 4, 3}, train, plan, reference_capacities(8), 5);
  FederationConfig f = fed_config(10);
  f.local.lr = 0.01;
  const FedResult fed = run_federated(init_net(5, 16, 4, 3, 1), devices, test, f);
  EXPECT_GT(fed.reports.back().mean_device_accuracy, 0.25 + 0.20);
}

TEST(FedSmall, UsesWeakestDepth) {
  const Dataset data = gen_spiral(30, 3, 0.1, 1);
  auto devices = devices_with_depths(data, {3, 2, 3}, 7);
  EXPECT_EQ(weakest_depth(devices), 2u);
  const ResidualNet init = init_net(2, 6, 3, 3, 1);
  const FedResult small = run_fedsmall(init, devices, data, fed_config(2));
  EXPECT_EQ(small.server.params().blocks[2], init.params().blocks[2]);
  EXPECT_NE(small.server.params().blocks[1], init.params().blocks[1]);
}

TEST(FedSmall, EqualsFederatedWhenAllDevicesAreFull) {
  const Dataset data = gen_spiral(30, 3, 0.1, 1);
  auto devices = devices_with_depths(data, {3, 3, 3}, 7);
  const ResidualNet init = init_net(2, 6, 3, 3, 1);
  FederationConfig f = fed_config(2);
  const FedResult small = run_fedsmall(init, devices, data, f);
  const FedResult flex = run_federated(init, devices, data, f);
  EXPECT_TRUE(small.server.same_weights(flex.server));
}

TEST(FedClass, SingleClassEqualsFedSmall) {
  const Dataset data = gen_spiral(30, 3, 0.1, 1);
  auto devices = devices_with_depths(data, {2, 2, 2}, 7);
  const ResidualNet init = init_net(2, 6, 3, 3, 1);
  FederationConfig f = fed_config(2);
  const FedClassResult cls = run_fedclass(init, devices, data, f);
  const FedResult small = run_fedsmall(init, devices, data, f);
  ASSERT_EQ(cls.models.size(), 1u);
  EXPECT_TRUE(cls.models[0].second.same_weights(small.server));
}

TEST(FedClass, ClassesPartitionDevices) {
  const Dataset data = gen_spiral(30, 3, 0.1, 1);
  auto devices = devices_with_depths(data, {1, 3, 2, 3, 1}, 7);
  const FedClassResult cls = run_fedclass(init_net(2, 6, 3, 3, 1), devices, data, fed_config(1));
  ASSERT_EQ(cls.classes.size(), 3u);
  std::vector<std::size_t> all;
  for (const auto& [k, ids] : cls.classes) {
    for (auto id : ids) EXPECT_EQ(devices[id].depth, k);
    all.insert(all.end(), ids.begin(), ids.end());
  }
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(cls.reports.back().sampled.size(), 5u);
}

TEST(Devices, ReferenceCapacitiesMapToDepths) {
  const auto caps = reference_capacities(8);
  EXPECT_EQ(caps, (std::vector<double>{0.052, 0.117, 0.246, 0.483, 0.655, 0.827, 1.0, 1.0}));
  const Dataset data = gen_spiral(40, 3, 0.1, 1);
  const auto devices = make_devices({2, 32, 3, 6}, data, partition_iid(data, 8, 1), caps, 9);
  std::vector<std::size_t> depths;
  for (const auto& d : devices) depths.push_back(d.depth);
  EXPECT_EQ(depths, (std::vector<std::size_t>{1, 1, 1, 2, 3, 4, 6, 6}));
  EXPECT_EQ(devices[3].seed, derive_seed(9, 1003));
}
