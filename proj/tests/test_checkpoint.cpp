#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

using namespace flextrain;

TEST(Checkpoint, BitExactRoundTrip) {
  ResidualNet net = init_net(3, 5, 4, 3, 17);
  ft_test::randomize(net, 5);
  net.mutable_params().pre.bias[0] = -0.0;
  net.mutable_params().head.bias[1] = 1e-300;
  const std::string bytes = serialize_checkpoint(net);
  std::istringstream is(bytes);
  const ResidualNet back = load_checkpoint(is);
  EXPECT_TRUE(back.same_weights(net));
  EXPECT_EQ(back.seed(), 17u);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_TRUE(std::signbit(back.params().pre.bias[0]));
}

TEST(Checkpoint, FileRoundTrip) {
  ft_test::TempDir dir;
  ResidualNet net = init_net(2, 4, 3, 2, 3);
  ft_test::randomize(net, 9);
  save_checkpoint(net, dir.file("a.ckpt"));
  EXPECT_TRUE(load_checkpoint(dir.file("a.ckpt")).same_weights(net));
  EXPECT_EQ(checkpoint_size(net), ft_test::read_file(dir.file("a.ckpt")).size());
}

TEST(Checkpoint, PayloadSizeMatchesParameterCount) {
  const ResidualNet net = init_net(2, 4, 3, 2, 3);
  const std::string bytes = serialize_checkpoint(net);
  const auto end = bytes.find("end_manifest\n") + std::string("end_manifest\n").size();
  EXPECT_EQ(bytes.size() - end, net.param_count() * 8);
}

TEST(Checkpoint, TruncatedPayloadRejected) {
  const std::string bytes = serialize_checkpoint(init_net(2, 4, 3, 2, 3));
  std::istringstream is(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_checkpoint(is), IoError);
}

TEST(Checkpoint, TruncatedManifestRejected) {
  const std::string bytes = serialize_checkpoint(init_net(2, 4, 3, 2, 3));
  std::istringstream is(bytes.substr(0, 40));
  EXPECT_THROW(load_checkpoint(is), IoError);
}

TEST(Checkpoint, BadHeaderRejected) {
  std::string bytes = serialize_checkpoint(init_net(2, 4, 3, 2, 3));
  bytes[0] = 'X';
  std::istringstream is(bytes);
  EXPECT_THROW(load_checkpoint(is), IoError);
}

TEST(Checkpoint, InconsistentDimensionsRejected) {
  std::string bytes = serialize_checkpoint(init_net(2, 4, 3, 2, 3));
  const auto pos = bytes.find("hidden_dim=4");
  bytes.replace(pos, 12, "hidden_dim=5");
  std::istringstream is(bytes);
  EXPECT_THROW(load_checkpoint(is), IoError);
}

TEST(Checkpoint, UnsupportedVersionRejected) {
  std::string bytes = serialize_checkpoint(init_net(2, 4, 3, 2, 3));
  bytes.replace(bytes.find("format_version=1"), 16, "format_version=2");
  std::istringstream is(bytes);
  EXPECT_THROW(load_checkpoint(is), IoError);
}

TEST(Checkpoint, MissingFileRejected) {
  EXPECT_THROW(load_checkpoint(std::string("/nonexistent/dir/x.ckpt")), IoError);
}
