#pragma once

// Checkpoint format:
//
//   flextrain-checkpoint
//   format_version=1
//   K=<depth>
//   input_dim=..  hidden_dim=..  num_classes=..  seed=..   (one key per line)
//   arrays=<name>:<d0>x<d1>,<name>:<d0>,...
//   payload_bytes=<n>
//   end_manifest
//   <n bytes: little-endian IEEE-754 float64 arrays, concatenated in `arrays` order>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "flextrain/error.hpp"
#include "flextrain/nn.hpp"

namespace flextrain {

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::string array_manifest(const Parameters& p) {
  std::string out;
  for_each_array(p, [&](const ArrayRef<const double>& a) {
    if (!out.empty()) out += ',';
    out += a.name + ':';
    for (std::size_t i = 0; i < a.shape.size(); ++i) {
      if (i != 0) out += 'x';
      out += std::to_string(a.shape[i]);
    }
  });
  return out;
}

inline void put_le(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

inline double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline std::size_t parse_size(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw IoError("checkpoint: missing manifest key '" + key + "'");
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw IoError("checkpoint: bad value for '" + key + "'");
  }
}

}  // namespace detail

inline void save_checkpoint(const ResidualNet& net, std::ostream& os) {
  const auto& s = net.shape();
  os << "flextrain-checkpoint\n"
     << "format_version=" << kCheckpointVersion << '\n'
     << "K=" << s.depth << '\n'
     << "input_dim=" << s.input_dim << '\n'
     << "hidden_dim=" << s.hidden_dim << '\n'
     << "num_classes=" << s.num_classes << '\n'
     << "seed=" << net.seed() << '\n'
     << "arrays=" << detail::array_manifest(net.params()) << '\n'
     << "payload_bytes=" << net.param_count() * 8 << '\n'
     << "end_manifest\n";
  for_each_array(net.params(), [&](const ArrayRef<const double>& a) {
    for (double v : a.values) detail::put_le(os, v);
  });
  if (!os) throw IoError("checkpoint: write failed");
}

inline std::string serialize_checkpoint(const ResidualNet& net) {
  std::ostringstream os(std::ios::binary);
  save_checkpoint(net, os);
  return std::move(os).str();
}

// Bytes a network occupies on the wire (checkpoint encoding).
inline std::size_t checkpoint_size(const ResidualNet& net) { return serialize_checkpoint(net).size(); }

inline ResidualNet load_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "flextrain-checkpoint")
    throw IoError("checkpoint: missing header line");
  std::map<std::string, std::string> kv;
  bool terminated = false;
  while (std::getline(is, line)) {
    if (line == "end_manifest") {
      terminated = true;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("checkpoint: malformed manifest line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (!terminated) throw IoError("checkpoint: manifest not terminated");
  if (detail::parse_size(kv, "format_version") != static_cast<std::size_t>(kCheckpointVersion))
    throw IoError("checkpoint: unsupported format_version");

  NetShape shape{detail::parse_size(kv, "input_dim"), detail::parse_size(kv, "hidden_dim"),
                 detail::parse_size(kv, "num_classes"), detail::parse_size(kv, "K")};
  try {
    shape.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  const auto seed = kv.count("seed") ? static_cast<std::uint64_t>(detail::parse_size(kv, "seed")) : std::uint64_t{0};
  Parameters params(shape);
  if (kv["arrays"] != detail::array_manifest(params))
    throw IoError("checkpoint: array list does not match the declared dimensions");
  std::size_t expected = 0;
  for_each_array(params, [&](const auto& a) { expected += a.values.size() * 8; });
  if (detail::parse_size(kv, "payload_bytes") != expected)
    throw IoError("checkpoint: payload_bytes does not match the array list");

  std::string payload(expected, '\0');
  is.read(payload.data(), static_cast<std::streamsize>(expected));
  if (static_cast<std::size_t>(is.gcount()) != expected) throw IoError("checkpoint: truncated payload");
  const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data());
  std::size_t off = 0;
  for_each_array(params, [&](const ArrayRef<double>& a) {
    for (auto& v : a.values) {
      v = detail::get_le(bytes + off);
      off += 8;
    }
  });
  return ResidualNet(shape, std::move(params), seed);
}

inline void save_checkpoint(const ResidualNet& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  save_checkpoint(net, os);
}

inline ResidualNet load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  return load_checkpoint(is);
}

}  // namespace flextrain
