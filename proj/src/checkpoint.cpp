#include "modnet/checkpoint.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "modnet/errors.hpp"

namespace modnet {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'M', 'O', 'D', 'N', 'E', 'T', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

const std::array<std::uint32_t, 256>& crc_table() {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  return table;
}

void write_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void write_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(const std::string& buf, std::size_t& pos) {
  if (pos + 4 > buf.size()) throw CheckpointTruncatedError("checkpoint ends inside a word");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(buf[pos++])) << (8 * i);
  return v;
}

std::uint64_t read_u64(const std::string& buf, std::size_t& pos) {
  if (pos + 8 > buf.size()) throw CheckpointTruncatedError("checkpoint ends inside a word");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(buf[pos++])) << (8 * i);
  return v;
}

void append_tensor(std::string& out, const Tensor& t) {
  out.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(double));
}

void read_tensor(const std::string& buf, std::size_t& pos, Tensor& t) {
  const std::size_t bytes = static_cast<std::size_t>(t.numel()) * sizeof(double);
  if (pos + bytes > buf.size()) throw CheckpointTruncatedError("checkpoint ends inside a tensor");
  std::memcpy(t.data(), buf.data() + pos, bytes);
  pos += bytes;
}

// trainable first, frozen after: the payload order contract
std::vector<int> payload_order(const Composite& net) {
  std::vector<int> order = net.graph.trainable_params();
  for (int id : net.graph.params())
    if (net.graph.node(id).is_frozen) order.push_back(id);
  return order;
}

json hyper_json(const OptimizerState& opt) {
  return json{{"kind", optimizer_name(opt.kind)}, {"lr", opt.hyper.lr},
              {"beta1", opt.hyper.beta1},         {"beta2", opt.hyper.beta2},
              {"rho", opt.hyper.rho},             {"epsilon", opt.hyper.epsilon},
              {"step_count", opt.step_count}};
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t crc) {
  const auto& table = crc_table();
  const unsigned char* p = static_cast<const unsigned char*>(data);
  crc ^= 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xff] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

std::uint32_t frozen_payload_hash(const Composite& net) {
  std::string bytes;
  for (int id : net.graph.params()) {
    const Node& n = net.graph.node(id);
    if (n.is_frozen) append_tensor(bytes, n.value);
  }
  return crc32(bytes.data(), bytes.size());
}

void save_checkpoint(const std::string& path, const Composite& net, const OptimizerState& opt,
                     const TrainerMeta& meta) {
  const std::vector<int> order = payload_order(net);
  const std::vector<int> trainable = net.graph.trainable_params();
  if (opt.v.size() != trainable.size())
    throw ContractError("optimizer state does not align with the composite's trainable set");

  json params = json::array();
  for (int id : order) {
    const Node& n = net.graph.node(id);
    params.push_back({{"name", n.name},
                      {"shape", n.value.shape()},
                      {"trainable", !n.is_frozen}});
  }

  json header{
      {"format", "modnet-checkpoint"},
      {"topology", topology_name(net.topology)},
      {"num_classes", net.num_classes},
      {"input_shape", net.input_shape},
      {"lambda", net.activity_lambda},
      {"base", {{"name", net.base_spec.name}, {"arch", arch_string(net.base_spec)},
                {"frozen", net.base_spec.frozen}}},
      {"optimizer", hyper_json(opt)},
      {"trainer", {{"step", meta.step}, {"rng", meta.rng_state}, {"config", meta.config_json}}},
      {"params", params},
      {"frozen_hash", frozen_payload_hash(net)},
  };
  if (net.module_spec) {
    header["module"] = {{"name", net.module_spec->name}, {"arch", arch_string(*net.module_spec)}};
    json pairs = json::array();
    for (auto [b, m] : net.layer_pairs) pairs.push_back({b, m});
    header["layer_pairs"] = pairs;
  }

  std::string blob;
  blob.append(kMagic, sizeof(kMagic));
  write_u32(blob, kVersion);
  const std::string header_str = header.dump();
  write_u64(blob, header_str.size());
  blob += header_str;
  for (int id : order) append_tensor(blob, net.graph.value(id));
  if (opt.kind == OptimizerKind::kAdam)
    for (const Tensor& t : opt.m) append_tensor(blob, t);
  for (const Tensor& t : opt.v) append_tensor(blob, t);
  write_u32(blob, crc32(blob.data(), blob.size()));

  // atomic: write next to the target, then rename over it
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw DataError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), {});

  if (buf.size() < sizeof(kMagic) + 8)
    throw CheckpointTruncatedError(path + " is too short to be a checkpoint");
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointVersionError(path + " is not a modnet checkpoint");

  // the trailing checksum covers everything before it
  std::size_t pos = buf.size() - 4;
  const std::uint32_t stored_crc = read_u32(buf, pos);
  if (crc32(buf.data(), buf.size() - 4) != stored_crc)
    throw CheckpointChecksumError(path + " failed its checksum");
  buf.resize(buf.size() - 4);

  pos = sizeof(kMagic);
  const std::uint32_t version = read_u32(buf, pos);
  if (version != kVersion)
    throw CheckpointVersionError(path + " has format version " + std::to_string(version) +
                                 ", expected " + std::to_string(kVersion));
  const std::uint64_t header_len = read_u64(buf, pos);
  if (pos + header_len > buf.size()) throw CheckpointTruncatedError(path + " ends inside the header");
  json header;
  try {
    header = json::parse(buf.substr(pos, header_len));
  } catch (const json::exception& e) {
    throw CheckpointChecksumError(path + " header is not valid JSON: " + e.what());
  }
  pos += header_len;

  // rebuild the composite from its specs, then overwrite the parameters
  const std::string topology = header.at("topology");
  const int num_classes = header.at("num_classes");
  const Shape input_shape = header.at("input_shape").get<Shape>();
  const double lambda = header.at("lambda");
  const json& base_j = header.at("base");
  ModuleSpec base_spec = parse_arch(base_j.at("name"), base_j.at("arch"), base_j.at("frozen"));

  LoadedCheckpoint out;
  if (topology == "finetune") {
    out.net = compose_finetune(build_module(base_spec, input_shape, 0), num_classes);
  } else {
    const json& mod_j = header.at("module");
    ModuleSpec module_spec = parse_arch(mod_j.at("name"), mod_j.at("arch"));
    if (topology == "two_towers") {
      out.net = compose_two_towers(build_module(base_spec, input_shape, 0),
                                   build_module(module_spec, input_shape, 0), num_classes, lambda);
    } else if (topology == "stitch") {
      std::vector<std::pair<int, int>> pairs;
      for (const auto& p : header.at("layer_pairs")) pairs.push_back({p.at(0), p.at(1)});
      out.net = compose_stitch(build_module(base_spec, input_shape, 0), module_spec, pairs,
                               num_classes, 0, lambda);
    } else {
      throw CheckpointVersionError(path + " names unknown topology '" + topology + "'");
    }
  }

  const std::vector<int> order = payload_order(out.net);
  const json& params = header.at("params");
  if (params.size() != order.size())
    throw DataError(path + " parameter manifest does not match the rebuilt composite");
  for (std::size_t i = 0; i < order.size(); ++i) {
    Node& n = out.net.graph.node(order[i]);
    if (params[i].at("name") != n.name || params[i].at("shape").get<Shape>() != n.value.shape())
      throw DataError(path + " parameter " + std::to_string(i) + " ('" +
                      std::string(params[i].at("name")) + "') does not match the rebuilt '" +
                      n.name + "' " + shape_str(n.value.shape()));
    read_tensor(buf, pos, n.value);
  }

  const json& opt_j = header.at("optimizer");
  OptimizerHyper hyper;
  hyper.lr = opt_j.at("lr");
  hyper.beta1 = opt_j.at("beta1");
  hyper.beta2 = opt_j.at("beta2");
  hyper.rho = opt_j.at("rho");
  hyper.epsilon = opt_j.at("epsilon");
  std::vector<const Tensor*> shapes;
  for (int id : out.net.graph.trainable_params()) shapes.push_back(&out.net.graph.value(id));
  out.opt = OptimizerState::init(optimizer_from_name(opt_j.at("kind")), hyper, shapes);
  out.opt.step_count = opt_j.at("step_count");
  if (out.opt.kind == OptimizerKind::kAdam)
    for (Tensor& t : out.opt.m) read_tensor(buf, pos, t);
  for (Tensor& t : out.opt.v) read_tensor(buf, pos, t);
  if (pos != buf.size()) throw CheckpointChecksumError(path + " carries trailing bytes");

  const json& trainer = header.at("trainer");
  out.meta.step = trainer.at("step");
  out.meta.rng_state = trainer.at("rng");
  out.meta.config_json = trainer.at("config");
  out.frozen_hash = header.at("frozen_hash");

  out.net.graph.forward();  // leave node values consistent with the loaded parameters
  return out;
}

}  // namespace modnet
