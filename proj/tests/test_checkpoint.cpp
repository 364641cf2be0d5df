#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "modnet/checkpoint.hpp"
#include "modnet/composite.hpp"

using namespace modnet;

namespace {

namespace fs = std::filesystem;

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("modnet_ckpt_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct Fixture {
  Composite net;
  OptimizerState opt;
  TrainerMeta meta;

  Fixture() {
    BuiltModule base = build_module(parse_arch("base", "(3x3x3)-maxpool2-dense12", true),
                                    {1, 6, 6}, 7);
    BuiltModule module = build_module(parse_arch("module", "(2x3x3)-maxpool2-dense6"), {1, 6, 6}, 8);
    net = compose_two_towers(base, module, 4, 1e-6);
    std::vector<const Tensor*> shapes;
    for (int id : net.trainable()) shapes.push_back(&net.graph.value(id));
    opt = OptimizerState::init(OptimizerKind::kAdam, {}, shapes);
    opt.step_count = 17;
    opt.m[0].fill(0.125);
    opt.v[2].fill(2.5e-3);
    meta.step = 42;
    meta.rng_state = "12345 67890 1122";
    meta.config_json = "{\"note\":\"fixture\"}";
  }
};

}  // namespace

TEST_CASE("crc32: standard check value") {
  const char* s = "123456789";
  CHECK(crc32(s, 9) == 0xCBF43926u);
  CHECK(crc32(s, 0) == 0u);
}

TEST_CASE("checkpoint: save/load is the identity, re-save is byte-identical") {
  Fixture fx;
  const std::string path = tmp_path("roundtrip.ckpt");
  save_checkpoint(path, fx.net, fx.opt, fx.meta);

  LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.net.topology == Topology::kTwoTowers);
  CHECK(loaded.net.num_classes == 4);
  CHECK(loaded.net.activity_lambda == 1e-6);
  CHECK(loaded.meta.step == 42);
  CHECK(loaded.meta.rng_state == fx.meta.rng_state);
  CHECK(loaded.meta.config_json == fx.meta.config_json);
  CHECK(loaded.frozen_hash == frozen_payload_hash(fx.net));

  REQUIRE(loaded.net.graph.params().size() == fx.net.graph.params().size());
  for (int id : fx.net.graph.params()) {
    const Node& a = fx.net.graph.node(id);
    const Node& b = loaded.net.graph.node(id);
    CHECK(a.name == b.name);
    CHECK(a.is_frozen == b.is_frozen);
    CHECK(bit_equal(a.value, b.value));
  }
  CHECK(loaded.opt.step_count == 17);
  for (std::size_t i = 0; i < fx.opt.m.size(); ++i) CHECK(bit_equal(loaded.opt.m[i], fx.opt.m[i]));
  for (std::size_t i = 0; i < fx.opt.v.size(); ++i) CHECK(bit_equal(loaded.opt.v[i], fx.opt.v[i]));

  const std::string resaved = tmp_path("resave.ckpt");
  save_checkpoint(resaved, loaded.net, loaded.opt, loaded.meta);
  CHECK(slurp(path) == slurp(resaved));

  // loaded networks predict identically
  Tensor img = Tensor::constant({1, 6, 6}, 0.3);
  CHECK(fx.net.predict(img) == loaded.net.predict(img));

  fs::remove(path);
  fs::remove(resaved);
}

TEST_CASE("checkpoint: single corrupted payload byte fails the checksum") {
  Fixture fx;
  const std::string path = tmp_path("corrupt.ckpt");
  save_checkpoint(path, fx.net, fx.opt, fx.meta);
  std::string bytes = slurp(path);
  bytes[bytes.size() / 2] ^= 0x40;
  spit(path, bytes);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointChecksumError);
  fs::remove(path);
}

TEST_CASE("checkpoint: truncation is its own error") {
  Fixture fx;
  const std::string path = tmp_path("trunc.ckpt");
  save_checkpoint(path, fx.net, fx.opt, fx.meta);
  std::string bytes = slurp(path);

  spit(path, bytes.substr(0, 10));
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointTruncatedError);

  // cutting the payload breaks the checksum first; that is still a loud failure
  spit(path, bytes.substr(0, bytes.size() - 100));
  CHECK_THROWS(load_checkpoint(path));
  fs::remove(path);
}

TEST_CASE("checkpoint: version and magic mismatches are rejected") {
  Fixture fx;
  const std::string path = tmp_path("version.ckpt");
  save_checkpoint(path, fx.net, fx.opt, fx.meta);
  std::string bytes = slurp(path);

  SUBCASE("foreign magic") {
    std::string junk = "JUNKFILEjunkfilejunkfile";
    spit(path, junk);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointVersionError);
  }

  SUBCASE("future version, checksum fixed up") {
    bytes[8] = 9;  // version word sits right after the 8-byte magic
    const std::uint32_t fixed = crc32(bytes.data(), bytes.size() - 4);
    for (int i = 0; i < 4; ++i)
      bytes[bytes.size() - 4 + i] = static_cast<char>((fixed >> (8 * i)) & 0xff);
    spit(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointVersionError);
  }
  fs::remove(path);
}

TEST_CASE("frozen_payload_hash: same frozen base gives the same hash across topologies") {
  BuiltModule base = build_module(parse_arch("base", "(3x3x3)-maxpool2-dense12", true), {1, 6, 6}, 7);
  BuiltModule module = build_module(parse_arch("module", "(2x3x3)-maxpool2-dense6"), {1, 6, 6}, 8);
  Composite towers = compose_two_towers(base, module, 4);

  ModuleSpec mspec = parse_arch("module", "(2x3x3)-maxpool2-dense6");
  Composite stitch = compose_stitch(base, mspec, mirrored_pairs(mspec), 4, 10);

  CHECK(frozen_payload_hash(towers) == frozen_payload_hash(stitch));

  // and the hash moves when any frozen scalar moves
  Composite tweaked = towers;
  Tensor w = tweaked.graph.value(tweaked.base_nodes.param_ids[0]);
  w[0] += 1e-9;
  tweaked.graph.set_value(tweaked.base_nodes.param_ids[0], w);
  CHECK(frozen_payload_hash(tweaked) != frozen_payload_hash(towers));
}

TEST_CASE("checkpoint: finetune and stitch topologies rebuild correctly") {
  BuiltModule base = build_module(parse_arch("base", "(3x3x3)-maxpool2-dense12"), {1, 6, 6}, 7);
  Composite ft = compose_finetune(base, 3);
  std::vector<const Tensor*> shapes;
  for (int id : ft.trainable()) shapes.push_back(&ft.graph.value(id));
  OptimizerState opt = OptimizerState::init(OptimizerKind::kRmsProp, {}, shapes);

  const std::string path = tmp_path("finetune.ckpt");
  save_checkpoint(path, ft, opt, {});
  LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.net.topology == Topology::kFinetune);
  CHECK(loaded.opt.kind == OptimizerKind::kRmsProp);
  CHECK(loaded.opt.m.empty());
  Tensor img = Tensor::constant({1, 6, 6}, 0.6);
  CHECK(ft.predict(img) == loaded.net.predict(img));
  fs::remove(path);

  set_frozen(base, true);
  ModuleSpec mspec = parse_arch("module", "(2x3x3)-maxpool2-dense6");
  Composite st = compose_stitch(base, mspec, mirrored_pairs(mspec), 3, 12, 1e-6);
  std::vector<const Tensor*> st_shapes;
  for (int id : st.trainable()) st_shapes.push_back(&st.graph.value(id));
  OptimizerState st_opt = OptimizerState::init(OptimizerKind::kAdam, {}, st_shapes);
  const std::string st_path = tmp_path("stitch.ckpt");
  save_checkpoint(st_path, st, st_opt, {});
  LoadedCheckpoint st_loaded = load_checkpoint(st_path);
  CHECK(st_loaded.net.topology == Topology::kStitch);
  CHECK(st_loaded.net.layer_pairs == st.layer_pairs);
  CHECK(st.predict(img) == st_loaded.net.predict(img));
  fs::remove(st_path);
}
