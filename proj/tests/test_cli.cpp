#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "modnet/data.hpp"
#include "modnet/train.hpp"

// End-to-end runs of the installed CLI binary.
#ifndef MODNET_CLI_PATH
#error "MODNET_CLI_PATH must point at the modnet binary"
#endif

using namespace modnet;
namespace fs = std::filesystem;

namespace {

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("modnet_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

int run(const std::string& args, const std::string& log) {
  const std::string cmd = std::string(MODNET_CLI_PATH) + " " + args + " >" + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

const char* kConfig = R"({
  "seeds": [1],
  "base": {"name": "base", "arch": "(4x3x3)-maxpool2-dense16"},
  "stitch": {"arch": "(2x3x3)-maxpool2-dense8"},
  "data": {
    "kind": "synthetic",
    "synthetic": {"seed": 3, "k_src": 4, "k_tgt": 4, "n_per_class": 24,
                   "test_per_class": 12, "image_size": 10, "shift": 0.5, "noise": 0.1}
  },
  "train": {"epochs": 3, "batch_size": 8, "augment": 0.0, "lambda": 1e-6},
  "transfer": {"per_class": [2], "repeats": 3, "batch_per_class": 1,
                "topologies": ["finetune", "two_towers", "stitch", "scratch"]},
  "viz": {"targets": ["base:0:*"], "iterations": 12}
})";

}  // namespace

TEST_CASE("cli: train/transfer/viz/resume/plot round trip") {
  Workspace ws;
  std::ofstream(ws.path("cfg.json")) << kConfig;

  // train
  REQUIRE(run("train --config " + ws.path("cfg.json") + " --out " + ws.path("run"),
              ws.path("train.log")) == 0);
  REQUIRE(fs::exists(ws.path("run/base.ckpt")));
  CHECK(slurp(ws.path("train.log")).find("final test accuracy") != std::string::npos);

  // deterministic re-run writes the identical checkpoint
  fs::copy_file(ws.path("run/base.ckpt"), ws.path("first.ckpt"));
  REQUIRE(run("train --config " + ws.path("cfg.json") + " --out " + ws.path("run"),
              ws.path("train2.log")) == 0);
  CHECK(slurp(ws.path("run/base.ckpt")) == slurp(ws.path("first.ckpt")));

  // transfer
  REQUIRE(run("transfer --config " + ws.path("cfg.json") + " --checkpoint " +
                  ws.path("run/base.ckpt") + " --out " + ws.path("run"),
              ws.path("transfer.log")) == 0);
  REQUIRE(fs::exists(ws.path("run/curves.csv")));
  std::vector<CurveRow> rows = read_curve_csv(ws.path("run/curves.csv"));
  CHECK(rows.size() == 4 * 2);  // 4 topologies x 2 batches at per_class=2
  CHECK(slurp(ws.path("transfer.log")).find("frozen base payload crc32") != std::string::npos);

  // flag overrides config: only two topologies, sweep {2} stays
  REQUIRE(run("transfer --config " + ws.path("cfg.json") + " --checkpoint " +
                  ws.path("run/base.ckpt") + " --topology finetune --topology two_towers" +
                  " --out " + ws.path("override"),
              ws.path("override.log")) == 0);
  CHECK(read_curve_csv(ws.path("override/curves.csv")).size() == 2 * 2);

  // plot
  REQUIRE(run("plot --csv " + ws.path("run/curves.csv") + " --out " + ws.path("run/curves.svg"),
              ws.path("plot.log")) == 0);
  const std::string svg = slurp(ws.path("run/curves.svg"));
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);

  // viz: 4 first-layer filters plus manifest
  REQUIRE(run("viz --config " + ws.path("cfg.json") + " --checkpoint " + ws.path("run/base.ckpt") +
                  " --out " + ws.path("run"),
              ws.path("viz.log")) == 0);
  for (int f = 0; f < 4; ++f)
    CHECK(fs::exists(ws.path("run/viz/base_layer0_filter" + std::to_string(f) + ".pgm")));
  const std::string manifest = slurp(ws.path("run/viz/manifest.json"));
  CHECK(manifest.find("\"filter\": 3") != std::string::npos);

  // same seed, same image bytes
  REQUIRE(run("viz --config " + ws.path("cfg.json") + " --checkpoint " + ws.path("run/base.ckpt") +
                  " --out " + ws.path("vizagain"),
              ws.path("viz2.log")) == 0);
  CHECK(slurp(ws.path("run/viz/base_layer0_filter0.pgm")) ==
        slurp(ws.path("vizagain/viz/base_layer0_filter0.pgm")));

  // resume from the checkpoint for a few steps
  REQUIRE(run("resume --checkpoint " + ws.path("run/base.ckpt") + " --steps 3 --out " +
                  ws.path("resumed"),
              ws.path("resume.log")) == 0);
  CHECK(fs::exists(ws.path("resumed/base.ckpt")));
}

TEST_CASE("cli: distinct exit codes per failure class") {
  Workspace ws;

  // config failures -> 2
  CHECK(run("train --config " + ws.path("missing.json"), ws.path("a.log")) == 2);
  std::ofstream(ws.path("bad.json")) << "{\"train\": {\"epochs\": 0}}";
  CHECK(run("train --config " + ws.path("bad.json"), ws.path("b.log")) == 2);
  CHECK(run("definitely-not-a-subcommand", ws.path("c.log")) == 2);

  // data failures -> 3
  std::ofstream(ws.path("idx.json")) << R"({
    "data": {"kind": "idx",
              "source": {"images": ")" << ws.path("nope-images") << R"(",
                          "labels": ")" << ws.path("nope-labels") << R"("}}
  })";
  CHECK(run("train --config " + ws.path("idx.json"), ws.path("d.log")) == 3);

  std::ofstream(ws.path("junk.ckpt")) << "JUNKFILEjunkfilejunkfile";
  std::ofstream(ws.path("min.json")) << R"({"checkpoint": ")" << ws.path("junk.ckpt") << R"("})";
  CHECK(run("transfer --config " + ws.path("min.json"), ws.path("e.log")) == 3);

  // numeric failure -> 4: resume a checkpoint whose parameters overflow
  std::ofstream(ws.path("cfg.json")) << kConfig;
  REQUIRE(run("train --config " + ws.path("cfg.json") + " --out " + ws.path("run"),
              ws.path("f.log")) == 0);
  {
    LoadedCheckpoint loaded = load_checkpoint(ws.path("run/base.ckpt"));
    Tensor huge = loaded.net.graph.value(loaded.net.head_params[0]);
    huge.fill(1e308);
    loaded.net.graph.set_value(loaded.net.head_params[0], huge);
    save_checkpoint(ws.path("run/base.ckpt"), loaded.net, loaded.opt, loaded.meta);
  }
  CHECK(run("resume --checkpoint " + ws.path("run/base.ckpt") + " --steps 1",
            ws.path("g.log")) == 4);
}

TEST_CASE("cli: MODNET_OUT env var sets the output root") {
  Workspace ws;
  std::ofstream(ws.path("cfg.json")) << kConfig;
  ::setenv("MODNET_OUT", ws.path("envout").c_str(), 1);
  REQUIRE(run("train --config " + ws.path("cfg.json"), ws.path("env.log")) == 0);
  ::unsetenv("MODNET_OUT");
  CHECK(fs::exists(ws.path("envout/base.ckpt")));
}
