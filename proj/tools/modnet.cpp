// Command-line driver: pre-train a base network, run matched transfer
// comparisons, visualize filters, resume from checkpoints, plot curves.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "modnet/checkpoint.hpp"
#include "modnet/composite.hpp"
#include "modnet/config.hpp"
#include "modnet/errors.hpp"
#include "modnet/svg.hpp"
#include "modnet/train.hpp"
#include "modnet/viz.hpp"

namespace fs = std::filesystem;
using namespace modnet;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<int> per_class;
  std::vector<std::string> topologies;
  int repeats = 0;
  int jobs = 1;
  std::string checkpoint;
  std::string optimizer;
  double lr = 0;
  double lambda = -1;
};

ExperimentConfig load_config(const CommonFlags& flags) {
  ExperimentConfig cfg =
      flags.config_path.empty() ? ExperimentConfig{} : parse_config_file(flags.config_path);
  if (!flags.seeds.empty()) cfg.seeds = flags.seeds;
  if (!flags.per_class.empty()) cfg.per_class = flags.per_class;
  if (!flags.topologies.empty()) cfg.topologies = flags.topologies;
  if (flags.repeats > 0) cfg.repeats = flags.repeats;
  if (!flags.checkpoint.empty()) cfg.checkpoint = flags.checkpoint;
  if (!flags.optimizer.empty()) cfg.optimizer = flags.optimizer;
  if (flags.lr > 0) cfg.hyper.lr = flags.lr;
  if (flags.lambda >= 0) cfg.lambda = flags.lambda;
  if (!flags.out_dir.empty()) {
    cfg.output_dir = flags.out_dir;
  } else if (const char* env = std::getenv("MODNET_OUT")) {
    cfg.output_dir = env;
  }
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  return cfg;
}

long steps_per_epoch(std::size_t n, int batch_size) {
  return static_cast<long>((n + batch_size - 1) / batch_size);
}

int cmd_train(const CommonFlags& flags) {
  ExperimentConfig cfg = load_config(flags);
  LoadedData data = load_data(cfg);
  if (data.source_train.size() == 0) throw DataError("config provides no source training data");
  if (data.source_test.size() == 0) throw DataError("config provides no source test split");

  const Shape input_shape = data.source_train.images[0].shape();
  const std::uint64_t seed = cfg.seeds[0];
  ModuleSpec base_spec = parse_arch(cfg.base_name, cfg.base_arch);
  Trainer trainer = make_trainer(base_spec, input_shape, data.source_train.num_classes,
                                 cfg.optimizer_kind(), cfg.hyper, cfg.augment, seed);

  const long per_epoch = steps_per_epoch(data.source_train.size(), cfg.batch_size);
  std::printf("training %s on %zu examples, %d epochs x %ld steps (seed %llu)\n",
              cfg.base_arch.c_str(), data.source_train.size(), cfg.epochs, per_epoch,
              static_cast<unsigned long long>(seed));
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    train_steps(trainer, data.source_train, per_epoch, cfg.batch_size);
    const double acc = evaluate(trainer.net, data.source_test, cfg.eval_limit);
    std::printf("epoch %d/%d  test accuracy %.4f\n", epoch, cfg.epochs, acc);
    std::fflush(stdout);
  }
  const double accuracy = evaluate(trainer.net, data.source_test);

  TrainerMeta meta{trainer.step, trainer.rng_state(), config_to_json(cfg)};
  const std::string ckpt = (fs::path(cfg.output_dir) / "base.ckpt").string();
  save_checkpoint(ckpt, trainer.net, trainer.opt, meta);
  std::printf("final test accuracy %.4f\ncheckpoint %s\n", accuracy, ckpt.c_str());
  return kExitOk;
}

int cmd_resume(const CommonFlags& flags, long steps) {
  if (flags.checkpoint.empty()) throw ConfigError("resume needs --checkpoint");
  LoadedCheckpoint loaded = load_checkpoint(flags.checkpoint);
  if (loaded.meta.config_json.empty())
    throw ConfigError("checkpoint carries no config snapshot; cannot locate the dataset");
  ExperimentConfig cfg = parse_config_text(loaded.meta.config_json);
  if (!flags.out_dir.empty()) cfg.output_dir = flags.out_dir;
  fs::create_directories(cfg.output_dir);
  LoadedData data = load_data(cfg);

  Trainer trainer = trainer_from_checkpoint(loaded, cfg.augment);
  if (steps <= 0) steps = steps_per_epoch(data.source_train.size(), cfg.batch_size);
  std::printf("resuming at step %ld for %ld steps\n", trainer.step, steps);
  train_steps(trainer, data.source_train, steps, cfg.batch_size);
  const double accuracy = evaluate(trainer.net, data.source_test, cfg.eval_limit);

  TrainerMeta meta{trainer.step, trainer.rng_state(), loaded.meta.config_json};
  const std::string ckpt = (fs::path(cfg.output_dir) / "base.ckpt").string();
  save_checkpoint(ckpt, trainer.net, trainer.opt, meta);
  std::printf("step %ld  test accuracy %.4f\ncheckpoint %s\n", trainer.step, accuracy,
              ckpt.c_str());
  return kExitOk;
}

int cmd_transfer(const CommonFlags& flags) {
  ExperimentConfig cfg = load_config(flags);
  if (cfg.checkpoint.empty()) throw ConfigError("transfer needs a base checkpoint (--checkpoint)");
  LoadedData data = load_data(cfg);
  if (data.target_train.size() == 0 || data.target_test.size() == 0)
    throw DataError("config provides no target train/test data");

  LoadedCheckpoint loaded = load_checkpoint(cfg.checkpoint);
  ModuleSpec base_spec = loaded.net.base_spec;
  if (base_spec.frozen)
    throw DataError("checkpoint/spec mismatch: expected an unfrozen pretrained base");
  BuiltModule base = extract_module(loaded.net, loaded.net.base_nodes, base_spec,
                                    loaded.net.input_shape);
  if (data.target_train.images[0].shape() != base.input_shape)
    throw DataError("checkpoint/spec mismatch: base consumes " + shape_str(base.input_shape) +
                    " but the target data is " +
                    shape_str(data.target_train.images[0].shape()));

  TransferOptions opts;
  opts.per_class = cfg.per_class;
  opts.repeats = cfg.repeats;
  opts.batch_per_class = cfg.batch_per_class;
  opts.topologies = cfg.topologies;
  opts.module_init = cfg.module_init;
  opts.module_arch = cfg.module_arch;
  opts.stitch_arch = cfg.stitch_arch;
  opts.kind = cfg.optimizer_kind();
  opts.hyper = cfg.hyper;
  opts.lambda = cfg.lambda;
  opts.eval_limit = cfg.eval_limit;

  // seed cells are independent: isolated RNG streams, cloned graphs
  const int jobs = std::max(1, flags.jobs);
  std::vector<std::future<TransferResult>> pending;
  std::vector<TransferResult> results(cfg.seeds.size());
  for (std::size_t i = 0; i < cfg.seeds.size(); i += jobs) {
    const std::size_t stop = std::min(cfg.seeds.size(), i + jobs);
    pending.clear();
    for (std::size_t j = i; j < stop; ++j) {
      TransferOptions cell = opts;
      cell.seed = cfg.seeds[j];
      pending.push_back(std::async(std::launch::async, [&, cell] {
        return transfer_compare(base, data.target_train, data.target_test, cell);
      }));
    }
    for (std::size_t j = i; j < stop; ++j) {
      results[j] = pending[j - i].get();
      std::printf("seed %llu done (%zu rows)\n",
                  static_cast<unsigned long long>(cfg.seeds[j]), results[j].rows.size());
      std::fflush(stdout);
    }
  }
  std::vector<CurveRow> rows;
  std::optional<std::uint32_t> frozen_hash;
  for (const TransferResult& result : results) {
    rows.insert(rows.end(), result.rows.begin(), result.rows.end());
    if (frozen_hash && result.frozen_hash && *frozen_hash != result.frozen_hash)
      throw NumericError("frozen base hash drifted between seeds");
    if (result.frozen_hash) frozen_hash = result.frozen_hash;
  }

  const std::string csv = (fs::path(cfg.output_dir) / "curves.csv").string();
  write_curve_csv(csv, rows);
  std::printf("curves %s\n", csv.c_str());
  if (frozen_hash) std::printf("frozen base payload crc32 %u (constant)\n", *frozen_hash);

  // final-accuracy summary, seed-averaged
  std::map<std::pair<std::string, int>, std::pair<double, int>> final_acc;
  std::map<std::pair<std::string, int>, std::pair<std::uint64_t, int>> last_batch;
  for (const CurveRow& r : rows) {
    auto key = std::pair{r.topology, r.per_class};
    auto& lb = last_batch[key];
    lb.second = std::max(lb.second, r.batch_index);
  }
  for (const CurveRow& r : rows) {
    auto key = std::pair{r.topology, r.per_class};
    if (r.batch_index == last_batch[key].second) {
      final_acc[key].first += r.test_accuracy;
      final_acc[key].second += 1;
    }
  }
  std::printf("%-12s %9s %14s\n", "topology", "per_class", "mean final acc");
  for (const auto& [key, acc] : final_acc)
    std::printf("%-12s %9d %14.4f\n", key.first.c_str(), key.second, acc.first / acc.second);
  return kExitOk;
}

std::vector<VizConfig> resolve_viz_targets(const ExperimentConfig& cfg, const Composite& net) {
  std::vector<VizConfig> out;
  for (const std::string& target : cfg.viz_targets) {
    std::istringstream is(target);
    std::string stack, layer_s, filter_s;
    if (!std::getline(is, stack, ':') || !std::getline(is, layer_s, ':') ||
        !std::getline(is, filter_s))
      throw ConfigError("viz target '" + target + "' is not module:layer:filter");
    const ModuleSpec* spec = nullptr;
    if (stack == net.base_spec.name) spec = &net.base_spec;
    else if (net.module_spec && stack == net.module_spec->name) spec = &*net.module_spec;
    else throw ConfigError("viz target names unknown module '" + stack + "'");

    VizConfig vc;
    vc.module = stack;
    vc.layer = std::stoi(layer_s);
    vc.step_size = cfg.viz_step;
    vc.iterations = cfg.viz_iterations;
    vc.smoothing_radius = cfg.viz_radius;
    vc.seed = cfg.seeds[0];
    if (vc.layer < 0 || vc.layer >= static_cast<int>(spec->layers.size()))
      throw ConfigError("viz target '" + target + "' layer out of range");
    if (filter_s == "*") {
      if (spec->layers[vc.layer].kind != LayerKind::kConv)
        throw ConfigError("viz target '" + target + "' is not a conv layer");
      for (int f = 0; f < spec->layers[vc.layer].filters; ++f) {
        vc.filter = f;
        out.push_back(vc);
      }
    } else {
      vc.filter = std::stoi(filter_s);
      out.push_back(vc);
    }
  }
  return out;
}

int cmd_viz(const CommonFlags& flags) {
  ExperimentConfig cfg = load_config(flags);
  if (cfg.checkpoint.empty()) throw ConfigError("viz needs a checkpoint (--checkpoint)");
  LoadedCheckpoint loaded = load_checkpoint(cfg.checkpoint);

  const fs::path dir = fs::path(cfg.output_dir) / "viz";
  fs::create_directories(dir);

  nlohmann::json manifest = nlohmann::json::array();
  for (const VizConfig& vc : resolve_viz_targets(cfg, loaded.net)) {
    AscendResult r = ascend(loaded.net, vc);
    const std::string name = vc.module + "_layer" + std::to_string(vc.layer) + "_filter" +
                             std::to_string(vc.filter) + ".pgm";
    render_pgm(r.canvas, (dir / name).string());
    manifest.push_back({{"module", vc.module},
                        {"layer", vc.layer},
                        {"filter", vc.filter},
                        {"file", name},
                        {"steps_completed", r.trace.size()},
                        {"final_objective", r.trace.empty() ? 0.0 : r.trace.back()},
                        {"zero_gradient", r.zero_gradient}});
    std::printf("wrote %s (%zu steps)\n", (dir / name).c_str(), r.trace.size());
    std::fflush(stdout);
  }
  std::ofstream mf(dir / "manifest.json");
  mf << manifest.dump(2) << '\n';
  if (!mf) throw DataError("cannot write the viz manifest");
  std::printf("manifest %s (%zu entries)\n", (dir / "manifest.json").c_str(), manifest.size());
  return kExitOk;
}

int cmd_plot(const std::string& csv, std::string out, const std::string& title) {
  std::vector<CurveRow> rows = read_curve_csv(csv);
  if (out.empty()) out = csv.substr(0, csv.find_last_of('.')) + ".svg";
  write_curve_svg(out, rows, title);
  std::printf("plot %s (%zu rows)\n", out.c_str(), rows.size());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"modular transfer-learning experiments over frozen pre-trained networks"};
  app.require_subcommand(1);

  CommonFlags flags;
  long resume_steps = 0;
  std::string plot_csv, plot_out, plot_title;

  auto add_common = [&](CLI::App* cmd, bool with_transfer_flags) {
    cmd->add_option("--config", flags.config_path, "experiment config (JSON)");
    cmd->add_option("--out", flags.out_dir, "output directory (or env MODNET_OUT)");
    cmd->add_option("--seed", flags.seeds, "seed list override");
    cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint path override");
    cmd->add_option("--optimizer", flags.optimizer, "adam or rmsprop");
    cmd->add_option("--lr", flags.lr, "learning rate override");
    cmd->add_option("--lambda", flags.lambda, "activity L2 weight override");
    if (with_transfer_flags) {
      cmd->add_option("--per-class", flags.per_class, "per-class sweep override");
      cmd->add_option("--repeats", flags.repeats, "batch repeat count override");
      cmd->add_option("--topology", flags.topologies, "topology list override");
      cmd->add_option("--jobs", flags.jobs, "seeds to run in parallel");
    }
  };

  CLI::App* train = app.add_subcommand("train", "pre-train the base network on the source task");
  add_common(train, false);
  CLI::App* transfer =
      app.add_subcommand("transfer", "matched fine-tune/two-towers/stitch/scratch comparison");
  add_common(transfer, true);
  CLI::App* viz = app.add_subcommand("viz", "activation-maximization filter gallery");
  add_common(viz, false);
  CLI::App* resume = app.add_subcommand("resume", "continue training from a checkpoint");
  add_common(resume, false);
  resume->add_option("--steps", resume_steps, "steps to run (default: one epoch)");
  CLI::App* plot = app.add_subcommand("plot", "render a learning-curve CSV as SVG");
  plot->add_option("--csv", plot_csv, "curves.csv produced by transfer")->required();
  plot->add_option("--out", plot_out, "output SVG path");
  plot->add_option("--title", plot_title, "chart title");

  try {
    app.parse(argc, argv);
    if (train->parsed()) return cmd_train(flags);
    if (transfer->parsed()) return cmd_transfer(flags);
    if (viz->parsed()) return cmd_viz(flags);
    if (resume->parsed()) return cmd_resume(flags, resume_steps);
    if (plot->parsed()) return cmd_plot(plot_csv, plot_out, plot_title);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
