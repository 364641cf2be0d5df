#include "modnet/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "modnet/errors.hpp"
#include "modnet/module.hpp"

namespace modnet {

namespace {

using nlohmann::json;

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void parse_manifest(const json& j, ExperimentConfig::IdxManifest& m) {
  maybe(j, "images", m.images);
  maybe(j, "labels", m.labels);
  maybe(j, "test_images", m.test_images);
  maybe(j, "test_labels", m.test_labels);
  maybe(j, "test_per_class", m.test_per_class);
  maybe(j, "num_classes", m.num_classes);
}

json manifest_json(const ExperimentConfig::IdxManifest& m) {
  return json{{"images", m.images},           {"labels", m.labels},
              {"test_images", m.test_images}, {"test_labels", m.test_labels},
              {"test_per_class", m.test_per_class}, {"num_classes", m.num_classes}};
}

}  // namespace

OptimizerKind ExperimentConfig::optimizer_kind() const { return optimizer_from_name(optimizer); }

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("config needs at least one seed");
  if (base_arch.empty()) throw ConfigError("config needs a base architecture");
  for (int n : per_class)
    if (n < 1) throw ConfigError("per_class sweep values must be positive");
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (batch_per_class < 1) throw ConfigError("batch_per_class must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (augment < 0 || augment >= 1) throw ConfigError("augment fraction must be in [0,1)");
  if (lambda < 0) throw ConfigError("lambda must be nonnegative");
  if (hyper.lr <= 0) throw ConfigError("lr must be positive");
  if (eval_limit < 0) throw ConfigError("eval_limit must be nonnegative");
  if (module_init != "copy_base" && module_init != "fresh")
    throw ConfigError("module init must be 'copy_base' or 'fresh'");
  if (data_kind != "idx" && data_kind != "synthetic")
    throw ConfigError("data kind must be 'idx' or 'synthetic'");
  optimizer_from_name(optimizer);          // validates the name
  parse_arch(base_name, base_arch);        // validates the arch strings
  if (!module_arch.empty()) parse_arch(module_name, module_arch);
  if (!stitch_arch.empty()) parse_arch(module_name, stitch_arch);
  const std::set<std::string> known = {"finetune", "two_towers", "stitch", "scratch"};
  for (const std::string& t : topologies)
    if (!known.count(t)) throw ConfigError("unknown topology '" + t + "'");
  if (data_kind == "synthetic") {
    if (synthetic.k_src < 2 || synthetic.k_tgt < 2)
      throw ConfigError("synthetic tasks need at least two classes per side");
    if (synthetic.n_per_class < 1 || synthetic.test_per_class < 1)
      throw ConfigError("synthetic example counts must be positive");
    if (synthetic.shift < 0 || synthetic.shift > 1)
      throw ConfigError("synthetic shift must be in [0,1]");
  }
}

ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }

  ExperimentConfig cfg;
  try {
    maybe(j, "output_dir", cfg.output_dir);
    maybe(j, "seeds", cfg.seeds);
    maybe(j, "checkpoint", cfg.checkpoint);
    if (j.contains("base")) {
      maybe(j["base"], "name", cfg.base_name);
      maybe(j["base"], "arch", cfg.base_arch);
    }
    if (j.contains("module")) {
      maybe(j["module"], "name", cfg.module_name);
      maybe(j["module"], "arch", cfg.module_arch);
      maybe(j["module"], "init", cfg.module_init);
    }
    if (j.contains("stitch")) maybe(j["stitch"], "arch", cfg.stitch_arch);
    if (j.contains("data")) {
      const json& d = j["data"];
      maybe(d, "kind", cfg.data_kind);
      if (d.contains("source")) parse_manifest(d["source"], cfg.source);
      if (d.contains("target")) parse_manifest(d["target"], cfg.target);
      if (d.contains("synthetic")) {
        const json& s = d["synthetic"];
        maybe(s, "seed", cfg.synthetic.seed);
        maybe(s, "k_src", cfg.synthetic.k_src);
        maybe(s, "k_tgt", cfg.synthetic.k_tgt);
        maybe(s, "n_per_class", cfg.synthetic.n_per_class);
        maybe(s, "test_per_class", cfg.synthetic.test_per_class);
        maybe(s, "image_size", cfg.synthetic.image_size);
        maybe(s, "shift", cfg.synthetic.shift);
        maybe(s, "noise", cfg.synthetic.noise);
      }
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      maybe(t, "optimizer", cfg.optimizer);
      maybe(t, "lr", cfg.hyper.lr);
      maybe(t, "beta1", cfg.hyper.beta1);
      maybe(t, "beta2", cfg.hyper.beta2);
      maybe(t, "rho", cfg.hyper.rho);
      maybe(t, "epsilon", cfg.hyper.epsilon);
      maybe(t, "epochs", cfg.epochs);
      maybe(t, "batch_size", cfg.batch_size);
      maybe(t, "augment", cfg.augment);
      maybe(t, "lambda", cfg.lambda);
    }
    if (j.contains("transfer")) {
      const json& t = j["transfer"];
      maybe(t, "per_class", cfg.per_class);
      maybe(t, "repeats", cfg.repeats);
      maybe(t, "batch_per_class", cfg.batch_per_class);
      maybe(t, "topologies", cfg.topologies);
      maybe(t, "eval_limit", cfg.eval_limit);
    }
    if (j.contains("viz")) {
      const json& v = j["viz"];
      maybe(v, "targets", cfg.viz_targets);
      maybe(v, "iterations", cfg.viz_iterations);
      maybe(v, "step_size", cfg.viz_step);
      maybe(v, "smoothing_radius", cfg.viz_radius);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field has the wrong type: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_config_text(std::string(std::istreambuf_iterator<char>(in), {}));
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j{
      {"output_dir", cfg.output_dir},
      {"seeds", cfg.seeds},
      {"checkpoint", cfg.checkpoint},
      {"base", {{"name", cfg.base_name}, {"arch", cfg.base_arch}}},
      {"module", {{"name", cfg.module_name}, {"arch", cfg.module_arch}, {"init", cfg.module_init}}},
      {"stitch", {{"arch", cfg.stitch_arch}}},
      {"data",
       {{"kind", cfg.data_kind},
        {"source", manifest_json(cfg.source)},
        {"target", manifest_json(cfg.target)},
        {"synthetic",
         {{"seed", cfg.synthetic.seed},
          {"k_src", cfg.synthetic.k_src},
          {"k_tgt", cfg.synthetic.k_tgt},
          {"n_per_class", cfg.synthetic.n_per_class},
          {"test_per_class", cfg.synthetic.test_per_class},
          {"image_size", cfg.synthetic.image_size},
          {"shift", cfg.synthetic.shift},
          {"noise", cfg.synthetic.noise}}}}},
      {"train",
       {{"optimizer", cfg.optimizer},
        {"lr", cfg.hyper.lr},
        {"beta1", cfg.hyper.beta1},
        {"beta2", cfg.hyper.beta2},
        {"rho", cfg.hyper.rho},
        {"epsilon", cfg.hyper.epsilon},
        {"epochs", cfg.epochs},
        {"batch_size", cfg.batch_size},
        {"augment", cfg.augment},
        {"lambda", cfg.lambda}}},
      {"transfer",
       {{"per_class", cfg.per_class},
        {"repeats", cfg.repeats},
        {"batch_per_class", cfg.batch_per_class},
        {"topologies", cfg.topologies},
        {"eval_limit", cfg.eval_limit}}},
      {"viz",
       {{"targets", cfg.viz_targets},
        {"iterations", cfg.viz_iterations},
        {"step_size", cfg.viz_step},
        {"smoothing_radius", cfg.viz_radius}}},
  };
  return j.dump(2);
}

LoadedData load_data(const ExperimentConfig& cfg) {
  LoadedData out;
  if (cfg.data_kind == "synthetic") {
    const auto& s = cfg.synthetic;
    SyntheticTask task = gen_synthetic_transfer(s.seed, s.k_src, s.k_tgt,
                                                s.n_per_class + s.test_per_class, s.shift, s.noise,
                                                s.image_size);
    std::tie(out.source_train, out.source_test) = split_per_class(task.source, s.n_per_class);
    std::tie(out.target_train, out.target_test) = split_per_class(task.target, s.n_per_class);
    return out;
  }

  auto load_side = [](const ExperimentConfig::IdxManifest& m, LabeledDataset& train,
                      LabeledDataset& test) {
    if (m.images.empty()) return;
    LabeledDataset all = load_idx(m.images, m.labels);
    if (m.num_classes > 0) all.num_classes = m.num_classes;
    if (!m.test_images.empty()) {
      train = std::move(all);
      test = load_idx(m.test_images, m.test_labels);
      if (m.num_classes > 0) test.num_classes = m.num_classes;
      test.num_classes = std::max(test.num_classes, train.num_classes);
      train.num_classes = test.num_classes;
    } else if (m.test_per_class > 0) {
      // hold out the last test_per_class of each class
      std::vector<int> counts(all.num_classes, 0);
      for (int l : all.labels) ++counts[l];
      int min_count = all.size() ? counts[0] : 0;
      for (int c : counts) min_count = std::min(min_count, c);
      std::tie(train, test) = split_per_class(all, min_count - m.test_per_class);
    } else {
      train = std::move(all);
    }
  };
  load_side(cfg.source, out.source_train, out.source_test);
  load_side(cfg.target, out.target_train, out.target_test);
  return out;
}

}  // namespace modnet
