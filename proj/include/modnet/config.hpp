#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modnet/data.hpp"
#include "modnet/optim.hpp"

namespace modnet {

/// Declarative experiment description. The on-disk form is a JSON document
/// with nested sections (data/train/transfer/viz); every CLI flag overrides
/// its config key.
struct ExperimentConfig {
  std::string output_dir = "out";
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

  // architectures
  std::string base_name = "base";
  std::string base_arch = "(8x8x8)-maxpool2-(8x4x4)-(8x3x3)-dense128";
  std::string module_name = "module";
  std::string module_arch;              // empty: copy of base_arch
  std::string module_init = "copy_base";  // "copy_base" | "fresh"
  std::string stitch_arch;              // empty: module_arch

  // data section: either IDX file manifests or the seeded synthetic task
  std::string data_kind = "synthetic";  // "idx" | "synthetic"
  struct IdxManifest {
    std::string images, labels;
    std::string test_images, test_labels;  // optional held-out split files
    int test_per_class = 0;                // used when no test files are given
    int num_classes = 0;                   // 0: inferred from the labels
  };
  IdxManifest source, target;
  struct Synthetic {
    std::uint64_t seed = 1;
    int k_src = 6, k_tgt = 6;
    int n_per_class = 80, test_per_class = 40;
    int image_size = 12;
    double shift = 0.6, noise = 0.12;
  };
  Synthetic synthetic;

  // pretraining
  std::string optimizer = "adam";
  OptimizerHyper hyper;
  int epochs = 10;
  int batch_size = 32;
  double augment = 0.1;
  double lambda = 1e-6;

  // transfer comparison
  std::vector<int> per_class = {2, 5, 10};
  int repeats = 5;
  int batch_per_class = 1;
  std::vector<std::string> topologies = {"finetune", "two_towers", "stitch", "scratch"};
  int eval_limit = 0;  // cap on test examples per evaluation; 0 = full split
  std::string checkpoint;  // pretrained base for transfer/viz/resume

  // visualization
  std::vector<std::string> viz_targets = {"base:0:*"};  // module:layer:filter, '*' = all filters
  int viz_iterations = 500;
  double viz_step = 0.01;
  double viz_radius = 1.0;

  OptimizerKind optimizer_kind() const;
  void validate() const;  // throws ConfigError
};

ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

/// Round-trip snapshot used inside checkpoints.
std::string config_to_json(const ExperimentConfig& cfg);

/// Loads the configured datasets. Returns train/test splits of the source
/// and target tasks (target splits are empty for single-task configs).
struct LoadedData {
  LabeledDataset source_train, source_test;
  LabeledDataset target_train, target_test;
};
LoadedData load_data(const ExperimentConfig& cfg);

}  // namespace modnet
