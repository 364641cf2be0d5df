#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "modnet/checkpoint.hpp"
#include "modnet/composite.hpp"
#include "modnet/config.hpp"
#include "modnet/data.hpp"
#include "modnet/optim.hpp"

namespace modnet {

/// Top-1 accuracy over a labeled split; limit > 0 caps the number of
/// examples (taken in order). The graph is mutated (single-writer).
double evaluate(Composite& net, const LabeledDataset& ds, int limit = 0);

/// A standalone network under training: base stack plus softmax head.
/// Everything that determines future training is in (net, opt, rng, step),
/// so a checkpointed trainer resumes bit-identically.
struct Trainer {
  Composite net;
  OptimizerState opt;
  std::mt19937_64 rng;
  long step = 0;
  double augment = 0.0;

  std::string rng_state() const;
  void restore_rng(const std::string& state);
};

Trainer make_trainer(const ModuleSpec& base_spec, const Shape& input_shape, int num_classes,
                     OptimizerKind kind, OptimizerHyper hyper, double augment, std::uint64_t seed);
Trainer trainer_from_checkpoint(const LoadedCheckpoint& loaded, double augment);

/// Runs `steps` minibatch updates: batch indices drawn from the trainer's
/// RNG, optional shift/zoom augmentation, mean gradient, one optimizer
/// step. Throws NumericError on a non-finite loss. `log_every` > 0 prints
/// a progress line to stderr.
void train_steps(Trainer& t, const LabeledDataset& train, long steps, int batch_size,
                 long log_every = 0);

/// One gradient step over an explicit example batch (no augmentation);
/// returns the mean loss. Used by the transfer protocol.
double train_on_batch(Composite& net, OptimizerState& opt, const LabeledDataset& ds,
                      const std::vector<int>& batch);

/// One (examples_seen, accuracy) measurement of a learning curve.
struct CurveRow {
  std::uint64_t seed = 0;
  std::string topology;
  int per_class = 0;
  long examples_seen = 0;
  int batch_index = 0;
  double test_accuracy = 0;
};

/// CSV with header seed,topology,per_class,examples_seen,batch_index,test_accuracy;
/// written atomically (temp file + rename).
void write_curve_csv(const std::string& path, const std::vector<CurveRow>& rows);
std::vector<CurveRow> read_curve_csv(const std::string& path);

struct TransferOptions {
  std::vector<int> per_class = {2, 5, 10};
  int repeats = 5;
  int batch_per_class = 1;
  std::vector<std::string> topologies = {"finetune", "two_towers", "stitch", "scratch"};
  std::string module_init = "copy_base";  // two-towers module values: "copy_base" | "fresh"
  std::string module_arch;                // two-towers module; empty = base arch
  std::string stitch_arch;                // empty = module_arch
  OptimizerKind kind = OptimizerKind::kAdam;
  OptimizerHyper hyper;
  double lambda = 1e-6;
  int eval_limit = 0;
  std::uint64_t seed = 1;
};

struct TransferResult {
  std::vector<CurveRow> rows;
  // per (topology, per_class): FNV-1a hash of the consumed example stream;
  // matched topologies must agree cell by cell
  std::map<std::pair<std::string, int>, std::uint64_t> stream_hashes;
  std::uint32_t frozen_hash = 0;  // constant across every frozen cell
  std::map<std::pair<std::string, int>, double> final_accuracy;
};

/// The matched comparison: for each per_class size, subsample the target
/// task, build every requested topology with matched initial trainable
/// weights (two-towers module = copy of the pretrained base when
/// module_init is "copy_base") and matched head seeds, feed the identical
/// batch schedule to each, evaluate after every batch.
TransferResult transfer_compare(const BuiltModule& pretrained_base,
                                const LabeledDataset& target_train,
                                const LabeledDataset& target_test, const TransferOptions& opts);

}  // namespace modnet
