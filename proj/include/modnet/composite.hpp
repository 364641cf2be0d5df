#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modnet/graph.hpp"
#include "modnet/module.hpp"

namespace modnet {

enum class Topology { kFinetune, kTwoTowers, kStitch };

const char* topology_name(Topology t);
Topology topology_from_name(const std::string& name);

/// Node bookkeeping for one layer stack wired into a graph.
struct StackNodes {
  std::vector<int> layer_nodes;    // the conv/pool/dense/flatten op node per layer
  std::vector<int> layer_outputs;  // post-activation output per layer
  std::vector<int> param_ids;
  int features = -1;  // final post-activation output (flattened input for empty stacks)
};

/// A composition of modules plus a classification head, instantiated as a
/// computation graph. Copyable; copies train or infer independently.
struct Composite {
  Topology topology = Topology::kFinetune;
  int num_classes = 0;
  double activity_lambda = 0;
  Shape input_shape;
  ModuleSpec base_spec;
  std::optional<ModuleSpec> module_spec;
  std::vector<std::pair<int, int>> layer_pairs;  // stitch: (base layer, module layer)

  Graph graph;
  int input_id = -1;
  int logits_id = -1;
  int xent_id = -1;
  int loss_id = -1;
  StackNodes base_nodes, module_nodes;

  std::vector<int> head_params;

  /// Ordered trainable parameter nodes; excludes every frozen parameter.
  std::vector<int> trainable() const { return graph.trainable_params(); }
  std::int64_t trainable_scalars() const;

  void set_example(const Tensor& image, int label);
  /// Forward pass over the current example; returns the loss value.
  double forward_loss();
  /// Argmax class of the logits for one image (runs a forward pass).
  int predict(const Tensor& image);
};

/// Eq-1-style composition: every base parameter trains, fresh K-way head.
/// Heads start at zero (uniform initial softmax), so every topology
/// trains from the same neutral decision rule whatever its feature scale.
Composite compose_finetune(const BuiltModule& base, int num_classes);

/// Eq-2-style composition: frozen base and trainable module run in
/// parallel on the same input; the head consumes the concatenated
/// features. activity_lambda > 0 adds an L2 penalty on the module's top
/// feature activations.
Composite compose_two_towers(const BuiltModule& base, const BuiltModule& module, int num_classes,
                             double activity_lambda = 0.0);

/// Interleaved composition: module layer i+1 consumes
/// concat(base layer b output, module layer m output) for each pair
/// (b, m); both top features feed the head. The module is instantiated
/// here (seeded) because its kernel shapes depend on the base widths.
Composite compose_stitch(const BuiltModule& base, const ModuleSpec& module_spec,
                         const std::vector<std::pair<int, int>>& layer_pairs, int num_classes,
                         std::uint64_t seed, double activity_lambda = 0.0);

/// Pairs (i,i) wherever the next module layer carries parameters, for
/// module specs that mirror the base's pooling positions.
std::vector<std::pair<int, int>> mirrored_pairs(const ModuleSpec& module_spec);

/// A standalone stack wired into its own graph (inference, visualization,
/// representation-preservation checks).
struct StackGraph {
  Graph graph;
  int input_id = -1;
  StackNodes nodes;
};
StackGraph build_stack_graph(const BuiltModule& module);

/// Reads the parameter tensors of a wired stack back out of the graph,
/// in layer order (inverse of the wiring step).
BuiltModule extract_module(const Composite& net, const StackNodes& nodes, const ModuleSpec& spec,
                           const Shape& input_shape);

}  // namespace modnet
