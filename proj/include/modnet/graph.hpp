#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modnet/tensor.hpp"

namespace modnet {

enum class OpKind {
  kInput,
  kParam,
  kConv2d,      // inputs: x, kernels, bias
  kMaxPool2,    // inputs: x
  kDense,       // inputs: x, weights, bias
  kRelu,        // inputs: x
  kConcat,      // inputs: a, b; attr axis
  kFlatten,     // inputs: x
  kSoftmaxXent, // inputs: logits; attr label; value is the scalar loss
  kActivityL2,  // inputs: one or more activations; attr lambda
  kAdd,         // inputs: a, b (same shape)
  kChannelMean, // inputs: x (C,H,W); attr channel; scalar mean of one map
};

const char* op_name(OpKind op);

struct Node {
  int id = -1;
  OpKind op = OpKind::kInput;
  std::vector<int> inputs;
  Tensor value;
  Tensor grad;  // same shape as value whenever populated
  bool is_param = false;
  bool is_frozen = false;  // implies is_param

  // Per-op attributes; unused fields stay at their defaults.
  int axis = 0;       // kConcat
  int label = 0;      // kSoftmaxXent target class
  int channel = 0;    // kChannelMean filter index
  double lambda = 0;  // kActivityL2 weight
  std::string name;   // leaf naming, e.g. "base/conv0/w"

  Tensor aux;  // forward-pass scratch kept for backward (softmax probs)
};

/// Computation graph in construction order, which is also a topological
/// order: every input id precedes its consumer. Output shapes are resolved
/// when an op is added, so shape errors surface at build time.
///
/// A graph is single-writer: forward/backward mutate node values and must
/// not run concurrently on one instance. Copies are independent, so cloned
/// graphs can serve read-only inference in parallel.
class Graph {
 public:
  int add_input(Shape shape, std::string name = "input");
  int add_param(Tensor init, bool frozen, std::string name);

  int conv2d(int x, int kernels, int bias);
  int maxpool2(int x);
  int dense(int x, int weights, int bias);
  int relu(int x);
  int concat(int a, int b, int axis);
  int flatten(int x);
  int softmax_xent(int logits);
  int activity_l2(std::vector<int> activations, double lambda);
  int add(int a, int b);
  int channel_mean(int x, int channel);

  void set_value(int id, const Tensor& v);  // leaf nodes only
  void set_label(int xent_id, int label);
  void set_frozen(int param_id, bool frozen);

  /// When set, backward() also accumulates gradients into kInput nodes
  /// (needed for activation maximization on the pixels).
  void want_input_grad(bool on);

  const Tensor& value(int id) const { return node(id).value; }
  const Tensor& grad(int id) const { return node(id).grad; }
  const Node& node(int id) const;
  Node& node(int id);
  int size() const { return static_cast<int>(nodes_.size()); }

  const std::vector<int>& params() const { return params_; }
  std::vector<int> trainable_params() const;

  /// Recomputes every op node, in order, from the current leaf values.
  void forward();

  /// Reverse-mode sweep from a scalar loss node. Populates grad for every
  /// node the loss depends on through at least one trainable parameter
  /// (or input, when want_input_grad is set). Frozen parameters receive
  /// no gradient accumulation.
  void backward(int loss_id);

  /// Central-difference check of backward() over every trainable scalar;
  /// returns the worst relative error. 0 when nothing is trainable.
  double grad_check(int loss_id, double epsilon);

 private:
  int push(Node n);
  void check_id(int id) const;
  void forward_node(Node& n);
  void backward_node(Node& n, const std::vector<char>& needs);
  std::vector<char> need_grad_flags() const;

  std::vector<Node> nodes_;
  std::vector<int> params_;
  bool want_input_grad_ = false;
};

}  // namespace modnet
