#include "modnet/graph.hpp"

#include <algorithm>
#include <cmath>

#include "modnet/ops.hpp"

namespace modnet {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kInput: return "input";
    case OpKind::kParam: return "param";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kMaxPool2: return "maxpool2";
    case OpKind::kDense: return "dense";
    case OpKind::kRelu: return "relu";
    case OpKind::kConcat: return "concat";
    case OpKind::kFlatten: return "flatten";
    case OpKind::kSoftmaxXent: return "softmax_xent";
    case OpKind::kActivityL2: return "activity_l2";
    case OpKind::kAdd: return "add";
    case OpKind::kChannelMean: return "channel_mean";
  }
  return "?";
}

void Graph::check_id(int id) const {
  if (id < 0 || id >= size()) throw ContractError("node id " + std::to_string(id) + " out of range");
}

const Node& Graph::node(int id) const {
  check_id(id);
  return nodes_[id];
}

Node& Graph::node(int id) {
  check_id(id);
  return nodes_[id];
}

int Graph::push(Node n) {
  n.id = size();
  for (int in : n.inputs) check_id(in);  // acyclic by construction
  nodes_.push_back(std::move(n));
  return nodes_.back().id;
}

int Graph::add_input(Shape shape, std::string name) {
  Node n;
  n.op = OpKind::kInput;
  n.value = Tensor(std::move(shape));
  n.name = std::move(name);
  return push(std::move(n));
}

int Graph::add_param(Tensor init, bool frozen, std::string name) {
  Node n;
  n.op = OpKind::kParam;
  n.value = std::move(init);
  n.is_param = true;
  n.is_frozen = frozen;
  n.name = std::move(name);
  int id = push(std::move(n));
  params_.push_back(id);
  return id;
}

int Graph::conv2d(int x, int kernels, int bias) {
  // run shape validation once at build time
  detail::check_conv_shapes(node(x).value, node(kernels).value, node(bias).value);
  Node n;
  n.op = OpKind::kConv2d;
  n.inputs = {x, kernels, bias};
  n.value = Tensor({node(kernels).value.shape()[0], node(x).value.shape()[1], node(x).value.shape()[2]});
  return push(std::move(n));
}

int Graph::maxpool2(int x) {
  const Shape& s = node(x).value.shape();
  if (s.size() != 3) throw ShapeError("maxpool2 input must be (C,H,W), got " + shape_str(s));
  Node n;
  n.op = OpKind::kMaxPool2;
  n.inputs = {x};
  n.value = Tensor({s[0], (s[1] + 1) / 2, (s[2] + 1) / 2});
  return push(std::move(n));
}

int Graph::dense(int x, int weights, int bias) {
  // dry run resolves the output shape and validates
  Tensor probe = modnet::dense(node(x).value, node(weights).value, node(bias).value);
  Node n;
  n.op = OpKind::kDense;
  n.inputs = {x, weights, bias};
  n.value = std::move(probe);
  return push(std::move(n));
}

int Graph::relu(int x) {
  Node n;
  n.op = OpKind::kRelu;
  n.inputs = {x};
  n.value = Tensor(node(x).value.shape());
  return push(std::move(n));
}

int Graph::concat(int a, int b, int axis) {
  Node n;
  n.op = OpKind::kConcat;
  n.inputs = {a, b};
  n.axis = axis;
  n.value = Tensor(concat_shape(node(a).value.shape(), node(b).value.shape(), axis));
  return push(std::move(n));
}

int Graph::flatten(int x) {
  Node n;
  n.op = OpKind::kFlatten;
  n.inputs = {x};
  n.value = Tensor({static_cast<int>(node(x).value.numel())});
  return push(std::move(n));
}

int Graph::softmax_xent(int logits) {
  const Shape& s = node(logits).value.shape();
  if (s.size() != 1 || s[0] < 1)
    throw ShapeError("softmax_xent expects flat logits, got " + shape_str(s));
  Node n;
  n.op = OpKind::kSoftmaxXent;
  n.inputs = {logits};
  n.value = Tensor({1});
  return push(std::move(n));
}

int Graph::activity_l2(std::vector<int> activations, double lambda) {
  if (activations.empty()) throw ContractError("activity_l2 needs at least one activation");
  if (lambda < 0) throw ContractError("activity_l2 lambda must be nonnegative");
  Node n;
  n.op = OpKind::kActivityL2;
  n.inputs = std::move(activations);
  n.lambda = lambda;
  n.value = Tensor({1});
  return push(std::move(n));
}

int Graph::add(int a, int b) {
  if (!node(a).value.same_shape(node(b).value))
    throw ShapeError("add shape mismatch: " + shape_str(node(a).value.shape()) + " vs " +
                     shape_str(node(b).value.shape()));
  Node n;
  n.op = OpKind::kAdd;
  n.inputs = {a, b};
  n.value = Tensor(node(a).value.shape());
  return push(std::move(n));
}

int Graph::channel_mean(int x, int channel) {
  const Shape& s = node(x).value.shape();
  if (s.size() != 3) throw ShapeError("channel_mean input must be (C,H,W), got " + shape_str(s));
  if (channel < 0 || channel >= s[0])
    throw ContractError("channel " + std::to_string(channel) + " out of range for " + shape_str(s));
  Node n;
  n.op = OpKind::kChannelMean;
  n.inputs = {x};
  n.channel = channel;
  n.value = Tensor({1});
  return push(std::move(n));
}

void Graph::set_value(int id, const Tensor& v) {
  Node& n = node(id);
  if (n.op != OpKind::kInput && n.op != OpKind::kParam)
    throw ContractError("set_value on non-leaf node " + std::to_string(id));
  if (!n.value.same_shape(v))
    throw ShapeError("set_value shape " + shape_str(v.shape()) + " does not match node shape " +
                     shape_str(n.value.shape()));
  n.value = v;
}

void Graph::set_label(int xent_id, int label) {
  Node& n = node(xent_id);
  if (n.op != OpKind::kSoftmaxXent) throw ContractError("set_label on non-xent node");
  const int k = node(n.inputs[0]).value.shape()[0];
  if (label < 0 || label >= k)
    throw ContractError("label " + std::to_string(label) + " out of range for " + std::to_string(k) +
                        " classes");
  n.label = label;
}

void Graph::set_frozen(int param_id, bool frozen) {
  Node& n = node(param_id);
  if (!n.is_param) throw ContractError("set_frozen on non-parameter node");
  n.is_frozen = frozen;
}

void Graph::want_input_grad(bool on) { want_input_grad_ = on; }

std::vector<int> Graph::trainable_params() const {
  std::vector<int> out;
  for (int id : params_)
    if (!nodes_[id].is_frozen) out.push_back(id);
  return out;
}

void Graph::forward_node(Node& n) {
  switch (n.op) {
    case OpKind::kInput:
    case OpKind::kParam:
      break;
    case OpKind::kConv2d:
      n.value = modnet::conv2d(nodes_[n.inputs[0]].value, nodes_[n.inputs[1]].value,
                               nodes_[n.inputs[2]].value);
      break;
    case OpKind::kMaxPool2:
      n.value = modnet::maxpool2(nodes_[n.inputs[0]].value);
      break;
    case OpKind::kDense:
      n.value = modnet::dense(nodes_[n.inputs[0]].value, nodes_[n.inputs[1]].value,
                              nodes_[n.inputs[2]].value);
      break;
    case OpKind::kRelu:
      n.value = modnet::relu(nodes_[n.inputs[0]].value);
      break;
    case OpKind::kConcat:
      n.value = modnet::concat(nodes_[n.inputs[0]].value, nodes_[n.inputs[1]].value, n.axis);
      break;
    case OpKind::kFlatten:
      n.value = nodes_[n.inputs[0]].value.flattened();
      break;
    case OpKind::kSoftmaxXent: {
      auto r = modnet::softmax_xent(nodes_[n.inputs[0]].value, n.label);
      n.value[0] = r.loss;
      n.aux = std::move(r.probs);
      break;
    }
    case OpKind::kActivityL2: {
      std::vector<const Tensor*> acts;
      acts.reserve(n.inputs.size());
      for (int in : n.inputs) acts.push_back(&nodes_[in].value);
      n.value[0] = modnet::activity_l2(acts, n.lambda);
      break;
    }
    case OpKind::kAdd:
      n.value.array() = nodes_[n.inputs[0]].value.array() + nodes_[n.inputs[1]].value.array();
      break;
    case OpKind::kChannelMean: {
      const Tensor& x = nodes_[n.inputs[0]].value;
      const std::int64_t map = static_cast<std::int64_t>(x.shape()[1]) * x.shape()[2];
      n.value[0] = Eigen::Map<const Eigen::ArrayXd>(x.data() + n.channel * map, map).mean();
      break;
    }
  }
}

void Graph::forward() {
  for (Node& n : nodes_) forward_node(n);
}

std::vector<char> Graph::need_grad_flags() const {
  // needs[n]: the backward sweep must deliver gradient into n, either
  // because n is a destination (trainable param / watched input) or
  // because gradient flows through n to reach one.
  std::vector<char> needs(nodes_.size(), 0);
  for (const Node& n : nodes_) {
    bool need = (n.is_param && !n.is_frozen) || (want_input_grad_ && n.op == OpKind::kInput);
    for (int in : n.inputs) need = need || needs[in];
    needs[n.id] = need ? 1 : 0;
  }
  return needs;
}

void Graph::backward_node(Node& n, const std::vector<char>& needs) {
  auto gptr = [&](int in) -> Tensor* { return needs[in] ? &nodes_[in].grad : nullptr; };
  switch (n.op) {
    case OpKind::kInput:
    case OpKind::kParam:
      break;
    case OpKind::kConv2d:
      conv2d_backward(nodes_[n.inputs[0]].value, nodes_[n.inputs[1]].value, n.grad,
                      gptr(n.inputs[0]), gptr(n.inputs[1]), gptr(n.inputs[2]));
      break;
    case OpKind::kMaxPool2:
      maxpool2_backward(nodes_[n.inputs[0]].value, n.grad, gptr(n.inputs[0]));
      break;
    case OpKind::kDense:
      dense_backward(nodes_[n.inputs[0]].value, nodes_[n.inputs[1]].value, n.grad,
                     gptr(n.inputs[0]), gptr(n.inputs[1]), gptr(n.inputs[2]));
      break;
    case OpKind::kRelu:
      relu_backward(nodes_[n.inputs[0]].value, n.grad, gptr(n.inputs[0]));
      break;
    case OpKind::kConcat:
      concat_backward(n.grad, nodes_[n.inputs[0]].value.shape(), nodes_[n.inputs[1]].value.shape(),
                      n.axis, gptr(n.inputs[0]), gptr(n.inputs[1]));
      break;
    case OpKind::kFlatten:
      if (Tensor* g = gptr(n.inputs[0]))
        g->array() += n.grad.array();  // same flat layout, different extents
      break;
    case OpKind::kSoftmaxXent:
      softmax_xent_backward(n.aux, n.label, n.grad[0], gptr(n.inputs[0]));
      break;
    case OpKind::kActivityL2:
      for (int in : n.inputs)
        activity_l2_backward(nodes_[in].value, n.lambda, n.grad[0], gptr(in));
      break;
    case OpKind::kAdd:
      if (Tensor* g = gptr(n.inputs[0])) g->array() += n.grad.array();
      if (Tensor* g = gptr(n.inputs[1])) g->array() += n.grad.array();
      break;
    case OpKind::kChannelMean: {
      if (Tensor* g = gptr(n.inputs[0])) {
        const Tensor& x = nodes_[n.inputs[0]].value;
        const std::int64_t map = static_cast<std::int64_t>(x.shape()[1]) * x.shape()[2];
        Eigen::Map<Eigen::ArrayXd>(g->data() + n.channel * map, map) +=
            n.grad[0] / static_cast<double>(map);
      }
      break;
    }
  }
}

void Graph::backward(int loss_id) {
  Node& loss = node(loss_id);
  if (loss.value.numel() != 1)
    throw ContractError("backward needs a scalar loss node, got shape " +
                        shape_str(loss.value.shape()));

  const std::vector<char> needs = need_grad_flags();

  // (re)zero the gradient buffers that will participate in this sweep
  for (Node& n : nodes_) {
    if (needs[n.id] || n.id == loss_id) {
      if (!n.grad.same_shape(n.value)) n.grad = Tensor(n.value.shape());
      n.grad.fill(0.0);
    }
  }
  loss.grad[0] = 1.0;

  for (int id = loss_id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.inputs.empty()) continue;
    if (!needs[id] && id != loss_id) continue;
    if (n.grad.numel() == 0) continue;
    backward_node(n, needs);
  }
}

double Graph::grad_check(int loss_id, double epsilon) {
  forward();
  backward(loss_id);

  std::vector<int> trainables = trainable_params();
  if (trainables.empty()) return 0.0;

  // snapshot analytic gradients before perturbing anything
  std::vector<Tensor> analytic;
  analytic.reserve(trainables.size());
  for (int id : trainables) analytic.push_back(nodes_[id].grad);

  double worst = 0.0;
  for (std::size_t t = 0; t < trainables.size(); ++t) {
    Node& p = nodes_[trainables[t]];
    for (std::int64_t i = 0; i < p.value.numel(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + epsilon;
      forward();
      const double f_plus = nodes_[loss_id].value[0];
      p.value[i] = saved - epsilon;
      forward();
      const double f_minus = nodes_[loss_id].value[0];
      p.value[i] = saved;

      const double numeric = (f_plus - f_minus) / (2 * epsilon);
      const double a = analytic[t][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3});
      worst = std::max(worst, err);
    }
  }
  forward();  // leave node values consistent with the restored parameters
  return worst;
}

}  // namespace modnet
