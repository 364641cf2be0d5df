#include "modnet/optim.hpp"

#include <cmath>

#include "modnet/errors.hpp"

namespace modnet {

const char* optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::kAdam ? "adam" : "rmsprop";
}

OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "rmsprop") return OptimizerKind::kRmsProp;
  throw ConfigError("unknown optimizer '" + name + "'");
}

OptimizerState OptimizerState::init(OptimizerKind kind, OptimizerHyper hyper,
                                    const std::vector<const Tensor*>& params) {
  if (hyper.lr <= 0) throw ContractError("optimizer lr must be positive");
  OptimizerState s;
  s.kind = kind;
  s.hyper = hyper;
  for (const Tensor* p : params) {
    if (kind == OptimizerKind::kAdam) s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

namespace {

void check_aligned(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                   const OptimizerState& state) {
  if (params.size() != grads.size() || params.size() != state.v.size())
    throw ShapeError("optimizer state is aligned with a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i]) || !params[i]->same_shape(state.v[i]))
      throw ShapeError("optimizer slot " + std::to_string(i) + " shape mismatch");
  }
}

}  // namespace

void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               OptimizerState& state) {
  check_aligned(params, grads, state);
  if (state.m.size() != params.size())
    throw ShapeError("adam state has no first-moment accumulators");
  const OptimizerHyper& h = state.hyper;
  const long t = ++state.step_count;
  const double corr1 = 1.0 - std::pow(h.beta1, t);
  const double corr2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i]->array();
    const auto& g = grads[i]->array();
    auto& m = state.m[i].array();
    auto& v = state.v[i].array();
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g.square();
    w -= h.lr * (m / corr1) / ((v / corr2).sqrt() + h.epsilon);
  }
}

void rmsprop_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                  OptimizerState& state) {
  check_aligned(params, grads, state);
  const OptimizerHyper& h = state.hyper;
  ++state.step_count;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i]->array();
    const auto& g = grads[i]->array();
    auto& v = state.v[i].array();
    v = h.rho * v + (1.0 - h.rho) * g.square();
    w -= h.lr * g / (v.sqrt() + h.epsilon);
  }
}

void optimizer_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                    OptimizerState& state) {
  if (state.kind == OptimizerKind::kAdam)
    adam_step(params, grads, state);
  else
    rmsprop_step(params, grads, state);
}

void optimizer_step(Graph& graph, const std::vector<int>& param_ids,
                    const std::vector<Tensor>& grads, OptimizerState& state) {
  std::vector<Tensor*> params;
  std::vector<const Tensor*> grad_ptrs;
  params.reserve(param_ids.size());
  grad_ptrs.reserve(param_ids.size());
  for (std::size_t i = 0; i < param_ids.size(); ++i) {
    Node& n = graph.node(param_ids[i]);
    if (!n.is_param || n.is_frozen)
      throw ContractError("optimizer_step over a frozen or non-parameter node");
    params.push_back(&n.value);
    grad_ptrs.push_back(&grads[i]);
  }
  optimizer_step(params, grad_ptrs, state);
}

}  // namespace modnet
