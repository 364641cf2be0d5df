#pragma once

#include <string>
#include <vector>

#include "modnet/graph.hpp"
#include "modnet/tensor.hpp"

namespace modnet {

enum class OptimizerKind { kAdam, kRmsProp };

const char* optimizer_name(OptimizerKind k);
OptimizerKind optimizer_from_name(const std::string& name);

struct OptimizerHyper {
  double lr = 1e-3;
  double beta1 = 0.9;    // adam first-moment decay
  double beta2 = 0.999;  // adam second-moment decay
  double rho = 0.9;      // rmsprop accumulator decay
  double epsilon = 1e-8;
};

/// Per-parameter moment accumulators, aligned with a fixed parameter list.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kAdam;
  OptimizerHyper hyper;
  long step_count = 0;
  std::vector<Tensor> m;  // first moments (adam only)
  std::vector<Tensor> v;  // second moments / squared-gradient accumulator

  static OptimizerState init(OptimizerKind kind, OptimizerHyper hyper,
                             const std::vector<const Tensor*>& params);
};

/// w <- w - lr * m_hat / (sqrt(v_hat) + eps), with bias-corrected moments.
void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               OptimizerState& state);

/// v <- rho v + (1-rho) g^2;  w <- w - lr * g / (sqrt(v) + eps).
void rmsprop_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                  OptimizerState& state);

/// Dispatches on state.kind.
void optimizer_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                    OptimizerState& state);

/// Applies one update to a graph's parameter nodes from the given gradient
/// tensors (one per node id, same order). Frozen parameters are never in
/// the list by construction; passing one is a contract error.
void optimizer_step(Graph& graph, const std::vector<int>& param_ids,
                    const std::vector<Tensor>& grads, OptimizerState& state);

}  // namespace modnet
