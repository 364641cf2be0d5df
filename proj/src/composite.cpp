#include "modnet/composite.hpp"

#include <algorithm>
#include <map>

#include "modnet/errors.hpp"

namespace modnet {

namespace {

// Wires one stack into g. lateral[i] >= 0 concatenates that node's output
// in front of layer i's input along the channel/feature axis (base first,
// module second). Every conv/dense output passes through a ReLU; the
// logits head is added separately by the composers.
StackNodes append_stack(Graph& g, const BuiltModule& m, int input_id,
                        const std::vector<int>* lateral = nullptr) {
  StackNodes out;
  const bool frozen = m.spec.frozen;
  int cur = input_id;
  for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
    const LayerDesc& l = m.spec.layers[i];
    const std::string tag = m.spec.name + "/layer" + std::to_string(i);
    int layer_in = cur;
    if (lateral && (*lateral)[i] >= 0) layer_in = g.concat((*lateral)[i], cur, 0);

    int node = -1, act = -1;
    switch (l.kind) {
      case LayerKind::kConv: {
        int w = g.add_param(m.params[i].weights, frozen, tag + "/w");
        int b = g.add_param(m.params[i].bias, frozen, tag + "/b");
        out.param_ids.push_back(w);
        out.param_ids.push_back(b);
        node = g.conv2d(layer_in, w, b);
        act = g.relu(node);
        break;
      }
      case LayerKind::kDense: {
        int w = g.add_param(m.params[i].weights, frozen, tag + "/w");
        int b = g.add_param(m.params[i].bias, frozen, tag + "/b");
        out.param_ids.push_back(w);
        out.param_ids.push_back(b);
        node = g.dense(layer_in, w, b);
        act = g.relu(node);
        break;
      }
      case LayerKind::kMaxPool2:
        node = act = g.maxpool2(layer_in);
        break;
      case LayerKind::kFlatten:
        node = act = g.flatten(layer_in);
        break;
    }
    out.layer_nodes.push_back(node);
    out.layer_outputs.push_back(act);
    cur = act;
  }
  // an empty stack is the identity module: flattened input
  out.features = m.spec.layers.empty() ? g.flatten(input_id)
               : (g.value(cur).rank() == 1 ? cur : g.flatten(cur));
  return out;
}

// Zero weights give a uniform initial softmax; the first update already
// breaks symmetry through the labels. Pretrained feature scales vary a
// lot, so any scale-blind random head would start saturated.
std::vector<int> add_head(Graph& g, int features, int num_classes) {
  if (num_classes < 1) throw ContractError("head needs at least one class");
  const int width = g.value(features).shape()[0];
  int w = g.add_param(Tensor({num_classes, width}), false, "head/w");
  int b = g.add_param(Tensor({num_classes}), false, "head/b");
  return {w, b};
}

void finish_loss(Composite& net, double activity_lambda, int module_features) {
  net.xent_id = net.graph.softmax_xent(net.logits_id);
  net.activity_lambda = activity_lambda;
  if (activity_lambda > 0 && module_features >= 0 &&
      net.graph.value(module_features).numel() > 0) {
    int reg = net.graph.activity_l2({module_features}, activity_lambda);
    net.loss_id = net.graph.add(net.xent_id, reg);
  } else {
    net.loss_id = net.xent_id;
  }
}

}  // namespace

const char* topology_name(Topology t) {
  switch (t) {
    case Topology::kFinetune: return "finetune";
    case Topology::kTwoTowers: return "two_towers";
    case Topology::kStitch: return "stitch";
  }
  return "?";
}

Topology topology_from_name(const std::string& name) {
  if (name == "finetune") return Topology::kFinetune;
  if (name == "two_towers") return Topology::kTwoTowers;
  if (name == "stitch") return Topology::kStitch;
  throw ConfigError("unknown topology '" + name + "'");
}

std::int64_t Composite::trainable_scalars() const {
  std::int64_t n = 0;
  for (int id : trainable()) n += graph.value(id).numel();
  return n;
}

void Composite::set_example(const Tensor& image, int label) {
  graph.set_value(input_id, image);
  graph.set_label(xent_id, label);
}

double Composite::forward_loss() {
  graph.forward();
  return graph.value(loss_id)[0];
}

int Composite::predict(const Tensor& image) {
  graph.set_value(input_id, image);
  graph.forward();
  const Tensor& logits = graph.value(logits_id);
  int best = 0;
  for (int k = 1; k < logits.shape()[0]; ++k)
    if (logits[k] > logits[best]) best = k;
  return best;
}

Composite compose_finetune(const BuiltModule& base, int num_classes) {
  if (base.spec.frozen) throw ContractError("compose_finetune needs an unfrozen base");
  Composite net;
  net.topology = Topology::kFinetune;
  net.num_classes = num_classes;
  net.input_shape = base.input_shape;
  net.base_spec = base.spec;
  net.input_id = net.graph.add_input(base.input_shape);
  net.base_nodes = append_stack(net.graph, base, net.input_id);
  net.head_params = add_head(net.graph, net.base_nodes.features, num_classes);
  net.logits_id = net.graph.dense(net.base_nodes.features, net.head_params[0], net.head_params[1]);
  finish_loss(net, 0.0, -1);
  return net;
}

Composite compose_two_towers(const BuiltModule& base, const BuiltModule& module, int num_classes,
                             double activity_lambda) {
  if (!base.spec.frozen) throw ContractError("compose_two_towers needs a frozen base");
  if (module.spec.frozen) throw ContractError("compose_two_towers needs an unfrozen module");
  if (base.input_shape != module.input_shape)
    throw ShapeError("base and module input shapes differ: " + shape_str(base.input_shape) +
                     " vs " + shape_str(module.input_shape));

  Composite net;
  net.topology = Topology::kTwoTowers;
  net.num_classes = num_classes;
  net.input_shape = base.input_shape;
  net.base_spec = base.spec;
  net.module_spec = module.spec;
  net.input_id = net.graph.add_input(base.input_shape);
  net.base_nodes = append_stack(net.graph, base, net.input_id);
  net.module_nodes = append_stack(net.graph, module, net.input_id);
  int features = net.graph.concat(net.base_nodes.features, net.module_nodes.features, 0);
  net.head_params = add_head(net.graph, features, num_classes);
  net.logits_id = net.graph.dense(features, net.head_params[0], net.head_params[1]);
  finish_loss(net, activity_lambda, net.module_nodes.features);
  return net;
}

std::vector<std::pair<int, int>> mirrored_pairs(const ModuleSpec& module_spec) {
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = 1; i < module_spec.layers.size(); ++i)
    if (module_spec.layers[i].has_params())
      pairs.push_back({static_cast<int>(i) - 1, static_cast<int>(i) - 1});
  return pairs;
}

Composite compose_stitch(const BuiltModule& base, const ModuleSpec& module_spec,
                         const std::vector<std::pair<int, int>>& layer_pairs, int num_classes,
                         std::uint64_t seed, double activity_lambda) {
  if (!base.spec.frozen) throw ContractError("compose_stitch needs a frozen base");
  if (module_spec.frozen) throw ContractError("compose_stitch needs an unfrozen module spec");

  const std::vector<Shape> base_shapes = stack_shapes(base.spec, base.input_shape);
  const int n_module = static_cast<int>(module_spec.layers.size());

  // map each pair onto the module layer it feeds
  std::map<int, int> lateral_base;  // module layer -> base layer
  for (auto [b, m] : layer_pairs) {
    if (b < 0 || b >= static_cast<int>(base.spec.layers.size()))
      throw ContractError("stitch pair base layer " + std::to_string(b) + " out of range");
    if (m < 0 || m >= n_module)
      throw ContractError("stitch pair module layer " + std::to_string(m) + " out of range");
    if (m + 1 >= n_module) continue;  // top pair: the head concat already joins the tops
    if (!lateral_base.emplace(m + 1, b).second)
      throw ContractError("two stitch pairs feed module layer " + std::to_string(m + 1));
  }

  // resolve module widening and validate spatial alignment
  std::vector<int> extras(n_module, 0);
  Shape cur = base.input_shape;
  for (int i = 0; i < n_module; ++i) {
    auto it = lateral_base.find(i);
    if (it != lateral_base.end()) {
      const Shape& bs = base_shapes[it->second];
      const bool both_maps = bs.size() == 3 && cur.size() == 3;
      const bool both_flat = bs.size() == 1 && cur.size() == 1;
      if (!(both_flat || (both_maps && bs[1] == cur[1] && bs[2] == cur[2])))
        throw ShapeError("stitch pair misaligned: base layer " + std::to_string(it->second) + " " +
                         shape_str(bs) + " vs module input " + shape_str(cur));
      extras[i] = bs[0];
    }
    cur = layer_output_shape(module_spec.layers[i], cur, extras[i]);
  }

  BuiltModule module = build_module(module_spec, base.input_shape, extras, seed);

  Composite net;
  net.topology = Topology::kStitch;
  net.num_classes = num_classes;
  net.input_shape = base.input_shape;
  net.base_spec = base.spec;
  net.module_spec = module_spec;
  net.layer_pairs = layer_pairs;
  net.input_id = net.graph.add_input(base.input_shape);
  net.base_nodes = append_stack(net.graph, base, net.input_id);

  std::vector<int> lateral(n_module, -1);
  for (auto [layer, b] : lateral_base) lateral[layer] = net.base_nodes.layer_outputs[b];
  net.module_nodes = append_stack(net.graph, module, net.input_id, &lateral);

  int features = net.graph.concat(net.base_nodes.features, net.module_nodes.features, 0);
  net.head_params = add_head(net.graph, features, num_classes);
  net.logits_id = net.graph.dense(features, net.head_params[0], net.head_params[1]);
  finish_loss(net, activity_lambda, net.module_nodes.features);
  return net;
}

StackGraph build_stack_graph(const BuiltModule& module) {
  StackGraph sg;
  sg.input_id = sg.graph.add_input(module.input_shape);
  sg.nodes = append_stack(sg.graph, module, sg.input_id);
  return sg;
}

BuiltModule extract_module(const Composite& net, const StackNodes& nodes, const ModuleSpec& spec,
                           const Shape& input_shape) {
  BuiltModule out;
  out.spec = spec;
  out.input_shape = input_shape;
  out.params.resize(spec.layers.size());
  out.extra_channels.assign(spec.layers.size(), 0);

  std::size_t next = 0;
  const std::vector<Shape> plain = stack_shapes(spec, input_shape);
  Shape cur = input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].has_params()) {
      if (next + 2 > nodes.param_ids.size())
        throw ContractError("stack param bookkeeping is off");
      out.params[i].weights = net.graph.value(nodes.param_ids[next++]);
      out.params[i].bias = net.graph.value(nodes.param_ids[next++]);
      // conv kernels are (F,Cin,kh,kw), dense weights (units,in); either way
      // slot 1 holds the consumed width, so stitch widening falls out here
      out.extra_channels[i] = out.params[i].weights.shape()[1] - cur[0];
    }
    cur = plain[i];
  }
  return out;
}

}  // namespace modnet
