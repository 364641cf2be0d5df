#include "modnet/viz.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "modnet/errors.hpp"

namespace modnet {

Tensor gaussian_smooth(const Tensor& img, double radius) {
  if (img.rank() != 3) throw ShapeError("gaussian_smooth expects a (C,H,W) image");
  if (radius <= 0) return img;
  const int C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
  const int hw = static_cast<int>(std::ceil(3.0 * radius));
  std::vector<double> kernel(2 * hw + 1);
  for (int i = -hw; i <= hw; ++i) kernel[i + hw] = std::exp(-(i * i) / (2.0 * radius * radius));

  Tensor out(img.shape());
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0, wsum = 0;
        for (int dy = -hw; dy <= hw; ++dy) {
          const int sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          for (int dx = -hw; dx <= hw; ++dx) {
            const int sx = x + dx;
            if (sx < 0 || sx >= W) continue;
            const double w = kernel[dy + hw] * kernel[dx + hw];
            acc += w * img.at(c, sy, sx);
            wsum += w;
          }
        }
        out.at(c, y, x) = acc / wsum;
      }
  return out;
}

Tensor init_canvas(const Shape& shape, double smoothing_radius, std::uint64_t seed) {
  if (shape.size() != 3) throw ShapeError("canvas shape must be (C,H,W)");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Tensor noise(shape);
  for (std::int64_t i = 0; i < noise.numel(); ++i) noise[i] = dist(rng);
  return gaussian_smooth(noise, smoothing_radius);
}

namespace {

AscendResult ascend_on_graph(Graph graph, int input_id, int conv_node, int filter,
                             const VizConfig& cfg) {
  if (cfg.iterations < 1) throw ContractError("ascend needs iterations >= 1");
  if (cfg.step_size <= 0) throw ContractError("ascend needs a positive step size");

  const int objective = graph.channel_mean(conv_node, filter);
  graph.want_input_grad(true);

  AscendResult result;
  result.canvas = init_canvas(graph.value(input_id).shape(), cfg.smoothing_radius, cfg.seed);
  for (int t = 0; t < cfg.iterations; ++t) {
    graph.set_value(input_id, result.canvas);
    graph.forward();
    result.trace.push_back(graph.value(objective)[0]);
    graph.backward(objective);
    const Tensor& grad = graph.grad(input_id);
    const double norm = std::sqrt(grad.array().square().sum());
    if (norm == 0.0) {
      result.zero_gradient = true;
      return result;
    }
    Tensor next = result.canvas;
    next.array() += (cfg.step_size / norm) * grad.array();
    result.step_norms.push_back(
        std::sqrt((next.array() - result.canvas.array()).square().sum()));
    result.canvas = std::move(next);
  }
  return result;
}

int resolve_conv_node(const StackNodes& nodes, const ModuleSpec& spec, const VizConfig& cfg) {
  if (cfg.layer < 0 || cfg.layer >= static_cast<int>(spec.layers.size()))
    throw ConfigError("viz layer " + std::to_string(cfg.layer) + " out of range for '" +
                      spec.name + "'");
  const LayerDesc& l = spec.layers[cfg.layer];
  if (l.kind != LayerKind::kConv)
    throw ConfigError("viz target layer " + std::to_string(cfg.layer) + " of '" + spec.name +
                      "' is not a conv layer");
  if (cfg.filter < 0 || cfg.filter >= l.filters)
    throw ConfigError("viz filter " + std::to_string(cfg.filter) + " out of range; layer has " +
                      std::to_string(l.filters));
  return nodes.layer_nodes[cfg.layer];
}

}  // namespace

AscendResult ascend(const Composite& net, const VizConfig& cfg) {
  const StackNodes* nodes = nullptr;
  const ModuleSpec* spec = nullptr;
  if (cfg.module == net.base_spec.name) {
    nodes = &net.base_nodes;
    spec = &net.base_spec;
  } else if (net.module_spec && cfg.module == net.module_spec->name) {
    nodes = &net.module_nodes;
    spec = &*net.module_spec;
  } else {
    throw ConfigError("composite has no module named '" + cfg.module + "'");
  }
  return ascend_on_graph(net.graph, net.input_id, resolve_conv_node(*nodes, *spec, cfg),
                         cfg.filter, cfg);
}

AscendResult ascend(const BuiltModule& module, const VizConfig& cfg) {
  if (cfg.module != module.spec.name)
    throw ConfigError("module is named '" + module.spec.name + "', not '" + cfg.module + "'");
  StackGraph sg = build_stack_graph(module);
  return ascend_on_graph(std::move(sg.graph), sg.input_id,
                         resolve_conv_node(sg.nodes, module.spec, cfg), cfg.filter, cfg);
}

void render_pgm(const Tensor& canvas, const std::string& path) {
  if (canvas.rank() != 3 || canvas.shape()[0] != 1)
    throw ShapeError("render_pgm expects a single-channel (1,H,W) canvas");
  const int H = canvas.shape()[1], W = canvas.shape()[2];
  const double lo = canvas.array().minCoeff(), hi = canvas.array().maxCoeff();

  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "P2\n" << W << ' ' << H << "\n255\n";
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int v = (hi == lo)
                        ? 128
                        : static_cast<int>(std::floor((canvas.at(0, y, x) - lo) / (hi - lo) * 255.0));
      out << std::min(255, v) << (x + 1 == W ? '\n' : ' ');
    }
  }
  if (!out) throw DataError("short write to " + path);
}

}  // namespace modnet
