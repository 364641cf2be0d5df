#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modnet/composite.hpp"
#include "modnet/module.hpp"
#include "modnet/tensor.hpp"

namespace modnet {

/// Activation-maximization target and schedule. The objective is the mean
/// of the chosen filter's response map (the conv output before its ReLU),
/// and each step moves the canvas by exactly step_size in L2 norm along
/// the normalized input gradient.
struct VizConfig {
  std::string module = "base";  // stack name inside the composite
  int layer = 0;                // index into that stack's layer list; must be a conv layer
  int filter = 0;
  double step_size = 0.01;
  int iterations = 500;
  double smoothing_radius = 1.0;
  std::uint64_t seed = 0;
};

/// Gaussian blur with sigma = radius, truncated at 3 sigma, kernel weights
/// renormalized over the in-bounds window (so a constant image stays
/// constant at the borders). radius <= 0 returns the input unchanged.
Tensor gaussian_smooth(const Tensor& img, double radius);

/// Uniform [0,1) noise smoothed with gaussian_smooth; deterministic per seed.
Tensor init_canvas(const Shape& shape, double smoothing_radius, std::uint64_t seed);

struct AscendResult {
  Tensor canvas;
  std::vector<double> trace;       // objective before each completed update
  std::vector<double> step_norms;  // measured L2 displacement of each completed update
  bool zero_gradient = false;      // terminated early on a vanished gradient
};

/// Runs cfg.iterations normalized-gradient-ascent steps on the input
/// pixels. Network weights are never touched: the walk happens on a clone
/// of the graph.
AscendResult ascend(const Composite& net, const VizConfig& cfg);

/// Same, for a standalone module outside any composite.
AscendResult ascend(const BuiltModule& module, const VizConfig& cfg);

/// Plain-text PGM (P2), min-max normalized to 0..255; a constant canvas
/// maps to mid-gray 128. The canvas must be single-channel.
void render_pgm(const Tensor& canvas, const std::string& path);

}  // namespace modnet
