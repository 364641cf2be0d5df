#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "modnet/tensor.hpp"

namespace modnet {

enum class LayerKind { kConv, kMaxPool2, kDense, kFlatten };

struct LayerDesc {
  LayerKind kind = LayerKind::kFlatten;
  int filters = 0, kh = 0, kw = 0;  // conv
  int units = 0;                    // dense

  static LayerDesc conv(int filters, int kh, int kw) { return {LayerKind::kConv, filters, kh, kw, 0}; }
  static LayerDesc maxpool2() { return {LayerKind::kMaxPool2}; }
  static LayerDesc dense(int units) { return {LayerKind::kDense, 0, 0, 0, units}; }
  static LayerDesc flatten() { return {LayerKind::kFlatten}; }

  bool has_params() const { return kind == LayerKind::kConv || kind == LayerKind::kDense; }
  bool operator==(const LayerDesc&) const = default;
};

/// A layer stack treated as a unit, with an all-or-nothing frozen flag.
struct ModuleSpec {
  std::string name;
  std::vector<LayerDesc> layers;
  bool frozen = false;

  bool operator==(const ModuleSpec&) const = default;
};

/// Parses compact architecture strings like
///   "(8x8x8)-maxpool2-(8x4x4)-(8x3x3)-dense128"
/// where (FxKHxKW) is a conv layer. A flatten is inserted automatically
/// before the first dense when the running value is still an image. 'x'
/// may also be written as '*'. Throws ConfigError on malformed strings.
ModuleSpec parse_arch(const std::string& name, const std::string& arch, bool frozen = false);

/// Inverse of parse_arch, for configs and checkpoint headers.
std::string arch_string(const ModuleSpec& spec);

/// Output shape of one layer. extra_channels widens the input along the
/// channel/feature axis before the layer is applied (stitch wiring).
Shape layer_output_shape(const LayerDesc& layer, const Shape& input, int extra_channels = 0);

/// Shape after each layer of the stack, starting from `input`.
/// Validates the sequence (dense needs a flat input, conv/pool an image).
std::vector<Shape> stack_shapes(const ModuleSpec& spec, const Shape& input);

struct LayerParams {
  Tensor weights, bias;  // empty for pool/flatten layers
  bool present() const { return weights.rank() > 0; }
};

/// A ModuleSpec instantiated against an input shape: seeded parameters,
/// one slot per layer. Copyable by value.
struct BuiltModule {
  ModuleSpec spec;
  Shape input_shape;
  std::vector<LayerParams> params;            // aligned with spec.layers
  std::vector<int> extra_channels;            // stitch widening used at build time

  std::int64_t param_count() const;
  std::int64_t trainable_count() const { return spec.frozen ? 0 : param_count(); }
};

/// Instantiates spec on input_shape with seeded initialization: He-style
/// normal for conv kernels, fan-scaled uniform for dense weights, zero
/// biases. Same seed, same parameters, bit for bit.
BuiltModule build_module(const ModuleSpec& spec, const Shape& input_shape, std::uint64_t seed);

/// Same, but layer i's input is widened by extra_channels[i] along the
/// channel/feature axis before the layer applies (stitch composition).
BuiltModule build_module(const ModuleSpec& spec, const Shape& input_shape,
                         const std::vector<int>& extra_channels, std::uint64_t seed);

void set_frozen(BuiltModule& module, bool frozen);

/// Seeded initializers shared with head construction.
Tensor glorot_uniform(Shape shape, int fan_in, int fan_out, std::mt19937_64& rng);
Tensor he_normal(Shape shape, int fan_in, std::mt19937_64& rng);

}  // namespace modnet
