#include "modnet/module.hpp"

#include <cctype>
#include <cmath>
#include <random>
#include <sstream>

#include "modnet/errors.hpp"

namespace modnet {

namespace {

LayerDesc parse_layer_token(const std::string& tok, const std::string& arch) {
  auto bad = [&](const std::string& why) {
    return ConfigError("bad layer '" + tok + "' in arch '" + arch + "': " + why);
  };
  if (tok == "maxpool2") return LayerDesc::maxpool2();
  if (tok == "flatten") return LayerDesc::flatten();
  if (tok.rfind("dense", 0) == 0) {
    const std::string num = tok.substr(5);
    if (num.empty()) throw bad("missing unit count");
    for (char c : num)
      if (!std::isdigit(static_cast<unsigned char>(c))) throw bad("unit count not a number");
    return LayerDesc::dense(std::stoi(num));
  }
  if (tok.size() >= 2 && tok.front() == '(' && tok.back() == ')') {
    std::string body = tok.substr(1, tok.size() - 2);
    for (char& c : body)
      if (c == '*') c = 'x';
    std::istringstream is(body);
    int f = 0, kh = 0, kw = 0;
    char s1 = 0, s2 = 0;
    if (!(is >> f >> s1 >> kh >> s2 >> kw) || s1 != 'x' || s2 != 'x' || !(is >> std::ws).eof())
      throw bad("expected (FxKHxKW)");
    if (f < 0 || kh < 1 || kw < 1) throw bad("extents must be positive");
    return LayerDesc::conv(f, kh, kw);
  }
  throw bad("unknown layer token");
}

}  // namespace

ModuleSpec parse_arch(const std::string& name, const std::string& arch, bool frozen) {
  ModuleSpec spec;
  spec.name = name;
  spec.frozen = frozen;

  // split on '-' but never inside parentheses
  std::vector<std::string> tokens;
  std::string cur;
  int depth = 0;
  for (char c : arch) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == '-' && depth == 0) {
      if (!cur.empty()) tokens.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  if (tokens.empty()) return spec;  // empty arch is the identity module

  bool flat = false;
  for (const std::string& tok : tokens) {
    LayerDesc layer = parse_layer_token(tok, arch);
    if (layer.kind == LayerKind::kDense && !flat) {
      spec.layers.push_back(LayerDesc::flatten());
      flat = true;
    }
    if (layer.kind == LayerKind::kFlatten) flat = true;
    spec.layers.push_back(layer);
  }
  return spec;
}

std::string arch_string(const ModuleSpec& spec) {
  std::ostringstream os;
  bool first = true;
  for (const LayerDesc& l : spec.layers) {
    if (!first) os << '-';
    first = false;
    switch (l.kind) {
      case LayerKind::kConv: os << '(' << l.filters << 'x' << l.kh << 'x' << l.kw << ')'; break;
      case LayerKind::kMaxPool2: os << "maxpool2"; break;
      case LayerKind::kDense: os << "dense" << l.units; break;
      case LayerKind::kFlatten: os << "flatten"; break;
    }
  }
  return os.str();
}

Shape layer_output_shape(const LayerDesc& layer, const Shape& input, int extra_channels) {
  Shape in = input;
  if (extra_channels > 0) {
    if (in.size() == 3)
      in[0] += extra_channels;
    else if (in.size() == 1)
      in[0] += extra_channels;
    else
      throw ShapeError("cannot widen shape " + shape_str(input));
  }
  switch (layer.kind) {
    case LayerKind::kConv:
      if (in.size() != 3)
        throw ShapeError("conv layer needs a (C,H,W) input, got " + shape_str(input));
      return {layer.filters, in[1], in[2]};
    case LayerKind::kMaxPool2:
      if (in.size() != 3)
        throw ShapeError("maxpool2 layer needs a (C,H,W) input, got " + shape_str(input));
      return {in[0], (in[1] + 1) / 2, (in[2] + 1) / 2};
    case LayerKind::kDense:
      if (in.size() != 1)
        throw ShapeError("dense layer needs a flat input, got " + shape_str(input) +
                         " (missing flatten?)");
      return {layer.units};
    case LayerKind::kFlatten:
      return {static_cast<int>(shape_numel(in))};
  }
  throw ShapeError("unreachable layer kind");
}

std::vector<Shape> stack_shapes(const ModuleSpec& spec, const Shape& input) {
  std::vector<Shape> shapes;
  Shape cur = input;
  for (const LayerDesc& l : spec.layers) {
    cur = layer_output_shape(l, cur);
    shapes.push_back(cur);
  }
  return shapes;
}

std::int64_t BuiltModule::param_count() const {
  std::int64_t n = 0;
  for (const LayerParams& p : params) n += p.weights.numel() + p.bias.numel();
  return n;
}

Tensor glorot_uniform(Shape shape, int fan_in, int fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / std::max(1, fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

Tensor he_normal(Shape shape, int fan_in, std::mt19937_64& rng) {
  const double stddev = std::sqrt(2.0 / std::max(1, fan_in));
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

BuiltModule build_module(const ModuleSpec& spec, const Shape& input_shape, std::uint64_t seed) {
  return build_module(spec, input_shape, std::vector<int>(spec.layers.size(), 0), seed);
}

BuiltModule build_module(const ModuleSpec& spec, const Shape& input_shape,
                         const std::vector<int>& extra_channels, std::uint64_t seed) {
  if (extra_channels.size() != spec.layers.size())
    throw ContractError("extra_channels size must match layer count");

  BuiltModule built;
  built.spec = spec;
  built.input_shape = input_shape;
  built.extra_channels = extra_channels;
  built.params.resize(spec.layers.size());

  std::mt19937_64 rng(seed);
  Shape cur = input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& l = spec.layers[i];
    const Shape out = layer_output_shape(l, cur, extra_channels[i]);  // validates the sequence
    Shape in = cur;
    if (extra_channels[i] > 0) in[0] += extra_channels[i];
    switch (l.kind) {
      case LayerKind::kConv: {
        const int fan_in = in[0] * l.kh * l.kw;
        built.params[i].weights = he_normal({l.filters, in[0], l.kh, l.kw}, fan_in, rng);
        built.params[i].bias = Tensor({l.filters});
        break;
      }
      case LayerKind::kDense: {
        built.params[i].weights = glorot_uniform({l.units, in[0]}, in[0], l.units, rng);
        built.params[i].bias = Tensor({l.units});
        break;
      }
      case LayerKind::kMaxPool2:
      case LayerKind::kFlatten:
        break;
    }
    cur = out;
  }
  return built;
}

void set_frozen(BuiltModule& module, bool frozen) { module.spec.frozen = frozen; }

}  // namespace modnet
