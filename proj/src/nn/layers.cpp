#include "advlab/layers.hpp"

#include "advlab/error.hpp"

namespace advlab {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kTransposedConv: return "transposed-conv";
    case LayerKind::kPool: return "pool";
    case LayerKind::kDense: return "dense";
    case LayerKind::kActivation: return "activation";
    case LayerKind::kFlatten: return "flatten";
  }
  return "?";
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& s) {
  for (auto k : {LayerKind::kConv, LayerKind::kTransposedConv, LayerKind::kPool, LayerKind::kDense,
                 LayerKind::kActivation, LayerKind::kFlatten}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown layer kind '" + s + "'");
}

Activation parse_activation(const std::string& s) {
  for (auto a : {Activation::kRelu, Activation::kTanh, Activation::kSigmoid}) {
    if (to_string(a) == s) return a;
  }
  throw ConfigError("unknown activation '" + s + "'");
}

LayerSpec LayerSpec::conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                          std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::kConv;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::transposed_conv(std::size_t in, std::size_t out, std::size_t kernel,
                                     std::size_t stride, std::size_t padding) {
  LayerSpec s = conv(in, out, kernel, stride, padding);
  s.kind = LayerKind::kTransposedConv;
  return s;
}

LayerSpec LayerSpec::pool(std::size_t window, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::kPool;
  s.kernel = window;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::dense(std::size_t units) {
  LayerSpec s;
  s.kind = LayerKind::kDense;
  s.units = units;
  return s;
}

LayerSpec LayerSpec::act(Activation a) {
  LayerSpec s;
  s.kind = LayerKind::kActivation;
  s.activation = a;
  return s;
}

LayerSpec LayerSpec::flatten() { return LayerSpec{}; }

Shape LayerSpec::output_shape(const Shape& in) const {
  const auto fail = [&](const std::string& why) {
    throw ConfigError(to_string(kind) + " layer cannot consume input " + advlab::to_string(in) + ": " + why);
  };
  switch (kind) {
    case LayerKind::kConv: {
      if (in.size() != 3) fail("expects CxHxW");
      if (in[0] != in_channels) fail("expects " + std::to_string(in_channels) + " channels");
      if (kernel == 0 || stride == 0) fail("kernel and stride must be positive");
      if (in[1] + 2 * padding < kernel || in[2] + 2 * padding < kernel) fail("nonpositive output size");
      return {out_channels, (in[1] + 2 * padding - kernel) / stride + 1,
              (in[2] + 2 * padding - kernel) / stride + 1};
    }
    case LayerKind::kTransposedConv: {
      if (in.size() != 3) fail("expects CxHxW");
      if (in[0] != in_channels) fail("expects " + std::to_string(in_channels) + " channels");
      if (kernel == 0 || stride == 0) fail("kernel and stride must be positive");
      const std::size_t h = (in[1] - 1) * stride + kernel;
      const std::size_t w = (in[2] - 1) * stride + kernel;
      if (h <= 2 * padding || w <= 2 * padding) fail("nonpositive output size");
      return {out_channels, h - 2 * padding, w - 2 * padding};
    }
    case LayerKind::kPool: {
      if (in.size() != 3) fail("expects CxHxW");
      if (kernel == 0 || stride == 0) fail("window and stride must be positive");
      if (kernel > in[1] || kernel > in[2]) fail("window larger than input");
      return {in[0], (in[1] - kernel) / stride + 1, (in[2] - kernel) / stride + 1};
    }
    case LayerKind::kDense:
      if (in.size() != 1) fail("expects a flat feature vector");
      if (units == 0) fail("units must be positive");
      return {units};
    case LayerKind::kActivation:
      return in;
    case LayerKind::kFlatten:
      return {shape_size(in)};
  }
  return in;
}

}  // namespace advlab
