#pragma once

#include <cstddef>
#include <string>

#include "advlab/tensor.hpp"

namespace advlab {

enum class LayerKind { kConv, kTransposedConv, kPool, kDense, kActivation, kFlatten };
enum class Activation { kRelu, kTanh, kSigmoid };

std::string to_string(LayerKind kind);
std::string to_string(Activation act);
LayerKind parse_layer_kind(const std::string& s);
Activation parse_activation(const std::string& s);

// One layer of a sequential model. Fields irrelevant to `kind` stay zero.
// Pool layers use `kernel` as the window size.
struct LayerSpec {
  LayerKind kind = LayerKind::kFlatten;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t units = 0;
  Activation activation = Activation::kRelu;

  static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                        std::size_t padding = 0);
  static LayerSpec transposed_conv(std::size_t in, std::size_t out, std::size_t kernel,
                                   std::size_t stride = 1, std::size_t padding = 0);
  static LayerSpec pool(std::size_t window, std::size_t stride);
  static LayerSpec dense(std::size_t units);
  static LayerSpec act(Activation a);
  static LayerSpec flatten();

  // Per-sample output shape for a per-sample input shape; throws ConfigError
  // when the layer cannot consume `in`.
  Shape output_shape(const Shape& in) const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

}  // namespace advlab
