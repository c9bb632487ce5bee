#pragma once

#include <cstdint>

#include "advlab/classifier.hpp"
#include "advlab/model.hpp"

namespace advlab {

struct LeNetOptions {
  Activation activation = Activation::kTanh;
  // Multiplies both convolution widths (6 and 16); 2 gives the wider
  // LeNet-like substitute.
  std::size_t width = 1;
};

// conv5x5(6) - act - pool2 - conv5x5(16) - act - pool2 - dense120 - act -
// dense84 - act - dense(num_classes). Accepts Cx28x28 (first conv padded by
// 2) or Cx32x32 inputs.
Model build_lenet5(std::size_t num_classes, const Shape& input_shape, std::uint64_t seed,
                   LeNetOptions options = {}, std::string name = "C");

struct AutoencoderOptions {
  // Width of the last encoder convolution, i.e. the latent channel count.
  std::size_t latent_channels = 64;
};

// Encoder: conv3x3(16) - relu - pool2 - conv3x3(32) - relu - pool2 -
// conv3x3(latent) - relu. Spatial dims must be divisible by 4.
Model build_encoder(const Shape& input_shape, std::uint64_t seed, AutoencoderOptions options = {},
                    std::string name = "encoder");

// Decoder mirroring the encoder with two stride-2 transposed convolutions and
// a final sigmoid, mapping latent x H/4 x W/4 back to `channels` x H x W.
Model build_decoder(const Shape& latent_shape, std::size_t channels, std::uint64_t seed,
                    std::string name = "decoder");

// build_encoder followed by build_decoder; output shape equals input shape.
Model build_autoencoder(const Shape& input_shape, std::uint64_t seed, AutoencoderOptions options = {},
                        std::string name = "AE");

// Classification head on the encoder latents: flatten - dense(hidden) - act - dense(num_classes).
Model build_latent_head(const Shape& latent_shape, std::size_t num_classes, std::uint64_t seed,
                        std::size_t hidden = 128, Activation activation = Activation::kTanh,
                        std::string name = "head");

EncoderClassifier build_encoder_classifier(const Shape& input_shape, std::size_t num_classes,
                                           std::uint64_t seed, AutoencoderOptions options = {},
                                           std::string id = "EC");

}  // namespace advlab
