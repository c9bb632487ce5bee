#include "advlab/architectures.hpp"

#include "advlab/error.hpp"

namespace advlab {
namespace {

// Distinct, reproducible sub-seeds for the parts of a composite model.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void require_image_shape(const Shape& s, const char* what) {
  if (s.size() != 3) throw ConfigError(std::string(what) + " needs a CxHxW input shape, got " + to_string(s));
}

}  // namespace

Model build_lenet5(std::size_t num_classes, const Shape& input_shape, std::uint64_t seed,
                   LeNetOptions options, std::string name) {
  require_image_shape(input_shape, "LeNet5");
  std::size_t pad = 0;
  if (input_shape[1] == 28 && input_shape[2] == 28) {
    pad = 2;
  } else if (input_shape[1] != 32 || input_shape[2] != 32) {
    throw ConfigError("LeNet5 needs 28x28 or 32x32 images, got " + to_string(input_shape));
  }
  if (num_classes < 2) throw ConfigError("LeNet5 needs at least two classes");
  if (options.width == 0) throw ConfigError("LeNet5 width multiplier must be positive");
  const std::size_t c1 = 6 * options.width, c2 = 16 * options.width;
  const auto act = LayerSpec::act(options.activation);
  return Model(std::move(name), input_shape,
               {LayerSpec::conv(input_shape[0], c1, 5, 1, pad), act, LayerSpec::pool(2, 2),
                LayerSpec::conv(c1, c2, 5), act, LayerSpec::pool(2, 2), LayerSpec::flatten(),
                LayerSpec::dense(120), act, LayerSpec::dense(84), act, LayerSpec::dense(num_classes)},
               seed);
}

Model build_encoder(const Shape& input_shape, std::uint64_t seed, AutoencoderOptions options, std::string name) {
  require_image_shape(input_shape, "encoder");
  if (input_shape[1] % 4 != 0 || input_shape[2] % 4 != 0) {
    throw ConfigError("encoder needs spatial dims divisible by 4 (two 2x poolings), got " +
                      to_string(input_shape));
  }
  if (options.latent_channels == 0) throw ConfigError("encoder needs at least one latent channel");
  const auto relu = LayerSpec::act(Activation::kRelu);
  return Model(std::move(name), input_shape,
               {LayerSpec::conv(input_shape[0], 16, 3, 1, 1), relu, LayerSpec::pool(2, 2),
                LayerSpec::conv(16, 32, 3, 1, 1), relu, LayerSpec::pool(2, 2),
                LayerSpec::conv(32, options.latent_channels, 3, 1, 1), relu},
               seed);
}

Model build_decoder(const Shape& latent_shape, std::size_t channels, std::uint64_t seed, std::string name) {
  require_image_shape(latent_shape, "decoder");
  const auto relu = LayerSpec::act(Activation::kRelu);
  return Model(std::move(name), latent_shape,
               {LayerSpec::conv(latent_shape[0], 32, 3, 1, 1), relu, LayerSpec::transposed_conv(32, 32, 2, 2), relu,
                LayerSpec::conv(32, 16, 3, 1, 1), relu, LayerSpec::transposed_conv(16, 16, 2, 2), relu,
                LayerSpec::conv(16, channels, 3, 1, 1), LayerSpec::act(Activation::kSigmoid)},
               seed);
}

Model build_autoencoder(const Shape& input_shape, std::uint64_t seed, AutoencoderOptions options, std::string name) {
  Model enc = build_encoder(input_shape, derive_seed(seed, 0), options, "encoder");
  Model dec = build_decoder(enc.output_shape(), input_shape[0], derive_seed(seed, 1), "decoder");
  Model ae = Model::chain(std::move(name), enc, dec);
  if (ae.output_shape() != input_shape) {
    throw ConfigError("autoencoder output " + to_string(ae.output_shape()) + " differs from input " +
                      to_string(input_shape));
  }
  return ae;
}

Model build_latent_head(const Shape& latent_shape, std::size_t num_classes, std::uint64_t seed,
                        std::size_t hidden, Activation activation, std::string name) {
  return Model(std::move(name), latent_shape,
               {LayerSpec::flatten(), LayerSpec::dense(hidden), LayerSpec::act(activation),
                LayerSpec::dense(num_classes)},
               seed);
}

EncoderClassifier build_encoder_classifier(const Shape& input_shape, std::size_t num_classes,
                                           std::uint64_t seed, AutoencoderOptions options, std::string id) {
  Model enc = build_encoder(input_shape, derive_seed(seed, 0), options, "encoder");
  Model dec = build_decoder(enc.output_shape(), input_shape[0], derive_seed(seed, 1), "decoder");
  Model head = build_latent_head(enc.output_shape(), num_classes, derive_seed(seed, 2));
  return EncoderClassifier(std::move(enc), std::move(dec), std::move(head), std::move(id));
}

}  // namespace advlab
