#include "advlab/model.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "advlab/error.hpp"
#include "advlab/ops.hpp"

namespace advlab {
namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

Model::Model(std::string name, Shape input_shape, std::vector<LayerSpec> layers, std::uint64_t seed)
    : name_(std::move(name)), input_shape_(std::move(input_shape)), layers_(std::move(layers)), seed_(seed) {
  derive_shapes();
  std::mt19937_64 rng(seed);
  Shape shape = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    switch (l.kind) {
      case LayerKind::kConv:
        params_.push_back({prefix + "weight",
                           he_normal({l.out_channels, l.in_channels, l.kernel, l.kernel},
                                     l.in_channels * l.kernel * l.kernel, rng)});
        params_.push_back({prefix + "bias", Tensor::zeros({l.out_channels})});
        break;
      case LayerKind::kTransposedConv:
        // Each output pixel of a stride-s transposed convolution sums over
        // in_channels * (kernel / stride)^2 taps on average.
        params_.push_back(
            {prefix + "weight",
             he_normal({l.in_channels, l.out_channels, l.kernel, l.kernel},
                       std::max<std::size_t>(1, l.in_channels * l.kernel * l.kernel / (l.stride * l.stride)),
                       rng)});
        params_.push_back({prefix + "bias", Tensor::zeros({l.out_channels})});
        break;
      case LayerKind::kDense:
        params_.push_back({prefix + "weight", he_normal({shape[0], l.units}, shape[0], rng)});
        params_.push_back({prefix + "bias", Tensor::zeros({l.units})});
        break;
      default:
        break;
    }
    shape = l.output_shape(shape);
  }
}

void Model::derive_shapes() {
  if (input_shape_.empty()) throw ConfigError("model '" + name_ + "' has an empty input shape");
  Shape shape = input_shape_;
  param_offset_.clear();
  std::size_t count = 0;
  for (const auto& l : layers_) {
    param_offset_.push_back(count);
    shape = l.output_shape(shape);
    if (l.kind == LayerKind::kConv || l.kind == LayerKind::kTransposedConv || l.kind == LayerKind::kDense) {
      count += 2;
    }
  }
  output_shape_ = shape;
}

Model Model::from_parts(std::string name, Shape input_shape, std::vector<LayerSpec> layers,
                        std::uint64_t seed, std::vector<Parameter> params) {
  Model m;
  m.name_ = std::move(name);
  m.input_shape_ = std::move(input_shape);
  m.layers_ = std::move(layers);
  m.seed_ = seed;
  m.derive_shapes();
  // Shapes must match what the layer specs would create.
  const Model reference(m.name_, m.input_shape_, m.layers_, 0);
  if (reference.params_.size() != params.size()) {
    throw ConfigError("model '" + m.name_ + "' expects " + std::to_string(reference.params_.size()) +
                      " parameter tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value.shape() != reference.params_[i].value.shape()) {
      throw ShapeError("parameter '" + params[i].name + "' has shape " +
                       to_string(params[i].value.shape()) + ", layers need " +
                       to_string(reference.params_[i].value.shape()));
    }
  }
  m.params_ = std::move(params);
  return m;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Parameter& Model::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("model '" + name_ + "' has no parameter '" + name + "'");
}

Var Model::forward(Tape& tape, Var input, ParamBinding* binding) const {
  const Shape& s = input.shape();
  if (s.size() != input_shape_.size() + 1 || !std::equal(input_shape_.begin(), input_shape_.end(), s.begin() + 1)) {
    throw ShapeError("model '" + name_ + "' expects input [N]x" + to_string(input_shape_) + ", got " +
                     to_string(s));
  }
  const bool track = binding != nullptr && !frozen_;
  const auto bind = [&](std::size_t index) {
    if (!track) return tape.constant(params_[index].value);
    Var v = tape.variable(params_[index].value);
    binding->entries.push_back({this, index, v});
    return v;
  };
  Var x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    const std::size_t p = param_offset_[i];
    switch (l.kind) {
      case LayerKind::kConv:
        x = ops::conv2d(x, bind(p), bind(p + 1), {{l.stride, l.stride}, {l.padding, l.padding}});
        break;
      case LayerKind::kTransposedConv:
        x = ops::conv2d_transposed(x, bind(p), bind(p + 1), {{l.stride, l.stride}, {l.padding, l.padding}});
        break;
      case LayerKind::kPool:
        x = ops::maxpool2d(x, {l.kernel, l.kernel}, {l.stride, l.stride});
        break;
      case LayerKind::kDense:
        x = ops::add(ops::matmul(x, bind(p)), bind(p + 1));
        break;
      case LayerKind::kActivation:
        switch (l.activation) {
          case Activation::kRelu: x = ops::relu(x); break;
          case Activation::kTanh: x = ops::tanh(x); break;
          case Activation::kSigmoid: x = ops::sigmoid(x); break;
        }
        break;
      case LayerKind::kFlatten:
        x = ops::flatten(x);
        break;
    }
  }
  return x;
}

Tensor Model::infer(const Tensor& input) const {
  Tape tape;
  return forward(tape, tape.constant(input)).value();
}

Model Model::chain(std::string name, const Model& first, const Model& second) {
  if (first.output_shape_ != second.input_shape_) {
    throw ConfigError("cannot chain '" + first.name_ + "' (output " + to_string(first.output_shape_) +
                      ") into '" + second.name_ + "' (input " + to_string(second.input_shape_) + ")");
  }
  Model m;
  m.name_ = std::move(name);
  m.input_shape_ = first.input_shape_;
  m.layers_ = first.layers_;
  m.layers_.insert(m.layers_.end(), second.layers_.begin(), second.layers_.end());
  m.seed_ = first.seed_;
  m.derive_shapes();
  for (const auto& p : first.params_) m.params_.push_back({first.name_ + "/" + p.name, p.value});
  for (const auto& p : second.params_) m.params_.push_back({second.name_ + "/" + p.name, p.value});
  return m;
}

bool operator==(const Model& a, const Model& b) {
  return a.name_ == b.name_ && a.input_shape_ == b.input_shape_ && a.layers_ == b.layers_ &&
         same_parameters(a, b);
}

bool same_parameters(const Model& a, const Model& b) {
  const auto& pa = a.parameters();
  const auto& pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto& x = pa[i].value;
    const auto& y = pb[i].value;
    if (x.shape() != y.shape()) return false;
    if (std::memcmp(x.data().data(), y.data().data(), x.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace advlab
