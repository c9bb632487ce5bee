#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advlab/autodiff.hpp"
#include "advlab/layers.hpp"

namespace advlab {

struct Parameter {
  std::string name;
  Tensor value;
};

class Model;

// Collects the tape variables created for parameters during a forward pass,
// so a trainer can read their gradients afterwards.
struct ParamBinding {
  struct Entry {
    const Model* model;
    std::size_t index;
    Var var;
  };
  std::vector<Entry> entries;
};

// Sequential stack of layers with its own parameter store. The per-sample
// output shape is derived from the layer specs at construction.
class Model {
 public:
  Model() = default;
  // Parameters are initialised with zero-mean normals of variance 2 / fan_in
  // and zero biases, drawn from a generator seeded with `seed`.
  Model(std::string name, Shape input_shape, std::vector<LayerSpec> layers, std::uint64_t seed);

  const std::string& name() const noexcept { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }
  const Shape& input_shape() const noexcept { return input_shape_; }
  const Shape& output_shape() const noexcept { return output_shape_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::uint64_t seed() const noexcept { return seed_; }

  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const;
  Parameter& parameter(const std::string& name);

  // A frozen model never exposes its parameters to a binding, so training
  // steps cannot touch them.
  bool frozen() const noexcept { return frozen_; }
  void set_frozen(bool frozen) noexcept { frozen_ = frozen; }

  // Input [N, input_shape...] -> output [N, output_shape...]. With a binding
  // (and not frozen) parameters are recorded as gradient-tracked variables.
  Var forward(Tape& tape, Var input, ParamBinding* binding = nullptr) const;
  Tensor infer(const Tensor& input) const;

  // Sequential composition `second(first(x))` with both parameter stores;
  // parameter names are prefixed by each part's name.
  static Model chain(std::string name, const Model& first, const Model& second);

  // Rebuild from stored parts (used when loading checkpoints).
  static Model from_parts(std::string name, Shape input_shape, std::vector<LayerSpec> layers,
                          std::uint64_t seed, std::vector<Parameter> params);

  friend bool operator==(const Model& a, const Model& b);

 private:
  void derive_shapes();

  std::string name_;
  Shape input_shape_;
  Shape output_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> param_offset_;  // first parameter index per layer
  std::vector<Parameter> params_;
  std::uint64_t seed_ = 0;
  bool frozen_ = false;
};

// True when all parameter tensors are bitwise equal.
bool same_parameters(const Model& a, const Model& b);

}  // namespace advlab
