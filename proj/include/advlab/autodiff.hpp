#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "advlab/tensor.hpp"

namespace advlab {

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid while the tape
// lives and has not been cleared.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  // dLoss/dVar from the most recent backward pass (zeros if unreached).
  const Tensor& grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// View handed to a gradient rule while the tape is swept backwards.
class BackwardContext {
 public:
  const Tensor& grad_output() const;
  const Tensor& output() const;
  const Tensor& input(std::size_t k) const;
  bool needs_grad(std::size_t k) const;
  // Accumulator for input k, zero-initialised on first use.
  Tensor& input_grad(std::size_t k);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, std::size_t node) : tape_(tape), node_(node) {}
  Tape& tape_;
  std::size_t node_;
};

using BackwardRule = std::function<void(BackwardContext&)>;

// Define-by-run record of a computation. Nodes are appended in evaluation
// order, so inputs always precede the nodes that consume them. A tape has a
// single owner; build a fresh tape per thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that never receives a gradient.
  Var constant(Tensor value);
  // Leaf whose gradient is tracked.
  Var variable(Tensor value);

  // Appends the result of an operation. The node requires a gradient when
  // any input does; the rule is dropped otherwise. Rejects non-finite values.
  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardRule rule);

  // Reverse sweep from a scalar loss (seed 1). Gradients from earlier sweeps
  // are discarded first, so the same tape can be differentiated repeatedly
  // from different roots.
  void backward(Var loss);
  // Vector-Jacobian product: sweep from `root` seeded with `seed`.
  void backward(Var root, const Tensor& seed);

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Number of completed backward sweeps since construction.
  std::size_t backward_count() const noexcept { return backward_count_; }

 private:
  friend class Var;
  friend class BackwardContext;

  struct Node {
    const char* op = "leaf";
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardRule rule;
  };

  void check_owned(const Var& v) const;
  const Tensor& grad_of(std::size_t id) const;
  Tensor& accumulator(std::size_t id);

  mutable std::vector<Node> nodes_;
  std::size_t backward_count_ = 0;
};

}  // namespace advlab
