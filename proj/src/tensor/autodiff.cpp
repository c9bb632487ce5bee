#include "advlab/autodiff.hpp"

#include "advlab/error.hpp"

namespace advlab {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->nodes_.at(id_).value;
}

bool Var::requires_grad() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->nodes_.at(id_).requires_grad;
}

const Tensor& Var::grad() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->grad_of(id_);
}

const Tensor& BackwardContext::grad_output() const { return tape_.nodes_[node_].grad; }

const Tensor& BackwardContext::output() const { return tape_.nodes_[node_].value; }

const Tensor& BackwardContext::input(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(k)].value;
}

bool BackwardContext::needs_grad(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(k)].requires_grad;
}

Tensor& BackwardContext::input_grad(std::size_t k) {
  return tape_.accumulator(tape_.nodes_[node_].inputs.at(k));
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant leaf holds non-finite values");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  if (!value.all_finite()) throw NumericError("variable leaf holds non-finite values");
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(const Var& v) const {
  if (v.tape_ != this) throw ContractError("Var belongs to a different tape");
  if (v.id_ >= nodes_.size()) throw ContractError("Var refers to a cleared tape entry");
}

Var Tape::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardRule rule) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + " produced non-finite values (overflow or invalid input)");
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    check_owned(in);
    n.inputs.push_back(in.id_);
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) n.rule = std::move(rule);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad_of(std::size_t id) const {
  Node& n = nodes_.at(id);
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

Tensor& Tape::accumulator(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (loss.value().size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  backward(loss, Tensor::ones(loss.shape()));
}

void Tape::backward(Var root, const Tensor& seed) {
  check_owned(root);
  if (seed.shape() != root.shape()) {
    throw ShapeError("backward seed " + to_string(seed.shape()) + " does not match root " +
                     to_string(root.shape()));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  nodes_[root.id_].grad = seed;
  nodes_[root.id_].has_grad = true;
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad || !n.rule) continue;
    BackwardContext ctx(*this, i);
    n.rule(ctx);
  }
  ++backward_count_;
}

}  // namespace advlab
