#include "advlab/classifier.hpp"

#include <algorithm>

#include "advlab/error.hpp"
#include "advlab/ops.hpp"

namespace advlab {
namespace {

constexpr std::size_t kInferenceChunk = 256;

}  // namespace

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.dim(0);
  const std::size_t k = logits.size() / n;
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

Tensor Classifier::predict_logits(const Tensor& input) const {
  const std::size_t n = input.dim(0);
  const std::size_t k = num_classes();
  Tensor out({n, k});
  for (std::size_t begin = 0; begin < n; begin += kInferenceChunk) {
    const std::size_t end = std::min(n, begin + kInferenceChunk);
    Tape tape;
    Var x = tape.constant(begin == 0 && end == n ? input : input.rows(begin, end));
    const Tensor& z = do_logits(tape, x, nullptr).value();
    std::copy(z.data().begin(), z.data().end(), out.data().begin() + begin * k);
  }
  return out;
}

std::vector<int> Classifier::predict(const Tensor& input) const {
  return argmax_rows(predict_logits(input));
}

ModelClassifier::ModelClassifier(Model model) : model_(std::move(model)) {
  if (model_.output_shape().size() != 1) {
    throw ConfigError("model '" + model_.name() + "' does not produce flat logits (output " +
                      to_string(model_.output_shape()) + ")");
  }
}

Var ModelClassifier::do_logits(Tape& tape, Var input, ParamBinding* binding) const {
  return model_.forward(tape, input, binding);
}

WholeClassifier::WholeClassifier(Model autoencoder, Model classifier, std::string id)
    : autoencoder_(std::move(autoencoder)), classifier_(std::move(classifier)), id_(std::move(id)) {
  if (autoencoder_.output_shape() != classifier_.input_shape()) {
    throw ConfigError("autoencoder output " + to_string(autoencoder_.output_shape()) +
                      " does not match classifier input " + to_string(classifier_.input_shape()));
  }
  if (classifier_.output_shape().size() != 1) {
    throw ConfigError("classifier '" + classifier_.name() + "' does not produce flat logits");
  }
}

Var WholeClassifier::do_logits(Tape& tape, Var input, ParamBinding* binding) const {
  return classifier_.forward(tape, autoencoder_.forward(tape, input, binding), binding);
}

WholeClassifier compose_aec(Model autoencoder, Model classifier, std::string id) {
  autoencoder.set_frozen(true);
  return WholeClassifier(std::move(autoencoder), std::move(classifier), std::move(id));
}

EncoderClassifier::EncoderClassifier(Model encoder, Model decoder, Model head, std::string id)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)), head_(std::move(head)), id_(std::move(id)) {
  if (encoder_.output_shape() != decoder_.input_shape() || encoder_.output_shape() != head_.input_shape()) {
    throw ConfigError("encoder output " + to_string(encoder_.output_shape()) +
                      " must feed both decoder (" + to_string(decoder_.input_shape()) + ") and head (" +
                      to_string(head_.input_shape()) + ")");
  }
  if (decoder_.output_shape() != encoder_.input_shape()) {
    throw ConfigError("decoder output " + to_string(decoder_.output_shape()) +
                      " does not reconstruct the input shape " + to_string(encoder_.input_shape()));
  }
}

Var EncoderClassifier::do_logits(Tape& tape, Var input, ParamBinding* binding) const {
  return head_.forward(tape, encoder_.forward(tape, input, binding), binding);
}

Var EncoderClassifier::reconstruct(Tape& tape, Var input, ParamBinding* binding) const {
  return decoder_.forward(tape, encoder_.forward(tape, input, binding), binding);
}

std::pair<Var, Var> EncoderClassifier::forward_both(Tape& tape, Var input, ParamBinding* binding) const {
  Var z = encoder_.forward(tape, input, binding);
  Var logits = head_.forward(tape, z, binding);
  Var recon = decoder_.forward(tape, z, binding);
  return {logits, recon};
}

Model EncoderClassifier::classification_model() const {
  return Model::chain(id_ + "-classifier", encoder_, head_);
}

Var GradientZeroingClassifier::do_logits(Tape& tape, Var input, ParamBinding* binding) const {
  return inner_.logits(tape, ops::stop_gradient(input), binding);
}

Var CountingClassifier::do_logits(Tape& tape, Var input, ParamBinding* binding) const {
  ++calls_;
  return inner_.logits(tape, input, binding);
}

ConstantClassifier::ConstantClassifier(std::vector<double> logits, Shape input_shape, std::string id)
    : logits_(std::move(logits)), input_shape_(std::move(input_shape)), id_(std::move(id)) {
  if (logits_.empty()) throw ConfigError("constant classifier needs at least one class");
}

Var ConstantClassifier::do_logits(Tape& tape, Var input, ParamBinding*) const {
  const std::size_t n = input.shape().at(0);
  const std::size_t k = logits_.size();
  // Multiplying the input by zero keeps the output on the input's graph, so
  // its gradient is an explicit zero rather than "unreached".
  Var zero = ops::scale(ops::row_sum(input), 0.0);
  Tensor base({n, k});
  for (std::size_t i = 0; i < n; ++i) std::copy(logits_.begin(), logits_.end(), base.data().begin() + i * k);
  Var z = ops::reshape(zero, {n, 1});
  // [N,1] cannot broadcast to [N,K] under the leading-axis rule; expand via matmul.
  Var expanded = ops::matmul(z, tape.constant(Tensor::ones({1, k})));
  return ops::add(expanded, tape.constant(std::move(base)));
}

}  // namespace advlab
