#pragma once

#include <atomic>
#include <cstddef>
#include <string>
#include <vector>

#include "advlab/model.hpp"

namespace advlab {

// Anything that maps an image batch to class logits. The differentiable path
// (`logits`) is what white-box attacks and trainers use; `predict_logits` is
// inference only and never builds a gradient-capable evaluation. Both are
// safe to call concurrently as long as each caller owns its tape.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::string id() const = 0;
  virtual std::size_t num_classes() const = 0;
  // Per-sample input shape, e.g. {1, 28, 28}.
  virtual Shape input_shape() const = 0;

  Var logits(Tape& tape, Var input, ParamBinding* binding = nullptr) const {
    return do_logits(tape, input, binding);
  }

  virtual Tensor predict_logits(const Tensor& input) const;
  // Argmax per sample; ties go to the lowest class index.
  std::vector<int> predict(const Tensor& input) const;

 protected:
  virtual Var do_logits(Tape& tape, Var input, ParamBinding* binding) const = 0;
};

std::vector<int> argmax_rows(const Tensor& logits);

// A single sequential model used as a classifier.
class ModelClassifier : public Classifier {
 public:
  explicit ModelClassifier(Model model);

  std::string id() const override { return model_.name(); }
  std::size_t num_classes() const override { return model_.output_shape().at(0); }
  Shape input_shape() const override { return model_.input_shape(); }

  Model& model() noexcept { return model_; }
  const Model& model() const noexcept { return model_; }

 protected:
  Var do_logits(Tape& tape, Var input, ParamBinding* binding) const override;

 private:
  Model model_;
};

// AE-C: a pretrained autoencoder placed in front of a classifier. Gradients
// of any loss on the logits flow back through the classifier and the
// autoencoder to the raw input.
class WholeClassifier : public Classifier {
 public:
  WholeClassifier(Model autoencoder, Model classifier, std::string id = "AE-C");

  std::string id() const override { return id_; }
  std::size_t num_classes() const override { return classifier_.output_shape().at(0); }
  Shape input_shape() const override { return autoencoder_.input_shape(); }

  Model& autoencoder() noexcept { return autoencoder_; }
  const Model& autoencoder() const noexcept { return autoencoder_; }
  Model& classifier() noexcept { return classifier_; }
  const Model& classifier() const noexcept { return classifier_; }

 protected:
  Var do_logits(Tape& tape, Var input, ParamBinding* binding) const override;

 private:
  Model autoencoder_;
  Model classifier_;
  std::string id_;
};

// Checks shapes and builds c(ae(x)). The autoencoder is frozen.
WholeClassifier compose_aec(Model autoencoder, Model classifier, std::string id = "AE-C");

// Shared encoder feeding a reconstruction decoder and a classification head.
class EncoderClassifier : public Classifier {
 public:
  EncoderClassifier(Model encoder, Model decoder, Model head, std::string id = "EC");

  std::string id() const override { return id_; }
  std::size_t num_classes() const override { return head_.output_shape().at(0); }
  Shape input_shape() const override { return encoder_.input_shape(); }

  Model& encoder() noexcept { return encoder_; }
  const Model& encoder() const noexcept { return encoder_; }
  Model& decoder() noexcept { return decoder_; }
  const Model& decoder() const noexcept { return decoder_; }
  Model& head() noexcept { return head_; }
  const Model& head() const noexcept { return head_; }

  // decoder(encoder(x)).
  Var reconstruct(Tape& tape, Var input, ParamBinding* binding = nullptr) const;
  // Both heads from one encoder evaluation.
  std::pair<Var, Var> forward_both(Tape& tape, Var input, ParamBinding* binding = nullptr) const;

  // head(encoder(x)) as one sequential model with the same parameters.
  Model classification_model() const;

 protected:
  Var do_logits(Tape& tape, Var input, ParamBinding* binding) const override;

 private:
  Model encoder_;
  Model decoder_;
  Model head_;
  std::string id_;
};

// Forwards to `inner` but cuts the input gradient: white-box gradients are
// exactly zero while predictions are unchanged. Positive control for the
// masking diagnostic. `inner` must outlive the wrapper.
class GradientZeroingClassifier : public Classifier {
 public:
  explicit GradientZeroingClassifier(const Classifier& inner) : inner_(inner) {}

  std::string id() const override { return inner_.id() + "+zero-grad"; }
  std::size_t num_classes() const override { return inner_.num_classes(); }
  Shape input_shape() const override { return inner_.input_shape(); }
  Tensor predict_logits(const Tensor& input) const override { return inner_.predict_logits(input); }

 protected:
  Var do_logits(Tape& tape, Var input, ParamBinding* binding) const override;

 private:
  const Classifier& inner_;
};

// Counts differentiable evaluations; inference passes straight through.
class CountingClassifier : public Classifier {
 public:
  explicit CountingClassifier(const Classifier& inner) : inner_(inner) {}

  std::string id() const override { return inner_.id(); }
  std::size_t num_classes() const override { return inner_.num_classes(); }
  Shape input_shape() const override { return inner_.input_shape(); }
  Tensor predict_logits(const Tensor& input) const override { return inner_.predict_logits(input); }

  std::size_t gradient_calls() const noexcept { return calls_.load(); }

 protected:
  Var do_logits(Tape& tape, Var input, ParamBinding* binding) const override;

 private:
  const Classifier& inner_;
  mutable std::atomic<std::size_t> calls_{0};
};

// Returns the same logits for every input.
class ConstantClassifier : public Classifier {
 public:
  ConstantClassifier(std::vector<double> logits, Shape input_shape, std::string id = "constant");

  std::string id() const override { return id_; }
  std::size_t num_classes() const override { return logits_.size(); }
  Shape input_shape() const override { return input_shape_; }

 protected:
  Var do_logits(Tape& tape, Var input, ParamBinding* binding) const override;

 private:
  std::vector<double> logits_;
  Shape input_shape_;
  std::string id_;
};

}  // namespace advlab
