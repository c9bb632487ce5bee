#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advlab/attacks.hpp"
#include "advlab/classifier.hpp"
#include "advlab/data.hpp"

namespace advlab {

enum class Regime { kStandard, kReconstruction, kRegularized, kAlternative, kPgdAdversarial };

std::string to_string(Regime r);
Regime parse_regime(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;  // batch order
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Regime regime = Regime::kStandard;
  double lambda = 0.0;     // regularized only
  std::size_t gamma = 0;   // alternative only
  AttackSpec attack = pgd_spec(20.0);  // pgd-adv only
  double temperature = 1.0;            // cross-entropy temperature
  // Stop after this many optimizer steps (0 = no limit).
  std::size_t max_steps = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  // FNV-1a over the canonical JSON form.
  std::string hash() const;
};

// Adam with one moment pair and step count per parameter slot. Slots are
// keyed by (model, parameter index) so several losses can share one
// optimizer; a slot without a gradient in a step is left untouched.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
  explicit Adam(const TrainConfig& c) : Adam(c.learning_rate, c.beta1, c.beta2, c.adam_eps) {}

  // Applies the gradients held by the binding's variables. The bound models
  // must be the mutable objects passed in `models`.
  void step(const ParamBinding& binding, std::span<Model* const> models);

  std::size_t steps() const noexcept { return steps_; }

 private:
  struct Slot {
    Tensor m, v;
    std::size_t t = 0;
  };
  double lr_, b1_, b2_, eps_;
  std::map<std::pair<const Model*, std::size_t>, Slot> slots_;
  std::size_t steps_ = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  std::optional<double> accuracy;  // percent; unset for reconstruction
};

struct TrainHistory {
  std::vector<EpochMetrics> epochs;
  std::vector<double> step_losses;

  // Columns: epoch, split, loss, accuracy.
  void write_csv(const std::filesystem::path& path) const;
};

// Cross-entropy training of a single model.
TrainHistory train_standard(Model& model, const LabeledDataset& data, const TrainConfig& cfg,
                            const LabeledDataset* eval = nullptr);
// Cross-entropy training through any classifier; frozen parts stay fixed.
TrainHistory train_classifier(Classifier& clf, std::vector<Model*> trainable, const LabeledDataset& data,
                              const TrainConfig& cfg, const LabeledDataset* eval = nullptr);
// L2 reconstruction of the inputs; labels unused.
TrainHistory train_autoencoder(Model& ae, const LabeledDataset& data, const TrainConfig& cfg,
                               const LabeledDataset* eval = nullptr);
// L = L_ce + lambda * L_rec with one backward per step. lambda = 0 skips the
// decoder entirely.
TrainHistory train_joint_regularized(EncoderClassifier& ec, const LabeledDataset& data, const TrainConfig& cfg,
                                     const LabeledDataset* eval = nullptr);
// Per batch: one L_ce step on encoder + head, then gamma L_rec steps on
// encoder + decoder, all on the same batch.
TrainHistory train_joint_alternative(EncoderClassifier& ec, const LabeledDataset& data, const TrainConfig& cfg,
                                     const LabeledDataset* eval = nullptr);
// Each batch is replaced by PGD examples against the current weights.
TrainHistory train_pgd_adversarial(Model& model, const LabeledDataset& data, const TrainConfig& cfg,
                                   const LabeledDataset* eval = nullptr);

// Mean cross entropy and accuracy (percent) of `clf` on `data`.
EpochMetrics evaluate(const Classifier& clf, const LabeledDataset& data, double temperature = 1.0);

}  // namespace advlab
