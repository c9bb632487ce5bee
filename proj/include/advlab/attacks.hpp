#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "advlab/classifier.hpp"

namespace advlab {

enum class AttackFamily { kFgsm, kPgd, kCw, kDeepFool };

std::string to_string(AttackFamily f);
AttackFamily parse_attack_family(const std::string& s);

struct AttackSpec {
  AttackFamily family = AttackFamily::kFgsm;
  // L-infinity budget on the 0..255 scale. Required for fgsm/pgd. For cw and
  // deepfool it is an optional cap; unset means unbounded.
  std::optional<double> epsilon;
  // pgd: iterations (default 40). cw: inner iterations per search step
  // (default 1000). deepfool: iteration cap (default 50). 0 selects the default.
  std::size_t steps = 0;
  // pgd step on the [0, 1] scale; unset selects 2.5 * eps / (255 * steps).
  std::optional<double> step_size;
  double confidence = 0.0;  // cw margin c
  double overshoot = 0.02;  // deepfool
  bool random_start = true;  // pgd
  std::uint64_t seed = 0;
  // cw search
  std::size_t binary_search_steps = 9;
  double initial_const = 1e-2;
  double learning_rate = 0.01;
  // Softmax temperature of the loss the attacker differentiates (fgsm/pgd).
  double temperature = 1.0;
  // Samples per tape. Results do not depend on `workers`.
  std::size_t chunk = 100;
  std::size_t workers = 1;

  // Checks the fields the family uses; throws ContractError.
  void validate() const;
  std::size_t effective_steps() const;
  double effective_step_size() const;  // pgd only

  nlohmann::json to_json() const;
  static AttackSpec from_json(const nlohmann::json& j);
};

// Shorthands with every other field at its default.
AttackSpec fgsm_spec(double eps255);
AttackSpec pgd_spec(double eps255, std::uint64_t seed = 0);
AttackSpec cw_spec(double confidence = 0.0);
AttackSpec deepfool_spec();

struct AdversarialBatch {
  Tensor original;
  Tensor adversarial;
  std::vector<int> labels;
  std::vector<int> original_pred;
  std::vector<int> adversarial_pred;
  // Family-specific: fgsm/pgd prediction changed; cw found a point with
  // margin >= c; deepfool flipped the original prediction.
  std::vector<std::uint8_t> success;  // 0 or 1
  std::vector<double> linf;
  std::vector<double> l2;
  // Iterations spent per sample (0 for fgsm).
  std::vector<std::size_t> iterations;

  std::size_t size() const noexcept { return labels.size(); }
  // Percentage of adversarial predictions equal to the true label.
  double accuracy() const;
};

// Gradient of the summed cross entropy at temperature T with respect to x.
Tensor loss_input_gradient(const Classifier& model, const Tensor& x, std::span<const int> y,
                           double temperature = 1.0);

AdversarialBatch fgsm(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec);
AdversarialBatch pgd(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec);
AdversarialBatch cw(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec);
// Labels are only used to fill `labels`; the attack targets the model's own
// prediction.
AdversarialBatch deepfool(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec);

// Dispatch on spec.family.
AdversarialBatch run_attack(const Classifier& model, const Tensor& x, std::span<const int> y,
                            const AttackSpec& spec);

// Adversarial examples crafted on `substitute`, scored on `target`. The
// target is reached only through inference; a differentiable evaluation of
// the target is a ContractError.
AdversarialBatch blackbox_attack(const Classifier& substitute, const Classifier& target, const Tensor& x,
                                 std::span<const int> y, const AttackSpec& spec);

}  // namespace advlab
