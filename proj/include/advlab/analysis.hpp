#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advlab/attacks.hpp"
#include "advlab/data.hpp"

namespace advlab {

// One cell of a robustness table.
struct AccuracyRow {
  std::string experiment_id;
  std::string model;
  std::string attack;              // "clean" or an attack family
  std::optional<double> epsilon;   // 0..255 scale; unset for unbounded attacks
  std::string setting = "white";   // white | black-a | black-b | clean
  double accuracy = 0.0;           // percent
  std::size_t n = 0;
  std::uint64_t seed = 0;

  void validate() const;
  // (model, attack, epsilon) rendered as text; used to match rows.
  std::string cell_key() const;
  friend bool operator==(const AccuracyRow&, const AccuracyRow&) = default;
};

inline const char* kAccuracyCsvHeader = "experiment_id,model,attack,epsilon,setting,accuracy,n,seed";

std::string to_csv_line(const AccuracyRow& r);
void write_rows_csv(const std::filesystem::path& path, const std::vector<AccuracyRow>& rows);
std::vector<AccuracyRow> read_rows_csv(const std::filesystem::path& path);
nlohmann::json to_json(const AccuracyRow& r);
AccuracyRow row_from_json(const nlohmann::json& j);

AccuracyRow clean_accuracy(const Classifier& model, const LabeledDataset& data);
AccuracyRow adversarial_accuracy(const Classifier& model, const LabeledDataset& data, const AttackSpec& spec);
// Examples crafted on `substitute`, scored on `target`.
AccuracyRow blackbox_accuracy(const Classifier& substitute, const Classifier& target, const LabeledDataset& data,
                              const AttackSpec& spec, std::string setting);

struct GradientAmplitude {
  std::string model;
  double g = 0.0;            // summed over classes and input elements
  double g_per_pixel = 0.0;  // g divided by the per-sample input size
  std::size_t n = 0;
};

// G = (1/N) * sum_i sum_k || d softmax(f(x_i))_k / d x_i ||_1, plus the same
// value averaged over input elements instead of summed.
GradientAmplitude gradient_amplitude(const Classifier& model, const LabeledDataset& data,
                                     std::size_t chunk = 100);

struct MaskingCell {
  std::string model;
  std::string attack;
  std::optional<double> epsilon;
  std::string black_setting;
  double white = 0.0;
  double black = 0.0;
  bool flag = false;  // black < white
};

struct MaskingReport {
  std::vector<MaskingCell> cells;
  bool any_flag() const;
  nlohmann::json to_json() const;
};

// Pairs every black-box row with the white-box row of the same
// (model, attack, epsilon). Clean rows are ignored. A black-box row without
// a white-box partner is a ContractError listing the missing cells.
MaskingReport masking_report(const std::vector<AccuracyRow>& rows);

}  // namespace advlab
