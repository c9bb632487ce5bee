#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advlab/analysis.hpp"
#include "advlab/architectures.hpp"
#include "advlab/training.hpp"

namespace advlab {

extern const char* const kToolVersion;

struct DatasetSpec {
  std::string kind = "mnist";
  std::filesystem::path dir;  // empty: $ADVLAB_MNIST_DIR
  // 0 keeps the whole split; otherwise a seeded subset of this size.
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
  std::uint64_t subset_seed = 0;
};

enum class ModelKind { kLeNet5, kAutoencoder, kWhole, kEncoderClassifier };

std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& s);

// One named model of an experiment. `options` holds architecture knobs:
//   lenet5:             activation, width
//   autoencoder:        latent_channels
//   encoder-classifier: latent_channels
// A whole classifier names its two parts and is never trained itself.
struct ModelSpec {
  std::string name;
  ModelKind kind = ModelKind::kLeNet5;
  std::uint64_t seed = 0;
  nlohmann::json options = nlohmann::json::object();
  std::optional<TrainConfig> train;
  std::string autoencoder, classifier;  // kWhole only

  nlohmann::json to_json() const;
  static ModelSpec from_json(const std::string& name, const nlohmann::json& j);
};

struct AttackEntry {
  AttackSpec spec;
  std::size_t n = 0;  // evaluated samples; 0 = whole test split
};

struct SettingSpec {
  std::string name;  // white | black-a | black-b
  std::map<std::string, std::string> substitutes;  // target -> substitute model (black-box only)
};

struct GridSpec {
  std::vector<std::string> targets;
  std::vector<AttackEntry> attacks;
  std::vector<SettingSpec> settings;
  bool clean = true;
  std::vector<std::string> gradient_amplitude;  // models to measure
  std::size_t gradient_amplitude_n = 0;         // 0 = whole test split
  std::uint64_t subset_seed = 0;
};

// Declarative description of a run. `source` is the JSON after overrides;
// its hash identifies the run in every report.
struct Manifest {
  std::string experiment_id;
  DatasetSpec dataset;
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path output_dir = "reports";
  std::vector<ModelSpec> models;
  GridSpec grid;
  std::size_t workers = 1;
  nlohmann::json source;
  std::vector<std::string> overrides;

  static Manifest from_json(nlohmann::json j, const std::vector<std::string>& overrides = {});
  static Manifest load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
  std::string hash() const;
  const ModelSpec& model(const std::string& name) const;
};

// Each override is "<json pointer>=<value>", e.g. "/models/C/train/epochs=2".
// The value is parsed as JSON when possible, otherwise taken as a string.
void apply_overrides(nlohmann::json& j, const std::vector<std::string>& overrides);

struct WorkspaceOptions {
  bool overwrite = false;
  // false: a missing checkpoint is an IoError naming it instead of a training run.
  bool allow_training = true;
  std::ostream* log = nullptr;
};

// Materialises the models of a manifest: loads a checkpoint whose recorded
// configuration hash matches, trains otherwise. A checkpoint with a
// different hash is a ConfigError unless `overwrite` is set.
class Workspace {
 public:
  explicit Workspace(Manifest manifest, WorkspaceOptions options = {});

  const Manifest& manifest() const noexcept { return manifest_; }
  const LabeledDataset& train_set();
  const LabeledDataset& test_set();

  const Classifier& classifier(const std::string& name);
  // Plain models (lenet5, autoencoder).
  const Model& model(const std::string& name);
  void materialize_all();

  // Configuration hash covering the ModelSpec, the training data and the parts.
  std::string config_hash(const std::string& name);
  // kind, hash, checkpoint stem and whether it was trained or loaded.
  nlohmann::json model_records() const;
  nlohmann::json dataset_records() const;

  // Progress line to the log stream, if any; safe from worker threads.
  void log(const std::string& line) const;

 private:
  struct Entry {
    std::optional<Model> model;
    std::unique_ptr<Classifier> classifier;
    std::string status;  // trained | loaded | composed
  };

  Entry& materialize(const std::string& name);
  std::filesystem::path stem(const std::string& name, const std::string& part = "") const;
  Model load_or_train_model(const ModelSpec& spec, const std::string& hash, std::string& status);
  void require_trainable(const ModelSpec& spec, const std::filesystem::path& missing) const;
  void load_or_train_encoder_classifier(const ModelSpec& spec, const std::string& hash, Entry& e);
  Manifest manifest_;
  WorkspaceOptions options_;
  std::optional<LabeledDataset> train_, test_;
  std::map<std::string, Entry> entries_;
  std::map<std::string, std::string> hashes_;
  mutable std::mutex log_mutex_;
};

struct GridResult {
  std::vector<AccuracyRow> rows;
  std::vector<GradientAmplitude> amplitudes;
};

GridResult run_grid(Workspace& ws);

// Attack rows x target columns.
std::string console_table(const std::vector<AccuracyRow>& rows, const std::vector<std::string>& targets);
std::string amplitude_table(const std::vector<GradientAmplitude>& amplitudes);

nlohmann::json report_json(Workspace& ws, const GridResult& result);
// rows.csv, report.json and table.txt under `dir`.
void write_report(Workspace& ws, const GridResult& result, const std::filesystem::path& dir);

// Rows equal in every field but experiment_id collapse to the first one.
std::vector<AccuracyRow> dedupe_rows(const std::vector<AccuracyRow>& rows);

struct CompareResult {
  // Per (cell, setting) present in more than one report: value in each report.
  nlohmann::json deltas;
  MaskingReport masking;
};

// Joins reports: cross-report deltas per cell and the masking diagnostic on
// the union of rows.
CompareResult compare_reports(const std::vector<std::vector<AccuracyRow>>& reports);

// An adversarial batch as a raw float64 little-endian file holding the
// original then the adversarial images of the first `max_samples` rows, plus
// a JSON manifest with shapes, labels and predictions.
void export_image_grid(const AdversarialBatch& batch, const std::filesystem::path& stem, std::size_t max_samples);

}  // namespace advlab
