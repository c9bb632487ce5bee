#include "advlab/experiment.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <ctime>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "advlab/checkpoint.hpp"
#include "advlab/error.hpp"
#include "advlab/hash.hpp"
#include "advlab/parallel.hpp"

namespace advlab {

const char* const kToolVersion = ADVLAB_VERSION;

namespace {

using nlohmann::json;

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string eps_text(const std::optional<double>& eps) {
  if (!eps) return "-";
  std::ostringstream s;
  s << *eps;
  return s.str();
}

Shape input_shape_of(const LabeledDataset& d) { return d.sample_shape(); }

// Largest per-pixel variance of the reconstructions across samples; zero
// when the autoencoder emits the same image for every input.
double reconstruction_spread(const Model& ae, const Tensor& x) {
  const Tensor r = ae.infer(x);
  const std::size_t n = r.dim(0), d = r.size() / n;
  double worst = 0;
  for (std::size_t q = 0; q < d; ++q) {
    double mean = 0, sq = 0;
    for (std::size_t i = 0; i < n; ++i) mean += r[i * d + q];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) sq += (r[i * d + q] - mean) * (r[i * d + q] - mean);
    worst = std::max(worst, sq / static_cast<double>(n));
  }
  return worst;
}

double cpu_seconds_since(std::clock_t c0) {
  return static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC;
}

json history_json(const TrainHistory& h) {
  json rows = json::array();
  for (const auto& m : h.epochs) {
    rows.push_back({{"epoch", m.epoch},
                    {"split", m.split},
                    {"loss", m.loss},
                    {"accuracy", m.accuracy ? json(*m.accuracy) : json(nullptr)}});
  }
  return rows;
}

}  // namespace

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kLeNet5:
      return "lenet5";
    case ModelKind::kAutoencoder:
      return "autoencoder";
    case ModelKind::kWhole:
      return "whole";
    case ModelKind::kEncoderClassifier:
      return "encoder-classifier";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "lenet5") return ModelKind::kLeNet5;
  if (s == "autoencoder") return ModelKind::kAutoencoder;
  if (s == "whole") return ModelKind::kWhole;
  if (s == "encoder-classifier") return ModelKind::kEncoderClassifier;
  throw ConfigError("unknown model kind '" + s + "'");
}

json ModelSpec::to_json() const {
  json j{{"kind", advlab::to_string(kind)}, {"seed", seed}, {"options", options}};
  j["train"] = train ? train->to_json() : json(nullptr);
  if (kind == ModelKind::kWhole) {
    j["autoencoder"] = autoencoder;
    j["classifier"] = classifier;
  }
  return j;
}

ModelSpec ModelSpec::from_json(const std::string& name, const json& j) {
  ModelSpec s;
  s.name = name;
  s.kind = parse_model_kind(j.at("kind").get<std::string>());
  s.seed = j.value("seed", std::uint64_t{0});
  s.options = j.value("options", json::object());
  if (j.contains("train") && !j["train"].is_null()) s.train = TrainConfig::from_json(j["train"]);
  if (s.kind == ModelKind::kWhole) {
    s.autoencoder = j.at("autoencoder").get<std::string>();
    s.classifier = j.at("classifier").get<std::string>();
    if (s.train) throw ConfigError("whole classifier '" + name + "' is composed, not trained");
  }
  if (s.train) {
    const Regime r = s.train->regime;
    const bool ok = (s.kind == ModelKind::kLeNet5 && (r == Regime::kStandard || r == Regime::kPgdAdversarial)) ||
                    (s.kind == ModelKind::kAutoencoder && r == Regime::kReconstruction) ||
                    (s.kind == ModelKind::kEncoderClassifier &&
                     (r == Regime::kStandard || r == Regime::kRegularized || r == Regime::kAlternative));
    if (!ok) {
      throw ConfigError("model '" + name + "' of kind " + advlab::to_string(s.kind) + " cannot use regime " +
                        advlab::to_string(r));
    }
  }
  return s;
}

void apply_overrides(json& j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0 || o[0] != '/') {
      throw ConfigError("override '" + o + "' is not of the form /json/pointer=value");
    }
    const std::string path = o.substr(0, eq), text = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    try {
      const json::json_pointer ptr(path);
      if (!j.contains(ptr.parent_pointer())) throw ConfigError("override path " + path + " has no parent object");
      j[ptr] = value;
    } catch (const json::exception& e) {
      throw ConfigError("bad override path " + path + ": " + e.what());
    }
  }
}

Manifest Manifest::from_json(json j, const std::vector<std::string>& overrides) {
  apply_overrides(j, overrides);
  Manifest m;
  try {
    m.experiment_id = j.at("experiment_id").get<std::string>();
    if (j.contains("dataset")) {
      const json& d = j["dataset"];
      m.dataset.kind = d.value("kind", m.dataset.kind);
      m.dataset.dir = d.value("dir", std::string());
      m.dataset.train_limit = d.value("train_limit", std::size_t{0});
      m.dataset.test_limit = d.value("test_limit", std::size_t{0});
      m.dataset.subset_seed = d.value("subset_seed", std::uint64_t{0});
    }
    if (m.dataset.kind != "mnist") throw ConfigError("only the mnist dataset kind is supported by experiments");
    m.checkpoint_dir = j.value("checkpoint_dir", m.checkpoint_dir.string());
    m.output_dir = j.value("output_dir", m.output_dir.string());
    m.workers = j.value("workers", std::size_t{1});
    const json models = j.value("models", json::object());
    for (const auto& [name, spec] : models.items()) {
      m.models.push_back(ModelSpec::from_json(name, spec));
    }
    const json g = j.value("grid", json::object());
    m.grid.targets = g.value("targets", std::vector<std::string>{});
    m.grid.clean = g.value("clean", true);
    m.grid.subset_seed = g.value("subset_seed", std::uint64_t{0});
    m.grid.gradient_amplitude = g.value("gradient_amplitude", std::vector<std::string>{});
    m.grid.gradient_amplitude_n = g.value("gradient_amplitude_n", std::size_t{0});
    for (const auto& a : g.value("attacks", json::array())) {
      AttackEntry e{AttackSpec::from_json(a), a.value("n", std::size_t{0})};
      e.spec.validate();
      m.grid.attacks.push_back(e);
    }
    for (const auto& s : g.value("settings", json::array({{{"name", "white"}}}))) {
      SettingSpec st{s.at("name").get<std::string>(), {}};
      if (st.name != "white" && st.name != "black-a" && st.name != "black-b") {
        throw ConfigError("unknown setting '" + st.name + "'");
      }
      st.substitutes = s.value("substitutes", std::map<std::string, std::string>{});
      m.grid.settings.push_back(std::move(st));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }

  std::set<std::string> names;
  for (const auto& s : m.models) names.insert(s.name);
  auto require = [&](const std::string& name, const std::string& where) {
    if (!names.count(name)) throw ConfigError(where + " refers to unknown model '" + name + "'");
  };
  for (const auto& s : m.models) {
    if (s.kind == ModelKind::kWhole) {
      require(s.autoencoder, "model " + s.name);
      require(s.classifier, "model " + s.name);
    }
  }
  for (const auto& t : m.grid.targets) require(t, "grid target");
  for (const auto& t : m.grid.gradient_amplitude) require(t, "gradient_amplitude");
  for (const auto& st : m.grid.settings) {
    if (st.name == "white") continue;
    for (const auto& t : m.grid.targets) {
      const auto it = st.substitutes.find(t);
      if (it == st.substitutes.end()) throw ConfigError("setting " + st.name + " has no substitute for " + t);
      require(it->second, "setting " + st.name);
    }
  }
  m.source = std::move(j);
  m.overrides = overrides;
  return m;
}

Manifest Manifest::load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  return from_json(read_json_file(path), overrides);
}

std::string Manifest::hash() const { return fnv1a64_hex(source.dump()); }

const ModelSpec& Manifest::model(const std::string& name) const {
  for (const auto& s : models) {
    if (s.name == name) return s;
  }
  throw ConfigError("manifest has no model '" + name + "'");
}

Workspace::Workspace(Manifest manifest, WorkspaceOptions options)
    : manifest_(std::move(manifest)), options_(options) {}

void Workspace::log(const std::string& line) const {
  const std::lock_guard lock(log_mutex_);
  if (options_.log) *options_.log << line << std::endl;
}

const LabeledDataset& Workspace::train_set() {
  if (!train_) {
    std::filesystem::path dir = manifest_.dataset.dir;
    if (dir.empty()) {
      const char* env = std::getenv("ADVLAB_MNIST_DIR");
      if (!env) throw ConfigError("dataset.dir is empty and ADVLAB_MNIST_DIR is unset");
      dir = env;
    }
    LabeledDataset tr = load_mnist(dir, "train");
    LabeledDataset te = load_mnist(dir, "test");
    if (manifest_.dataset.train_limit) tr = seeded_subset(tr, manifest_.dataset.train_limit, manifest_.dataset.subset_seed);
    if (manifest_.dataset.test_limit) te = seeded_subset(te, manifest_.dataset.test_limit, manifest_.dataset.subset_seed);
    train_ = std::move(tr);
    test_ = std::move(te);
  }
  return *train_;
}

const LabeledDataset& Workspace::test_set() {
  train_set();
  return *test_;
}

json Workspace::dataset_records() const {
  json j = json::object();
  if (train_) j["train"] = {{"checksum", train_->checksum}, {"n", train_->size()}};
  if (test_) j["test"] = {{"checksum", test_->checksum}, {"n", test_->size()}};
  j["train_limit"] = manifest_.dataset.train_limit;
  j["test_limit"] = manifest_.dataset.test_limit;
  j["subset_seed"] = manifest_.dataset.subset_seed;
  return j;
}

std::string Workspace::config_hash(const std::string& name) {
  if (auto it = hashes_.find(name); it != hashes_.end()) return it->second;
  const ModelSpec& spec = manifest_.model(name);
  json j = spec.to_json();
  if (spec.train) {
    j["train_data"] = {{"checksum", train_set().checksum},
                       {"limit", manifest_.dataset.train_limit},
                       {"subset_seed", manifest_.dataset.subset_seed}};
  }
  if (spec.kind == ModelKind::kWhole) {
    j["parts"] = {config_hash(spec.autoencoder), config_hash(spec.classifier)};
  }
  return hashes_[name] = fnv1a64_hex(j.dump());
}

std::filesystem::path Workspace::stem(const std::string& name, const std::string& part) const {
  return manifest_.checkpoint_dir / (part.empty() ? name : name + "." + part);
}

void Workspace::require_trainable(const ModelSpec& spec, const std::filesystem::path& missing) const {
  if (!spec.train) {
    throw IoError("missing checkpoint " + missing.string() + " for model '" + spec.name +
                  "', which has no training config");
  }
  if (!options_.allow_training) {
    throw IoError("missing checkpoint " + missing.string() + " for model '" + spec.name + "'; run train first");
  }
}

Model Workspace::load_or_train_model(const ModelSpec& spec, const std::string& hash, std::string& status) {
  const Shape shape = input_shape_of(train_set());
  const auto path = stem(spec.name);
  if (checkpoint_exists(path)) {
    const json meta = read_checkpoint_metadata(path);
    if (meta.value("config_hash", "") == hash) {
      status = "loaded";
      return load_checkpoint(path);
    }
    if (!options_.overwrite) {
      throw ConfigError("checkpoint " + path.string() + " was produced by configuration " +
                        meta.value("config_hash", "?") + ", manifest now asks for " + hash +
                        "; rerun with --overwrite to replace it");
    }
  }

  require_trainable(spec, path);
  Model m;
  if (spec.kind == ModelKind::kLeNet5) {
    LeNetOptions o;
    o.activation = parse_activation(spec.options.value("activation", std::string("tanh")));
    o.width = spec.options.value("width", std::size_t{1});
    m = build_lenet5(train_set().num_classes, shape, spec.seed, o, spec.name);
  } else {
    AutoencoderOptions o;
    o.latent_channels = spec.options.value("latent_channels", o.latent_channels);
    m = build_autoencoder(shape, spec.seed, o, spec.name);
  }

  const auto t0 = std::chrono::steady_clock::now();
  const std::clock_t c0 = std::clock();
  log("training " + spec.name + " (" + to_string(spec.train->regime) + ", " + std::to_string(spec.train->epochs) +
      " epochs)");
  TrainHistory h;
  if (spec.train->regime == Regime::kStandard) {
    h = train_standard(m, train_set(), *spec.train, &test_set());
  } else if (spec.train->regime == Regime::kPgdAdversarial) {
    h = train_pgd_adversarial(m, train_set(), *spec.train, &test_set());
  } else {
    h = train_autoencoder(m, train_set(), *spec.train, &test_set());
    const std::size_t probe = std::min<std::size_t>(256, test_set().size());
    if (reconstruction_spread(m, test_set().images.rows(0, probe)) < 1e-8) {
      throw NumericError("autoencoder '" + spec.name +
                         "' collapsed to a constant output (dead activations); choose another seed");
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& e : h.epochs) {
    std::ostringstream s;
    s << "  " << spec.name << " epoch " << e.epoch << " " << e.split << " loss " << e.loss;
    if (e.accuracy) s << " acc " << *e.accuracy;
    log(s.str());
  }
  log("  " + spec.name + " trained in " + std::to_string(static_cast<long>(secs)) + " s");
  save_checkpoint(path, m,
                  {{"config_hash", hash},
                   {"spec", spec.to_json()},
                   {"train_data_checksum", train_set().checksum},
                   {"tool_version", kToolVersion},
                   {"train_cpu_seconds", cpu_seconds_since(c0)},
                   {"history", history_json(h)}});
  h.write_csv(path.string() + ".metrics.csv");
  status = "trained";
  return m;
}

void Workspace::load_or_train_encoder_classifier(const ModelSpec& spec, const std::string& hash, Entry& e) {
  const Shape shape = input_shape_of(train_set());
  const char* parts[] = {"encoder", "decoder", "head"};
  bool cached = true;
  for (const char* p : parts) {
    const auto s = stem(spec.name, p);
    if (!checkpoint_exists(s)) {
      cached = false;
      continue;
    }
    if (read_checkpoint_metadata(s).value("config_hash", "") != hash) {
      if (!options_.overwrite) {
        throw ConfigError("checkpoint " + s.string() + " was produced by a different configuration (" + hash +
                          " expected); rerun with --overwrite to replace it");
      }
      cached = false;
    }
  }
  if (cached) {
    e.classifier = std::make_unique<EncoderClassifier>(load_checkpoint(stem(spec.name, "encoder")),
                                                       load_checkpoint(stem(spec.name, "decoder")),
                                                       load_checkpoint(stem(spec.name, "head")), spec.name);
    e.status = "loaded";
    return;
  }
  require_trainable(spec, stem(spec.name, "encoder"));
  AutoencoderOptions o;
  o.latent_channels = spec.options.value("latent_channels", o.latent_channels);
  auto ec = std::make_unique<EncoderClassifier>(
      build_encoder_classifier(shape, train_set().num_classes, spec.seed, o, spec.name));
  TrainConfig cfg = *spec.train;
  log("training " + spec.name + " (" + to_string(cfg.regime) + ", " + std::to_string(cfg.epochs) + " epochs)");
  const auto t0 = std::chrono::steady_clock::now();
  const std::clock_t c0 = std::clock();
  TrainHistory h;
  if (cfg.regime == Regime::kAlternative) {
    h = train_joint_alternative(*ec, train_set(), cfg, &test_set());
  } else {
    // Standard training of head(encoder(x)) is the lambda = 0 case.
    if (cfg.regime == Regime::kStandard) cfg.lambda = 0.0;
    h = train_joint_regularized(*ec, train_set(), cfg, &test_set());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& m : h.epochs) {
    std::ostringstream s;
    s << "  " << spec.name << " epoch " << m.epoch << " " << m.split << " loss " << m.loss;
    if (m.accuracy) s << " acc " << *m.accuracy;
    log(s.str());
  }
  log("  " + spec.name + " trained in " + std::to_string(static_cast<long>(secs)) + " s");
  const json meta{{"config_hash", hash},
                  {"spec", spec.to_json()},
                  {"train_data_checksum", train_set().checksum},
                  {"tool_version", kToolVersion},
                  {"train_cpu_seconds", cpu_seconds_since(c0)},
                  {"history", history_json(h)}};
  save_checkpoint(stem(spec.name, "encoder"), ec->encoder(), meta);
  save_checkpoint(stem(spec.name, "decoder"), ec->decoder(), meta);
  save_checkpoint(stem(spec.name, "head"), ec->head(), meta);
  h.write_csv(stem(spec.name).string() + ".metrics.csv");
  e.classifier = std::move(ec);
  e.status = "trained";
}

Workspace::Entry& Workspace::materialize(const std::string& name) {
  if (auto it = entries_.find(name); it != entries_.end()) return it->second;
  const ModelSpec& spec = manifest_.model(name);
  const std::string hash = config_hash(name);
  Entry e;
  switch (spec.kind) {
    case ModelKind::kLeNet5:
    case ModelKind::kAutoencoder: {
      e.model = load_or_train_model(spec, hash, e.status);
      if (spec.kind == ModelKind::kLeNet5) e.classifier = std::make_unique<ModelClassifier>(*e.model);
      break;
    }
    case ModelKind::kWhole: {
      const Model ae = model(spec.autoencoder);
      const Model c = model(spec.classifier);
      e.classifier = std::make_unique<WholeClassifier>(compose_aec(ae, c, name));
      e.status = "composed";
      break;
    }
    case ModelKind::kEncoderClassifier:
      load_or_train_encoder_classifier(spec, hash, e);
      break;
  }
  log("model " + name + ": " + e.status + " (config " + hash + ")");
  return entries_.emplace(name, std::move(e)).first->second;
}

const Classifier& Workspace::classifier(const std::string& name) {
  Entry& e = materialize(name);
  if (!e.classifier) throw ConfigError("model '" + name + "' is not a classifier");
  return *e.classifier;
}

const Model& Workspace::model(const std::string& name) {
  Entry& e = materialize(name);
  if (!e.model) throw ConfigError("model '" + name + "' is not a plain sequential model");
  return *e.model;
}

void Workspace::materialize_all() {
  for (const auto& s : manifest_.models) materialize(s.name);
}

json Workspace::model_records() const {
  json j = json::object();
  for (const auto& s : manifest_.models) {
    json r = s.to_json();
    if (auto it = hashes_.find(s.name); it != hashes_.end()) r["config_hash"] = it->second;
    if (s.kind != ModelKind::kWhole) r["checkpoint"] = stem(s.name).string();
    // Full hyperparameters, including defaults the manifest left implicit.
    if (s.train) r["train"] = s.train->to_json();
    j[s.name] = r;
  }
  return j;
}

GridResult run_grid(Workspace& ws) {
  const Manifest& m = ws.manifest();
  const GridSpec& g = m.grid;
  GridResult out;
  const LabeledDataset& test = ws.test_set();

  struct Cell {
    const AttackEntry* attack;
    const SettingSpec* setting;
    std::string target, attacker;
  };
  std::vector<Cell> cells;
  for (const auto& a : g.attacks)
    for (const auto& s : g.settings)
      for (const auto& t : g.targets) {
        cells.push_back({&a, &s, t, s.name == "white" ? t : s.substitutes.at(t)});
      }
  // Models are materialised up front so cells only read them.
  for (const auto& t : g.targets) ws.classifier(t);
  for (const auto& c : cells) ws.classifier(c.attacker);
  for (const auto& t : g.gradient_amplitude) ws.classifier(t);

  std::map<std::size_t, LabeledDataset> subsets;
  auto subset = [&](std::size_t n) -> const LabeledDataset& {
    if (n == 0 || n >= test.size()) return test;
    auto it = subsets.find(n);
    if (it == subsets.end()) it = subsets.emplace(n, seeded_subset(test, n, g.subset_seed)).first;
    return it->second;
  };
  for (const auto& a : g.attacks) subset(a.n);

  if (g.clean) {
    for (const auto& t : g.targets) {
      AccuracyRow r = clean_accuracy(ws.classifier(t), test);
      r.experiment_id = m.experiment_id;
      out.rows.push_back(r);
    }
  }

  std::vector<AccuracyRow> cell_rows(cells.size());
  // Cells run side by side when there are enough of them; otherwise the
  // workers go to each attack. Results do not depend on either split.
  const std::size_t workers = std::max<std::size_t>(1, m.workers);
  const std::size_t cell_workers = cells.size() >= workers ? workers : 1;
  parallel_chunks(cells.size(), 1, cell_workers, [&](std::size_t b, std::size_t) {
    const Cell& c = cells[b];
    AttackSpec spec = c.attack->spec;
    spec.workers = cell_workers == 1 ? workers : 1;
    const LabeledDataset& data = subset(c.attack->n);
    const auto t0 = std::chrono::steady_clock::now();
    AccuracyRow r = c.setting->name == "white"
                        ? adversarial_accuracy(ws.classifier(c.target), data, spec)
                        : blackbox_accuracy(ws.classifier(c.attacker), ws.classifier(c.target), data, spec,
                                            c.setting->name);
    r.experiment_id = m.experiment_id;
    r.model = c.target;
    cell_rows[b] = r;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream s;
    s << "cell " << (b + 1) << "/" << cells.size() << ": " << c.target << " " << r.attack << " eps "
      << eps_text(r.epsilon) << " " << r.setting << " -> " << std::fixed << std::setprecision(2) << r.accuracy
      << "% (n=" << r.n << ", " << std::setprecision(1) << secs << " s)";
    ws.log(s.str());
  });
  out.rows.insert(out.rows.end(), cell_rows.begin(), cell_rows.end());

  const LabeledDataset& ga_data =
      g.gradient_amplitude_n ? subset(g.gradient_amplitude_n) : test;
  for (const auto& t : g.gradient_amplitude) {
    out.amplitudes.push_back(gradient_amplitude(ws.classifier(t), ga_data));
  }
  return out;
}

std::string console_table(const std::vector<AccuracyRow>& rows, const std::vector<std::string>& targets) {
  std::vector<std::string> cols = targets;
  for (const auto& r : rows) {
    if (std::find(cols.begin(), cols.end(), r.model) == cols.end()) cols.push_back(r.model);
  }
  // Row keys in first-appearance order.
  std::vector<std::tuple<std::string, std::string, std::string>> keys;
  std::map<std::tuple<std::string, std::string, std::string>, std::map<std::string, double>> cells;
  for (const auto& r : rows) {
    const auto key = std::make_tuple(r.attack, eps_text(r.epsilon), r.setting);
    if (!cells.count(key)) keys.push_back(key);
    cells[key][r.model] = r.accuracy;
  }
  int width = 10;  // at least two spaces between model columns
  for (const auto& c : cols) width = std::max(width, static_cast<int>(c.size()) + 2);
  std::ostringstream s;
  s << std::left << std::setw(10) << "attack" << std::setw(6) << "eps" << std::setw(10) << "setting";
  for (const auto& c : cols) s << std::right << std::setw(width) << c;
  s << '\n';
  for (const auto& key : keys) {
    s << std::left << std::setw(10) << std::get<0>(key) << std::setw(6) << std::get<1>(key) << std::setw(10)
      << std::get<2>(key);
    for (const auto& c : cols) {
      const auto& row = cells[key];
      s << std::right << std::setw(width);
      if (auto it = row.find(c); it != row.end()) {
        std::ostringstream v;
        v << std::fixed << std::setprecision(2) << it->second;
        s << v.str();
      } else {
        s << "";
      }
    }
    s << '\n';
  }
  return s.str();
}

std::string amplitude_table(const std::vector<GradientAmplitude>& amplitudes) {
  std::ostringstream s;
  s << std::left << std::setw(12) << "model" << std::right << std::setw(14) << "G" << std::setw(14) << "G/pixel"
    << std::setw(8) << "n" << '\n';
  for (const auto& a : amplitudes) {
    s << std::left << std::setw(12) << a.model << std::right << std::scientific << std::setprecision(3)
      << std::setw(14) << a.g << std::setw(14) << a.g_per_pixel << std::setw(8) << a.n << std::defaultfloat << '\n';
  }
  return s.str();
}

json report_json(Workspace& ws, const GridResult& result) {
  const Manifest& m = ws.manifest();
  json attacks = json::array();
  for (const auto& a : m.grid.attacks) {
    json j = a.spec.to_json();
    j["n"] = a.n;
    attacks.push_back(j);
  }
  json rows = json::array();
  for (const auto& r : result.rows) rows.push_back(to_json(r));
  json amps = json::array();
  for (const auto& a : result.amplitudes) {
    amps.push_back({{"model", a.model}, {"g", a.g}, {"g_per_pixel", a.g_per_pixel}, {"n", a.n}});
  }
  json j{{"tool", {{"name", "advlab"}, {"version", kToolVersion}}},
         {"experiment_id", m.experiment_id},
         {"manifest_hash", m.hash()},
         {"manifest", m.source},
         {"overrides", m.overrides},
         {"datasets", ws.dataset_records()},
         {"models", ws.model_records()},
         {"attacks", attacks},
         {"rows", rows},
         {"gradient_amplitude", amps}};
  // A grid with one side only is matched against other reports by compare.
  const auto has = [&](auto pred) { return std::any_of(result.rows.begin(), result.rows.end(), pred); };
  if (has([](const AccuracyRow& r) { return r.setting.rfind("black", 0) == 0; }) &&
      has([](const AccuracyRow& r) { return r.setting == "white"; })) {
    j["masking"] = masking_report(result.rows).to_json();
  }
  return j;
}

void write_report(Workspace& ws, const GridResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_rows_csv(dir / "rows.csv", result.rows);
  write_text(dir / "report.json", report_json(ws, result).dump(2) + "\n");
  std::string table = console_table(result.rows, ws.manifest().grid.targets);
  if (!result.amplitudes.empty()) table += "\n" + amplitude_table(result.amplitudes);
  write_text(dir / "table.txt", table);
}

std::vector<AccuracyRow> dedupe_rows(const std::vector<AccuracyRow>& rows) {
  std::vector<AccuracyRow> out;
  for (const auto& r : rows) {
    const bool seen = std::any_of(out.begin(), out.end(), [&](AccuracyRow o) {
      o.experiment_id = r.experiment_id;
      return o == r;
    });
    if (!seen) out.push_back(r);
  }
  return out;
}

CompareResult compare_reports(const std::vector<std::vector<AccuracyRow>>& reports) {
  if (reports.size() < 2) throw ContractError("compare needs at least two reports");
  std::map<std::string, std::vector<std::optional<double>>> values;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    for (const auto& r : reports[i]) {
      const std::string key = r.cell_key() + "/" + r.setting;
      auto& v = values[key];
      if (v.empty()) {
        v.resize(reports.size());
        order.push_back(key);
      }
      v[i] = r.accuracy;
    }
  }
  json deltas = json::array();
  for (const auto& key : order) {
    const auto& v = values[key];
    if (std::count_if(v.begin(), v.end(), [](const auto& x) { return x.has_value(); }) < 2) continue;
    json vals = json::array(), d = json::array();
    for (const auto& x : v) vals.push_back(x ? json(*x) : json(nullptr));
    for (const auto& x : v) d.push_back(x && v[0] ? json(*x - *v[0]) : json(nullptr));
    deltas.push_back({{"cell", key}, {"values", vals}, {"delta_vs_first", d}});
  }
  std::vector<AccuracyRow> all;
  for (const auto& rep : reports) all.insert(all.end(), rep.begin(), rep.end());
  MaskingReport masking = masking_report(dedupe_rows(all));
  if (deltas.empty() && masking.cells.empty()) throw ContractError("reports share no grid cell");
  return {deltas, masking};
}

void export_image_grid(const AdversarialBatch& batch, const std::filesystem::path& stem, std::size_t max_samples) {
  const std::size_t n = std::min(max_samples, batch.size());
  if (n == 0) throw ContractError("image grid of an empty batch");
  Shape sample(batch.original.shape().begin() + 1, batch.original.shape().end());
  const std::size_t d = shape_size(sample);
  std::vector<char> blob;
  blob.reserve(2 * n * d * 8);
  auto put = [&](const Tensor& t) {
    for (std::size_t i = 0; i < n * d; ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(t[i]);
      for (int b = 0; b < 8; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  };
  put(batch.original);
  put(batch.adversarial);
  Shape shape{n};
  shape.insert(shape.end(), sample.begin(), sample.end());
  const auto take = [n](const auto& v) { return std::vector(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n)); };
  json manifest{{"format", "advlab-image-grid/1"},
                {"dtype", "float64-le"},
                {"tensors",
                 {{{"name", "original"}, {"shape", shape}, {"offset", 0}},
                  {{"name", "adversarial"}, {"shape", shape}, {"offset", n * d * 8}}}},
                {"labels", take(batch.labels)},
                {"original_pred", take(batch.original_pred)},
                {"adversarial_pred", take(batch.adversarial_pred)},
                {"success", take(batch.success)},
                {"linf", take(batch.linf)},
                {"l2", take(batch.l2)}};
  const auto base = stem.string();
  write_text(base + ".bin", std::string(blob.begin(), blob.end()));
  write_text(base + ".json", manifest.dump(2) + "\n");
}

}  // namespace advlab
