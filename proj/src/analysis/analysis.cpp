#include "advlab/analysis.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "advlab/error.hpp"
#include "advlab/ops.hpp"

namespace advlab {
namespace {

std::string format_number(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void AccuracyRow::validate() const {
  if (!(accuracy >= 0.0 && accuracy <= 100.0)) throw ContractError("accuracy outside [0, 100]");
  if (n == 0) throw ContractError("accuracy row with zero samples");
  for (const std::string* f : {&experiment_id, &model, &attack, &setting}) {
    if (f->find(',') != std::string::npos) throw ContractError("field '" + *f + "' contains a comma");
  }
}

std::string AccuracyRow::cell_key() const {
  return model + "/" + attack + "/" + (epsilon ? format_number(*epsilon) : "-");
}

std::string to_csv_line(const AccuracyRow& r) {
  r.validate();
  std::ostringstream s;
  s << r.experiment_id << ',' << r.model << ',' << r.attack << ',' << (r.epsilon ? format_number(*r.epsilon) : "")
    << ',' << r.setting << ',' << format_number(r.accuracy) << ',' << r.n << ',' << r.seed;
  return s.str();
}

void write_rows_csv(const std::filesystem::path& path, const std::vector<AccuracyRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << kAccuracyCsvHeader << '\n';
  for (const auto& r : rows) out << to_csv_line(r) << '\n';
}

std::vector<AccuracyRow> read_rows_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line) || line != kAccuracyCsvHeader) {
    throw ParseError(path.string() + ": missing or unexpected CSV header", 0);
  }
  offset += line.size() + 1;
  std::vector<AccuracyRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 8) throw ParseError(path.string() + ": expected 8 fields", offset);
    try {
      AccuracyRow r;
      r.experiment_id = f[0];
      r.model = f[1];
      r.attack = f[2];
      if (!f[3].empty()) r.epsilon = std::stod(f[3]);
      r.setting = f[4];
      r.accuracy = std::stod(f[5]);
      r.n = std::stoull(f[6]);
      r.seed = std::stoull(f[7]);
      r.validate();
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw ParseError(path.string() + ": malformed row '" + line + "'", offset);
    }
    offset += line.size() + 1;
  }
  return rows;
}

nlohmann::json to_json(const AccuracyRow& r) {
  return {{"experiment_id", r.experiment_id},
          {"model", r.model},
          {"attack", r.attack},
          {"epsilon", r.epsilon ? nlohmann::json(*r.epsilon) : nlohmann::json(nullptr)},
          {"setting", r.setting},
          {"accuracy", r.accuracy},
          {"n", r.n},
          {"seed", r.seed}};
}

AccuracyRow row_from_json(const nlohmann::json& j) {
  AccuracyRow r;
  r.experiment_id = j.at("experiment_id");
  r.model = j.at("model");
  r.attack = j.at("attack");
  if (!j.at("epsilon").is_null()) r.epsilon = j["epsilon"].get<double>();
  r.setting = j.at("setting");
  r.accuracy = j.at("accuracy");
  r.n = j.at("n");
  r.seed = j.at("seed");
  r.validate();
  return r;
}

AccuracyRow clean_accuracy(const Classifier& model, const LabeledDataset& data) {
  if (data.size() == 0) throw ContractError("clean accuracy of an empty dataset");
  const auto pred = model.predict(data.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  AccuracyRow r;
  r.model = model.id();
  r.attack = "clean";
  r.setting = "clean";
  r.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
  r.n = data.size();
  return r;
}

AccuracyRow adversarial_accuracy(const Classifier& model, const LabeledDataset& data, const AttackSpec& spec) {
  if (data.size() == 0) throw ContractError("adversarial accuracy of an empty dataset");
  const AdversarialBatch b = run_attack(model, data.images, data.labels, spec);
  AccuracyRow r;
  r.model = model.id();
  r.attack = to_string(spec.family);
  r.epsilon = spec.epsilon;
  r.setting = "white";
  r.accuracy = b.accuracy();
  r.n = b.size();
  r.seed = spec.seed;
  return r;
}

AccuracyRow blackbox_accuracy(const Classifier& substitute, const Classifier& target, const LabeledDataset& data,
                              const AttackSpec& spec, std::string setting) {
  if (data.size() == 0) throw ContractError("black-box accuracy of an empty dataset");
  const AdversarialBatch b = blackbox_attack(substitute, target, data.images, data.labels, spec);
  AccuracyRow r;
  r.model = target.id();
  r.attack = to_string(spec.family);
  r.epsilon = spec.epsilon;
  r.setting = std::move(setting);
  r.accuracy = b.accuracy();
  r.n = b.size();
  r.seed = spec.seed;
  return r;
}

GradientAmplitude gradient_amplitude(const Classifier& model, const LabeledDataset& data, std::size_t chunk) {
  if (data.size() == 0) throw ContractError("gradient amplitude of an empty dataset");
  if (chunk == 0) chunk = data.size();
  const std::size_t k = model.num_classes();
  double total = 0;
  for (std::size_t b = 0; b < data.size(); b += chunk) {
    const std::size_t e = std::min(data.size(), b + chunk);
    Tape tape;
    Var x = tape.variable(data.images.rows(b, e));
    Var p = ops::softmax(model.logits(tape, x));
    for (std::size_t c = 0; c < k; ++c) {
      Tensor seed({e - b, k}, 0.0);
      for (std::size_t i = 0; i < e - b; ++i) seed[i * k + c] = 1.0;
      tape.backward(p, seed);
      for (double g : x.grad().data()) total += std::abs(g);
    }
  }
  const double g = total / static_cast<double>(data.size());
  return {model.id(), g, g / static_cast<double>(shape_size(model.input_shape())), data.size()};
}

bool MaskingReport::any_flag() const {
  for (const auto& c : cells) {
    if (c.flag) return true;
  }
  return false;
}

nlohmann::json MaskingReport::to_json() const {
  nlohmann::json cells_json = nlohmann::json::array();
  for (const auto& c : cells) {
    cells_json.push_back({{"model", c.model},
                          {"attack", c.attack},
                          {"epsilon", c.epsilon ? nlohmann::json(*c.epsilon) : nlohmann::json(nullptr)},
                          {"black_setting", c.black_setting},
                          {"white", c.white},
                          {"black", c.black},
                          {"delta", c.black - c.white},
                          {"masking_flag", c.flag}});
  }
  return {{"cells", cells_json}, {"any_flag", any_flag()}};
}

MaskingReport masking_report(const std::vector<AccuracyRow>& rows) {
  std::map<std::string, const AccuracyRow*> white;
  for (const auto& r : rows) {
    if (r.setting == "white") {
      if (!white.emplace(r.cell_key(), &r).second) {
        throw ContractError("duplicate white-box row for " + r.cell_key());
      }
    }
  }
  MaskingReport rep;
  std::vector<std::string> missing;
  for (const auto& r : rows) {
    if (r.setting == "white" || r.setting == "clean") continue;
    const auto it = white.find(r.cell_key());
    if (it == white.end()) {
      missing.push_back(r.cell_key() + " (" + r.setting + ")");
      continue;
    }
    rep.cells.push_back({r.model, r.attack, r.epsilon, r.setting, it->second->accuracy, r.accuracy,
                         r.accuracy < it->second->accuracy});
  }
  if (!missing.empty()) {
    std::string msg = "no white-box row for:";
    for (const auto& m : missing) msg += " " + m;
    throw ContractError(msg);
  }
  return rep;
}

}  // namespace advlab
