// advlab: trains the models of an experiment manifest, runs attack grids,
// compares reports and measures gradient amplitude.
//
// Exit codes: 0 success, 1 unexpected failure, 2 usage or configuration,
// 3 data or checkpoint input, 4 contract violation, 5 numeric failure.
// Every failure prints {"error": {"kind", "message"}} on stderr.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "advlab/error.hpp"
#include "advlab/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace advlab;

namespace {

int exit_code(const std::string& kind) {
  if (kind == "config" || kind == "usage") return 2;
  if (kind == "io" || kind == "parse") return 3;
  if (kind == "contract" || kind == "shape" || kind == "domain") return 4;
  if (kind == "numeric") return 5;
  return 1;
}

int fail(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << std::endl;
  return exit_code(kind);
}

// Options shared by the manifest-driven subcommands. Convenience flags are
// rewritten as JSON-pointer overrides so every change lands in the report.
struct ManifestOptions {
  std::string manifest;
  std::vector<std::string> set;
  std::optional<std::string> data_dir, checkpoint_dir, output_dir;
  std::optional<std::size_t> workers;
  bool quiet = false;

  void add(CLI::App* app) {
    app->add_option("-m,--manifest", manifest, "experiment manifest (JSON)")->required()->check(CLI::ExistingFile);
    app->add_option("--set", set, "override a manifest field: /json/pointer=value (repeatable)");
    app->add_option("--data-dir", data_dir, "directory holding the MNIST IDX files");
    app->add_option("--checkpoint-dir", checkpoint_dir, "checkpoint directory");
    app->add_option("--output-dir", output_dir, "report directory");
    app->add_option("-j,--workers", workers, "worker threads");
    app->add_flag("-q,--quiet", quiet, "no progress log on stderr");
  }

  std::vector<std::string> overrides(const std::vector<std::string>& extra = {}) const {
    std::vector<std::string> o = set;
    if (data_dir) o.push_back("/dataset/dir=" + json(*data_dir).dump());
    if (checkpoint_dir) o.push_back("/checkpoint_dir=" + json(*checkpoint_dir).dump());
    if (output_dir) o.push_back("/output_dir=" + json(*output_dir).dump());
    if (workers) o.push_back("/workers=" + std::to_string(*workers));
    o.insert(o.end(), extra.begin(), extra.end());
    return o;
  }

  WorkspaceOptions workspace(bool overwrite, bool allow_training) const {
    return {overwrite, allow_training, quiet ? nullptr : &std::cerr};
  }
};

json read_manifest_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + path + ": " + e.what());
  }
}

fs::path report_dir(const Manifest& m) { return m.output_dir / m.experiment_id; }

// A report argument is either a rows.csv file or a directory holding one.
std::vector<AccuracyRow> load_report_rows(const fs::path& p) {
  return read_rows_csv(fs::is_directory(p) ? p / "rows.csv" : p);
}

void dump_image_grids(Workspace& ws, const fs::path& dir, std::size_t samples) {
  const Manifest& m = ws.manifest();
  const LabeledDataset& test = ws.test_set();
  const std::size_t n = std::min(samples, test.size());
  const Tensor x = test.images.rows(0, n);
  const std::span<const int> y(test.labels.data(), n);
  for (const auto& a : m.grid.attacks) {
    for (const auto& s : m.grid.settings) {
      for (const auto& t : m.grid.targets) {
        AttackSpec spec = a.spec;
        spec.workers = std::max<std::size_t>(1, m.workers);
        const AdversarialBatch batch =
            s.name == "white"
                ? run_attack(ws.classifier(t), x, y, spec)
                : blackbox_attack(ws.classifier(s.substitutes.at(t)), ws.classifier(t), x, y, spec);
        std::string eps = a.spec.epsilon ? std::to_string(static_cast<long>(*a.spec.epsilon)) : "none";
        export_image_grid(batch, dir / (t + "_" + to_string(a.spec.family) + "_" + eps + "_" + s.name), n);
      }
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial robustness experiments for autoencoder-preprocessed classifiers"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  ManifestOptions train_opts;
  std::vector<std::string> train_models;
  bool overwrite = false;
  auto* train = app.add_subcommand("train", "train (or load) the models of a manifest");
  train_opts.add(train);
  train->add_option("--model", train_models, "only these models and their parts (default: all)");
  train->add_flag("--overwrite", overwrite, "replace checkpoints produced by a different configuration");

  ManifestOptions grid_opts;
  bool grid_train = false, full_test_set = false;
  std::optional<std::string> dump_dir;
  std::size_t dump_samples = 16;
  auto* grid = app.add_subcommand("attack-grid", "evaluate the attack grid of a manifest");
  grid_opts.add(grid);
  grid->add_flag("--train", grid_train, "train models whose checkpoints are missing");
  grid->add_flag("--full-test-set", full_test_set, "evaluate every attack on the whole test split");
  grid->add_option("--dump-dir", dump_dir, "also write image-grid dumps of each cell here");
  grid->add_option("--dump-samples", dump_samples, "samples per image-grid dump")->check(CLI::PositiveNumber);

  std::vector<std::string> compare_inputs;
  std::optional<std::string> compare_out;
  bool fail_on_flag = false;
  auto* compare = app.add_subcommand("compare", "join reports and run the gradient-masking diagnostic");
  compare->add_option("reports", compare_inputs, "report directories or rows.csv files")->required()->expected(2, -1);
  compare->add_option("-o,--output", compare_out, "write the comparison JSON here");
  compare->add_flag("--fail-on-flag", fail_on_flag, "exit 6 when any masking flag is raised");

  ManifestOptions ga_opts;
  std::vector<std::string> ga_models;
  std::optional<std::size_t> ga_n;
  auto* ga = app.add_subcommand("gradient-amplitude", "mean L1 norm of the softmax input-Jacobian");
  ga_opts.add(ga);
  ga->add_option("--model", ga_models, "models to measure (default: the manifest's list)");
  ga->add_option("-n,--samples", ga_n, "test samples (0 = whole split)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*train) {
      Workspace ws(Manifest::load(train_opts.manifest, train_opts.overrides()),
                   train_opts.workspace(overwrite, true));
      if (train_models.empty()) {
        ws.materialize_all();
      } else {
        for (const auto& name : train_models) {
          const ModelSpec& spec = ws.manifest().model(name);
          if (spec.kind == ModelKind::kLeNet5 || spec.kind == ModelKind::kAutoencoder) {
            ws.model(name);
          } else {
            ws.classifier(name);
          }
        }
      }
      std::cout << json{{"experiment_id", ws.manifest().experiment_id},
                        {"manifest_hash", ws.manifest().hash()},
                        {"models", ws.model_records()}}
                       .dump(2)
                << std::endl;
      return 0;
    }

    if (*grid) {
      std::vector<std::string> extra;
      if (full_test_set) {
        const json j = read_manifest_json(grid_opts.manifest);
        const std::size_t count = j.contains("grid") ? j["grid"].value("attacks", json::array()).size() : 0;
        for (std::size_t i = 0; i < count; ++i) extra.push_back("/grid/attacks/" + std::to_string(i) + "/n=0");
      }
      Workspace ws(Manifest::load(grid_opts.manifest, grid_opts.overrides(extra)),
                   grid_opts.workspace(false, grid_train));
      const GridResult result = run_grid(ws);
      const fs::path dir = report_dir(ws.manifest());
      write_report(ws, result, dir);
      if (dump_dir) dump_image_grids(ws, *dump_dir, dump_samples);
      std::cout << console_table(result.rows, ws.manifest().grid.targets);
      if (!result.amplitudes.empty()) std::cout << '\n' << amplitude_table(result.amplitudes);
      std::cout << "report: " << dir.string() << std::endl;
      return 0;
    }

    if (*compare) {
      std::vector<std::vector<AccuracyRow>> reports;
      for (const auto& p : compare_inputs) reports.push_back(load_report_rows(p));
      const CompareResult cmp = compare_reports(reports);
      json out{{"reports", compare_inputs}, {"deltas", cmp.deltas}, {"masking", cmp.masking.to_json()}};
      if (compare_out) {
        std::ofstream f(*compare_out, std::ios::trunc);
        if (!f) throw IoError("cannot write " + *compare_out);
        f << out.dump(2) << '\n';
      }
      std::vector<AccuracyRow> all;
      for (const auto& r : reports) all.insert(all.end(), r.begin(), r.end());
      std::cout << console_table(dedupe_rows(all), {}) << '\n';
      for (const auto& c : cmp.masking.cells) {
        std::cout << c.model << " " << c.attack << " eps ";
        if (c.epsilon) {
          std::cout << *c.epsilon;
        } else {
          std::cout << "-";
        }
        std::cout << " " << c.black_setting << ": white " << c.white << " black " << c.black
                  << (c.flag ? "  MASKING FLAG" : "") << '\n';
      }
      std::cout << "masking flag: " << (cmp.masking.any_flag() ? "raised" : "none") << std::endl;
      return fail_on_flag && cmp.masking.any_flag() ? 6 : 0;
    }

    if (*ga) {
      std::vector<std::string> extra;
      if (ga_n) extra.push_back("/grid/gradient_amplitude_n=" + std::to_string(*ga_n));
      if (!ga_models.empty()) extra.push_back("/grid/gradient_amplitude=" + json(ga_models).dump());
      Manifest m = Manifest::load(ga_opts.manifest, ga_opts.overrides(extra));
      // Only the amplitude section: no attack cells, no clean rows.
      m.grid.attacks.clear();
      m.grid.clean = false;
      m.grid.targets.clear();
      Workspace ws(std::move(m), ga_opts.workspace(false, false));
      const GridResult result = run_grid(ws);
      json j = report_json(ws, result);
      j.erase("rows");
      const fs::path dir = report_dir(ws.manifest());
      fs::create_directories(dir);
      std::ofstream(dir / "gradient_amplitude.json", std::ios::trunc) << j.dump(2) << '\n';
      std::cout << amplitude_table(result.amplitudes);
      return 0;
    }
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
