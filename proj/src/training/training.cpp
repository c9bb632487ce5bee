#include "advlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "advlab/error.hpp"
#include "advlab/hash.hpp"
#include "advlab/losses.hpp"
#include "advlab/ops.hpp"

namespace advlab {
namespace {

// One optimizer step on a batch; returns the loss and, for classification
// steps, the number of correct predictions.
struct StepResult {
  double loss = 0.0;
  std::size_t correct = 0;
};
using StepFn = std::function<StepResult(const Tensor& x, std::span<const int> y, std::size_t step)>;

std::size_t count_correct(const Tensor& logits, std::span<const int> y) {
  const auto pred = argmax_rows(logits);
  std::size_t c = 0;
  for (std::size_t i = 0; i < y.size(); ++i) c += pred[i] == y[i];
  return c;
}

// Epoch and step are added by run_epochs.
double checked_loss(Var loss) {
  const double v = loss.value().item();
  if (!std::isfinite(v)) throw NumericError("non-finite loss " + std::to_string(v));
  return v;
}

// Seeded per-epoch shuffles, batching, metrics and the step budget.
TrainHistory run_epochs(const LabeledDataset& data, const TrainConfig& cfg, bool classification,
                        const StepFn& step_fn, const std::function<std::optional<EpochMetrics>()>& eval_fn) {
  cfg.validate();
  if (data.size() == 0) throw ContractError("training set is empty");
  TrainHistory h;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      if (cfg.max_steps && step >= cfg.max_steps) break;
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + b, e - b);
      const Tensor x = data.images.gather_rows(idx);
      std::vector<int> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = data.labels[idx[i]];
      StepResult r;
      try {
        r = step_fn(x, y, step);
      } catch (const NumericError& err) {
        throw NumericError(std::string(err.what()) + " (epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step) + ")");
      }
      if (!std::isfinite(r.loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      }
      h.step_losses.push_back(r.loss);
      loss_sum += r.loss * static_cast<double>(idx.size());
      correct += r.correct;
      seen += idx.size();
      ++step;
    }
    if (seen == 0) break;
    EpochMetrics m{epoch, "train", loss_sum / static_cast<double>(seen), std::nullopt};
    if (classification) m.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(seen);
    h.epochs.push_back(m);
    if (eval_fn) {
      if (auto em = eval_fn()) {
        em->epoch = epoch;
        h.epochs.push_back(*em);
      }
    }
  }
  return h;
}

std::function<std::optional<EpochMetrics>()> classifier_eval(const Classifier& clf, const LabeledDataset* eval,
                                                             double temperature) {
  if (!eval) return {};
  return [&clf, eval, temperature]() -> std::optional<EpochMetrics> { return evaluate(clf, *eval, temperature); };
}

// Reconstruction error of `forward` on `eval`, in chunks.
template <class Forward>
std::optional<EpochMetrics> reconstruction_eval(const LabeledDataset& eval, Forward&& forward) {
  constexpr std::size_t kChunk = 256;
  double sum = 0;
  for (std::size_t b = 0; b < eval.size(); b += kChunk) {
    const std::size_t e = std::min(eval.size(), b + kChunk);
    Tape tape;
    Var x = tape.constant(eval.images.rows(b, e));
    sum += l2_reconstruction(forward(tape, x), x).value().item() * static_cast<double>(e - b);
  }
  return EpochMetrics{0, eval.split.empty() ? "eval" : eval.split, sum / static_cast<double>(eval.size()),
                      std::nullopt};
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::string to_string(Regime r) {
  switch (r) {
    case Regime::kStandard:
      return "standard";
    case Regime::kReconstruction:
      return "reconstruction";
    case Regime::kRegularized:
      return "regularized";
    case Regime::kAlternative:
      return "alternative";
    case Regime::kPgdAdversarial:
      return "pgd-adv";
  }
  return "?";
}

Regime parse_regime(const std::string& s) {
  if (s == "standard") return Regime::kStandard;
  if (s == "reconstruction") return Regime::kReconstruction;
  if (s == "regularized") return Regime::kRegularized;
  if (s == "alternative") return Regime::kAlternative;
  if (s == "pgd-adv") return Regime::kPgdAdversarial;
  throw ConfigError("unknown training regime '" + s + "'");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0) || !(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(adam_eps > 0)) {
    throw ConfigError("invalid optimizer hyperparameters");
  }
  if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
  if (!(temperature > 0)) throw ConfigError("temperature must be > 0");
  if (regime == Regime::kPgdAdversarial) {
    if (attack.family != AttackFamily::kPgd) throw ConfigError("pgd-adv training needs a pgd attack spec");
    attack.validate();
  }
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j{{"epochs", epochs},
                   {"batch_size", batch_size},
                   {"seed", seed},
                   {"learning_rate", learning_rate},
                   {"beta1", beta1},
                   {"beta2", beta2},
                   {"adam_eps", adam_eps},
                   {"regime", to_string(regime)},
                   {"temperature", temperature},
                   {"max_steps", max_steps}};
  // Regime-specific fields only, so unrelated knobs do not change the hash.
  if (regime == Regime::kRegularized) j["lambda"] = lambda;
  if (regime == Regime::kAlternative) j["gamma"] = gamma;
  if (regime == Regime::kPgdAdversarial) j["attack"] = attack.to_json();
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  if (j.contains("regime")) c.regime = parse_regime(j["regime"].get<std::string>());
  c.lambda = j.value("lambda", c.lambda);
  c.gamma = j.value("gamma", c.gamma);
  if (j.contains("attack")) c.attack = AttackSpec::from_json(j["attack"]);
  c.temperature = j.value("temperature", c.temperature);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.validate();
  return c;
}

std::string TrainConfig::hash() const { return fnv1a64_hex(to_json().dump()); }

void Adam::step(const ParamBinding& binding, std::span<Model* const> models) {
  ++steps_;
  for (const auto& e : binding.entries) {
    Model* target = nullptr;
    for (Model* m : models) {
      if (m == e.model) target = m;
    }
    if (!target) throw ContractError("optimizer got a parameter of a model it does not own");
    Tensor& p = target->parameters()[e.index].value;
    const Tensor& g = e.var.grad();
    Slot& s = slots_[{e.model, e.index}];
    if (s.t == 0) {
      s.m = Tensor(p.shape(), 0.0);
      s.v = Tensor(p.shape(), 0.0);
    }
    ++s.t;
    const double t = static_cast<double>(s.t);
    const double c1 = 1.0 - std::pow(b1_, t), c2 = 1.0 - std::pow(b2_, t);
    auto pd = p.data();
    auto md = s.m.data(), vd = s.v.data();
    const auto gd = g.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      md[i] = b1_ * md[i] + (1 - b1_) * gd[i];
      vd[i] = b2_ * vd[i] + (1 - b2_) * gd[i] * gd[i];
      pd[i] -= lr_ * (md[i] / c1) / (std::sqrt(vd[i] / c2) + eps_);
    }
  }
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "epoch,split,loss,accuracy\n";
  for (const auto& m : epochs) {
    out << m.epoch << ',' << m.split << ',' << m.loss << ',';
    if (m.accuracy) out << *m.accuracy;
    out << '\n';
  }
}

EpochMetrics evaluate(const Classifier& clf, const LabeledDataset& data, double temperature) {
  if (data.size() == 0) throw ContractError("evaluation set is empty");
  constexpr std::size_t kChunk = 256;
  double loss = 0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < data.size(); b += kChunk) {
    const std::size_t e = std::min(data.size(), b + kChunk);
    const Tensor z = clf.predict_logits(data.images.rows(b, e));
    const std::span<const int> y(data.labels.data() + b, e - b);
    Tape tape;
    loss += cross_entropy(tape.constant(z), y, temperature).value().item() * static_cast<double>(e - b);
    correct += count_correct(z, y);
  }
  const double n = static_cast<double>(data.size());
  return {0, data.split.empty() ? "eval" : data.split, loss / n, 100.0 * static_cast<double>(correct) / n};
}

TrainHistory train_classifier(Classifier& clf, std::vector<Model*> trainable, const LabeledDataset& data,
                              const TrainConfig& cfg, const LabeledDataset* eval) {
  Adam opt(cfg);
  auto step = [&](const Tensor& x, std::span<const int> y, std::size_t) {
    Tape tape;
    ParamBinding binding;
    Var logits = clf.logits(tape, tape.constant(x), &binding);
    Var loss = cross_entropy(logits, y, cfg.temperature);
    const double v = checked_loss(loss);
    if (!binding.entries.empty()) {
      tape.backward(loss);
      opt.step(binding, trainable);
    }
    return StepResult{v, count_correct(logits.value(), y)};
  };
  return run_epochs(data, cfg, true, step, classifier_eval(clf, eval, cfg.temperature));
}

TrainHistory train_standard(Model& model, const LabeledDataset& data, const TrainConfig& cfg,
                            const LabeledDataset* eval) {
  Adam opt(cfg);
  Model* self[] = {&model};
  auto step = [&](const Tensor& x, std::span<const int> y, std::size_t) {
    Tape tape;
    ParamBinding binding;
    Var logits = model.forward(tape, tape.constant(x), &binding);
    Var loss = cross_entropy(logits, y, cfg.temperature);
    const double v = checked_loss(loss);
    if (!binding.entries.empty()) {
      tape.backward(loss);
      opt.step(binding, self);
    }
    return StepResult{v, count_correct(logits.value(), y)};
  };
  std::function<std::optional<EpochMetrics>()> eval_fn;
  if (eval) {
    eval_fn = [&]() -> std::optional<EpochMetrics> {
      const ModelClassifier view(model);
      return evaluate(view, *eval, cfg.temperature);
    };
  }
  return run_epochs(data, cfg, true, step, eval_fn);
}

TrainHistory train_autoencoder(Model& ae, const LabeledDataset& data, const TrainConfig& cfg,
                               const LabeledDataset* eval) {
  if (ae.output_shape() != ae.input_shape()) {
    throw ConfigError("autoencoder '" + ae.name() + "' output " + to_string(ae.output_shape()) +
                      " differs from its input " + to_string(ae.input_shape()));
  }
  Adam opt(cfg);
  Model* self[] = {&ae};
  auto step = [&](const Tensor& x, std::span<const int>, std::size_t) {
    Tape tape;
    ParamBinding binding;
    Var in = tape.constant(x);
    Var loss = l2_reconstruction(ae.forward(tape, in, &binding), in);
    const double v = checked_loss(loss);
    if (!binding.entries.empty()) {
      tape.backward(loss);
      opt.step(binding, self);
    }
    return StepResult{v, 0};
  };
  std::function<std::optional<EpochMetrics>()> eval_fn;
  if (eval) {
    eval_fn = [&] { return reconstruction_eval(*eval, [&](Tape& t, Var x) { return ae.forward(t, x); }); };
  }
  return run_epochs(data, cfg, false, step, eval_fn);
}

TrainHistory train_joint_regularized(EncoderClassifier& ec, const LabeledDataset& data, const TrainConfig& cfg,
                                     const LabeledDataset* eval) {
  Adam opt(cfg);
  Model* parts[] = {&ec.encoder(), &ec.head(), &ec.decoder()};
  auto step = [&](const Tensor& x, std::span<const int> y, std::size_t) {
    Tape tape;
    ParamBinding binding;
    Var in = tape.constant(x);
    Var latent = ec.encoder().forward(tape, in, &binding);
    Var logits = ec.head().forward(tape, latent, &binding);
    Var loss = cross_entropy(logits, y, cfg.temperature);
    if (cfg.lambda != 0.0) {
      Var recon = ec.decoder().forward(tape, latent, &binding);
      loss = loss + ops::scale(l2_reconstruction(recon, in), cfg.lambda);
    }
    const double v = checked_loss(loss);
    tape.backward(loss);
    opt.step(binding, parts);
    return StepResult{v, count_correct(logits.value(), y)};
  };
  return run_epochs(data, cfg, true, step, classifier_eval(ec, eval, cfg.temperature));
}

TrainHistory train_joint_alternative(EncoderClassifier& ec, const LabeledDataset& data, const TrainConfig& cfg,
                                     const LabeledDataset* eval) {
  Adam opt(cfg);
  Model* parts[] = {&ec.encoder(), &ec.head(), &ec.decoder()};
  auto step = [&](const Tensor& x, std::span<const int> y, std::size_t) {
    StepResult r;
    {
      Tape tape;
      ParamBinding binding;
      Var logits = ec.head().forward(tape, ec.encoder().forward(tape, tape.constant(x), &binding), &binding);
      Var loss = cross_entropy(logits, y, cfg.temperature);
      r = {checked_loss(loss), count_correct(logits.value(), y)};
      tape.backward(loss);
      opt.step(binding, parts);
    }
    for (std::size_t g = 0; g < cfg.gamma; ++g) {
      Tape tape;
      ParamBinding binding;
      Var in = tape.constant(x);
      Var loss = l2_reconstruction(ec.reconstruct(tape, in, &binding), in);
      checked_loss(loss);
      tape.backward(loss);
      opt.step(binding, parts);
    }
    return r;
  };
  return run_epochs(data, cfg, true, step, classifier_eval(ec, eval, cfg.temperature));
}

TrainHistory train_pgd_adversarial(Model& model, const LabeledDataset& data, const TrainConfig& cfg,
                                   const LabeledDataset* eval) {
  if (cfg.attack.family != AttackFamily::kPgd) throw ConfigError("pgd-adv training needs a pgd attack spec");
  Adam opt(cfg);
  Model* self[] = {&model};
  const bool identity = cfg.attack.epsilon.value_or(0.0) == 0.0;
  auto step = [&](const Tensor& x, std::span<const int> y, std::size_t step_index) {
    Tensor xa = x;
    if (!identity) {
      AttackSpec spec = cfg.attack;
      spec.seed = mix(cfg.attack.seed, step_index);
      const ModelClassifier view(model);
      xa = pgd(view, x, y, spec).adversarial;
    }
    Tape tape;
    ParamBinding binding;
    Var logits = model.forward(tape, tape.constant(xa), &binding);
    Var loss = cross_entropy(logits, y, cfg.temperature);
    const double v = checked_loss(loss);
    tape.backward(loss);
    opt.step(binding, self);
    return StepResult{v, count_correct(logits.value(), y)};
  };
  std::function<std::optional<EpochMetrics>()> eval_fn;
  if (eval) {
    eval_fn = [&]() -> std::optional<EpochMetrics> {
      const ModelClassifier view(model);
      return evaluate(view, *eval, cfg.temperature);
    };
  }
  return run_epochs(data, cfg, true, step, eval_fn);
}

}  // namespace advlab
