#include "advlab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "advlab/error.hpp"
#include "advlab/losses.hpp"
#include "advlab/ops.hpp"
#include "advlab/parallel.hpp"

namespace advlab {
namespace {

constexpr std::size_t kDefaultPgdSteps = 40;
constexpr std::size_t kDefaultCwIterations = 1000;
constexpr std::size_t kDefaultDeepFoolIterations = 50;

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

double clip01(double v) { return std::min(1.0, std::max(0.0, v)); }

void check_batch(const Classifier& model, const Tensor& x, std::span<const int> y) {
  Shape expect{x.dim(0)};
  const Shape& in = model.input_shape();
  expect.insert(expect.end(), in.begin(), in.end());
  if (x.shape() != expect) {
    throw ShapeError("attack input " + to_string(x.shape()) + " does not match model input " + to_string(expect));
  }
  if (y.size() != x.dim(0)) {
    throw ShapeError("attack got " + std::to_string(y.size()) + " labels for " + std::to_string(x.dim(0)) +
                     " inputs");
  }
}

// Projects `adv` onto the L-inf ball of radius eps around `x`, then onto [0, 1].
void project(std::span<double> adv, std::span<const double> x, double eps) {
  for (std::size_t i = 0; i < adv.size(); ++i) {
    adv[i] = clip01(std::min(std::max(adv[i], x[i] - eps), x[i] + eps));
  }
}

// Fills predictions, norms and the default success rule.
AdversarialBatch finish(const Classifier& model, const Tensor& x, Tensor adv, std::span<const int> y) {
  AdversarialBatch b;
  const std::size_t n = x.dim(0), d = x.size() / n;
  b.original_pred = model.predict(x);
  b.adversarial_pred = model.predict(adv);
  b.labels.assign(y.begin(), y.end());
  b.success.resize(n);
  b.linf.resize(n);
  b.l2.resize(n);
  b.iterations.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double inf = 0, sq = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = adv[i * d + k] - x[i * d + k];
      inf = std::max(inf, std::abs(diff));
      sq += diff * diff;
    }
    b.linf[i] = inf;
    b.l2[i] = std::sqrt(sq);
    b.success[i] = b.adversarial_pred[i] != b.original_pred[i];
  }
  b.original = x;
  b.adversarial = std::move(adv);
  return b;
}

AdversarialBatch identity(const Classifier& model, const Tensor& x, std::span<const int> y) {
  return finish(model, x, x, y);
}

bool zero_budget(const AttackSpec& spec) { return spec.epsilon && *spec.epsilon == 0.0; }

// Row i of a [N, ...] tensor as a span.
std::span<double> row(Tensor& t, std::size_t i) {
  const std::size_t d = t.size() / t.dim(0);
  return t.data().subspan(i * d, d);
}
std::span<const double> row(const Tensor& t, std::size_t i) {
  const std::size_t d = t.size() / t.dim(0);
  return t.data().subspan(i * d, d);
}

}  // namespace

std::string to_string(AttackFamily f) {
  switch (f) {
    case AttackFamily::kFgsm:
      return "fgsm";
    case AttackFamily::kPgd:
      return "pgd";
    case AttackFamily::kCw:
      return "cw";
    case AttackFamily::kDeepFool:
      return "deepfool";
  }
  return "?";
}

AttackFamily parse_attack_family(const std::string& s) {
  if (s == "fgsm") return AttackFamily::kFgsm;
  if (s == "pgd") return AttackFamily::kPgd;
  if (s == "cw") return AttackFamily::kCw;
  if (s == "deepfool" || s == "df") return AttackFamily::kDeepFool;
  throw ConfigError("unknown attack family '" + s + "' (expected fgsm, pgd, cw or deepfool)");
}

void AttackSpec::validate() const {
  if (epsilon && !(*epsilon >= 0.0)) throw ContractError("attack epsilon must be >= 0");
  if ((family == AttackFamily::kFgsm || family == AttackFamily::kPgd) && !epsilon) {
    throw ContractError(to_string(family) + " needs an epsilon");
  }
  if (family == AttackFamily::kPgd && step_size && !(*step_size > 0.0)) {
    throw ContractError("pgd step_size must be > 0");
  }
  if (!(temperature > 0.0)) throw ContractError("attack temperature must be > 0");
  if (family == AttackFamily::kCw) {
    if (binary_search_steps == 0) throw ContractError("cw needs at least one binary-search step");
    if (!(initial_const > 0.0) || !(learning_rate > 0.0)) {
      throw ContractError("cw initial_const and learning_rate must be > 0");
    }
    if (confidence < 0.0) throw ContractError("cw confidence must be >= 0");
  }
  if (family == AttackFamily::kDeepFool && overshoot < 0.0) throw ContractError("deepfool overshoot must be >= 0");
}

std::size_t AttackSpec::effective_steps() const {
  if (steps != 0) return steps;
  switch (family) {
    case AttackFamily::kPgd:
      return kDefaultPgdSteps;
    case AttackFamily::kCw:
      return kDefaultCwIterations;
    case AttackFamily::kDeepFool:
      return kDefaultDeepFoolIterations;
    case AttackFamily::kFgsm:
      break;
  }
  return 1;
}

double AttackSpec::effective_step_size() const {
  if (step_size) return *step_size;
  return 2.5 * epsilon.value_or(0.0) / (255.0 * static_cast<double>(effective_steps()));
}

nlohmann::json AttackSpec::to_json() const {
  nlohmann::json j{{"family", to_string(family)},
                   {"epsilon", epsilon ? nlohmann::json(*epsilon) : nlohmann::json(nullptr)},
                   {"steps", effective_steps()},
                   {"confidence", confidence},
                   {"overshoot", overshoot},
                   {"random_start", random_start},
                   {"seed", seed},
                   {"binary_search_steps", binary_search_steps},
                   {"initial_const", initial_const},
                   {"learning_rate", learning_rate},
                   {"temperature", temperature}};
  j["step_size"] = family == AttackFamily::kPgd ? nlohmann::json(effective_step_size()) : nlohmann::json(nullptr);
  return j;
}

AttackSpec AttackSpec::from_json(const nlohmann::json& j) {
  AttackSpec s;
  s.family = parse_attack_family(j.at("family").get<std::string>());
  if (j.contains("epsilon") && !j["epsilon"].is_null()) s.epsilon = j["epsilon"].get<double>();
  s.steps = j.value("steps", std::size_t{0});
  if (j.contains("step_size") && !j["step_size"].is_null()) s.step_size = j["step_size"].get<double>();
  s.confidence = j.value("confidence", s.confidence);
  s.overshoot = j.value("overshoot", s.overshoot);
  s.random_start = j.value("random_start", s.random_start);
  s.seed = j.value("seed", s.seed);
  s.binary_search_steps = j.value("binary_search_steps", s.binary_search_steps);
  s.initial_const = j.value("initial_const", s.initial_const);
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.temperature = j.value("temperature", s.temperature);
  s.chunk = j.value("chunk", s.chunk);
  s.workers = j.value("workers", s.workers);
  s.validate();
  return s;
}

AttackSpec fgsm_spec(double eps255) {
  AttackSpec s;
  s.family = AttackFamily::kFgsm;
  s.epsilon = eps255;
  return s;
}

AttackSpec pgd_spec(double eps255, std::uint64_t seed) {
  AttackSpec s;
  s.family = AttackFamily::kPgd;
  s.epsilon = eps255;
  s.seed = seed;
  return s;
}

AttackSpec cw_spec(double confidence) {
  AttackSpec s;
  s.family = AttackFamily::kCw;
  s.confidence = confidence;
  return s;
}

AttackSpec deepfool_spec() {
  AttackSpec s;
  s.family = AttackFamily::kDeepFool;
  return s;
}

double AdversarialBatch::accuracy() const {
  if (labels.empty()) throw ContractError("accuracy of an empty batch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += adversarial_pred[i] == labels[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

Tensor loss_input_gradient(const Classifier& model, const Tensor& x, std::span<const int> y, double temperature) {
  Tape tape;
  Var xv = tape.variable(x);
  Var loss = ops::scale(cross_entropy(model.logits(tape, xv), y, temperature), static_cast<double>(x.dim(0)));
  tape.backward(loss);
  return xv.grad();
}

AdversarialBatch fgsm(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec) {
  spec.validate();
  check_batch(model, x, y);
  if (spec.family != AttackFamily::kFgsm) throw ContractError("fgsm called with a " + to_string(spec.family) + " spec");
  if (zero_budget(spec)) return identity(model, x, y);
  const double eps = *spec.epsilon / 255.0;
  Tensor adv = x;
  parallel_chunks(x.dim(0), spec.chunk, spec.workers, [&](std::size_t b, std::size_t e) {
    const Tensor g = loss_input_gradient(model, x.rows(b, e), y.subspan(b, e - b), spec.temperature);
    const std::size_t d = x.size() / x.dim(0);
    auto a = adv.data().subspan(b * d, (e - b) * d);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = clip01(a[i] + eps * sign(g[i]));
  });
  return finish(model, x, std::move(adv), y);
}

AdversarialBatch pgd(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec) {
  spec.validate();
  check_batch(model, x, y);
  if (spec.family != AttackFamily::kPgd) throw ContractError("pgd called with a " + to_string(spec.family) + " spec");
  if (zero_budget(spec)) return identity(model, x, y);
  const double eps = *spec.epsilon / 255.0;
  const double alpha = spec.effective_step_size();
  const std::size_t steps = spec.effective_steps();

  // The random start is drawn for the whole batch up front so it does not
  // depend on chunking.
  Tensor adv = x;
  if (spec.random_start) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u(-eps, eps);
    for (double& v : adv.data()) v += u(rng);
    project(adv.data(), x.data(), eps);
  }
  parallel_chunks(x.dim(0), spec.chunk, spec.workers, [&](std::size_t b, std::size_t e) {
    const Tensor x0 = x.rows(b, e);
    Tensor cur = adv.rows(b, e);
    const auto labels = y.subspan(b, e - b);
    for (std::size_t t = 0; t < steps; ++t) {
      const Tensor g = loss_input_gradient(model, cur, labels, spec.temperature);
      auto c = cur.data();
      for (std::size_t i = 0; i < c.size(); ++i) c[i] += alpha * sign(g[i]);
      project(c, x0.data(), eps);
    }
    std::copy(cur.data().begin(), cur.data().end(), adv.data().begin() + b * (x.size() / x.dim(0)));
  });
  AdversarialBatch out = finish(model, x, std::move(adv), y);
  out.iterations.assign(out.size(), steps);
  return out;
}

namespace {

// Carlini-Wagner L2 on rows [b, e). Writes the best point found per sample
// into `adv` and the inner iterations used into `iters`.
void cw_chunk(const Classifier& model, const Tensor& x0, std::span<const int> y, const AttackSpec& spec,
              std::span<double> adv, std::span<std::size_t> iters) {
  const std::size_t n = x0.dim(0), d = x0.size() / n, k = model.num_classes();
  const std::size_t iterations = spec.effective_steps();
  const double kappa = spec.confidence;
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

  Tensor w0(x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i) w0[i] = std::atanh((2.0 * x0[i] - 1.0) * (1.0 - 1e-6));
  Tensor onehot({n, k}, 0.0), mask({n, k}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    onehot[i * k + y[i]] = 1.0;
    mask[i * k + y[i]] = -1e12;
  }

  std::vector<double> lower(n, 0.0), upper(n, 1e10), cst(n, spec.initial_const);
  std::vector<double> best_l2(n, std::numeric_limits<double>::infinity());
  std::copy(x0.data().begin(), x0.data().end(), adv.begin());

  for (std::size_t search = 0; search < spec.binary_search_steps; ++search) {
    Tensor w = w0, m(w0.shape(), 0.0), v(w0.shape(), 0.0);
    std::vector<std::uint8_t> hit(n, 0);
    double prev = std::numeric_limits<double>::infinity();
    const std::size_t check_every = std::max<std::size_t>(1, iterations / 10);
    for (std::size_t it = 0; it < iterations; ++it) {
      Tape tape;
      Var wv = tape.variable(w);
      Var xa = ops::scale(ops::add_scalar(ops::tanh(wv), 1.0), 0.5);
      Var delta = xa - tape.constant(x0);
      Var dist = ops::row_sum(delta * delta);
      Var z = model.logits(tape, xa);
      Var real = ops::row_sum(z * tape.constant(onehot));
      Var other = ops::row_max(z + tape.constant(mask));
      // max(real - other, -kappa), shifted by +kappa.
      Var f = ops::relu(ops::add_scalar(real - other, kappa));
      Var loss = ops::sum(dist + tape.constant(Tensor({n}, std::vector<double>(cst))) * f);
      tape.backward(loss);

      const Tensor& xv = xa.value();
      const Tensor& zv = z.value();
      const auto pred = argmax_rows(zv);
      for (std::size_t i = 0; i < n; ++i) {
        const double margin = other.value()[i] - real.value()[i];
        if (pred[i] != y[i] && margin >= kappa && dist.value()[i] < best_l2[i]) {
          best_l2[i] = dist.value()[i];
          std::copy_n(xv.data().begin() + i * d, d, adv.begin() + i * d);
          hit[i] = 1;
        }
      }
      ++iters[0];

      const Tensor& g = wv.grad();
      const double t = static_cast<double>(it + 1);
      const double c1 = 1.0 - std::pow(kBeta1, t), c2 = 1.0 - std::pow(kBeta2, t);
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = kBeta1 * m[i] + (1 - kBeta1) * g[i];
        v[i] = kBeta2 * v[i] + (1 - kBeta2) * g[i] * g[i];
        w[i] -= spec.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEps);
      }

      if ((it + 1) % check_every == 0) {
        const double l = loss.value().item();
        if (l > prev * 0.9999) break;
        prev = l;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (hit[i]) {
        upper[i] = std::min(upper[i], cst[i]);
        if (upper[i] < 1e9) cst[i] = (lower[i] + upper[i]) / 2;
      } else {
        lower[i] = std::max(lower[i], cst[i]);
        cst[i] = upper[i] < 1e9 ? (lower[i] + upper[i]) / 2 : cst[i] * 10;
      }
    }
  }
}

void deepfool_chunk(const Classifier& model, const Tensor& x0, const AttackSpec& spec, std::optional<double> eps,
                    std::span<double> adv, std::span<std::size_t> iters) {
  const std::size_t n = x0.dim(0), d = x0.size() / n, k = model.num_classes();
  const std::size_t max_iter = spec.effective_steps();
  const auto k0 = model.predict(x0);
  Tensor cur = x0;
  Tensor r_tot(x0.shape(), 0.0);
  std::vector<std::size_t> active(n);
  for (std::size_t i = 0; i < n; ++i) active[i] = i;

  for (std::size_t it = 0; it < max_iter && !active.empty(); ++it) {
    Tape tape;
    Var xv = tape.variable(cur.gather_rows(active));
    Var z = model.logits(tape, xv);
    const std::size_t na = active.size();
    std::vector<Tensor> grads;
    grads.reserve(k);
    for (std::size_t c = 0; c < k; ++c) {
      Tensor seed({na, k}, 0.0);
      for (std::size_t i = 0; i < na; ++i) seed[i * k + c] = 1.0;
      tape.backward(z, seed);
      grads.push_back(xv.grad());
    }
    const Tensor& zv = z.value();
    const auto pred = argmax_rows(zv);

    std::vector<std::size_t> still;
    for (std::size_t a = 0; a < na; ++a) {
      const std::size_t s = active[a];
      if (pred[a] != k0[s]) continue;
      const std::size_t o = static_cast<std::size_t>(k0[s]);
      double best = std::numeric_limits<double>::infinity(), best_f = 0, best_norm2 = 0;
      std::size_t best_c = k;
      for (std::size_t c = 0; c < k; ++c) {
        if (c == o) continue;
        double norm2 = 0;
        for (std::size_t q = 0; q < d; ++q) {
          const double wq = grads[c][a * d + q] - grads[o][a * d + q];
          norm2 += wq * wq;
        }
        if (norm2 == 0) continue;
        const double f = zv[a * k + c] - zv[a * k + o];
        const double ratio = std::abs(f) / std::sqrt(norm2);
        if (ratio < best) {
          best = ratio;
          best_c = c;
          best_f = f;
          best_norm2 = norm2;
        }
      }
      if (best_c == k) continue;  // no usable direction; give up on this sample
      const double coef = (std::abs(best_f) + 1e-4) / best_norm2;
      auto rt = row(r_tot, s);
      auto xc = row(cur, s);
      const auto xo = row(x0, s);
      for (std::size_t q = 0; q < d; ++q) {
        rt[q] += coef * (grads[best_c][a * d + q] - grads[o][a * d + q]);
        xc[q] = clip01(xo[q] + (1.0 + spec.overshoot) * rt[q]);
      }
      if (eps) project(xc, xo, *eps / 255.0);
      ++iters[s];
      still.push_back(s);
    }
    active = std::move(still);
  }
  std::copy(cur.data().begin(), cur.data().end(), adv.begin());
}

}  // namespace

AdversarialBatch cw(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec) {
  spec.validate();
  check_batch(model, x, y);
  if (spec.family != AttackFamily::kCw) throw ContractError("cw called with a " + to_string(spec.family) + " spec");
  for (int label : y) {
    if (label < 0 || static_cast<std::size_t>(label) >= model.num_classes()) {
      throw ContractError("cw label " + std::to_string(label) + " out of range");
    }
  }
  if (zero_budget(spec)) return identity(model, x, y);
  const std::size_t n = x.dim(0), d = x.size() / n;
  Tensor adv = x;
  std::vector<std::size_t> chunk_iters((n + spec.chunk - 1) / std::max<std::size_t>(spec.chunk, 1), 0);
  parallel_chunks(n, spec.chunk, spec.workers, [&](std::size_t b, std::size_t e) {
    cw_chunk(model, x.rows(b, e), y.subspan(b, e - b), spec, adv.data().subspan(b * d, (e - b) * d),
             std::span(chunk_iters).subspan(b / std::max<std::size_t>(spec.chunk, 1), 1));
  });
  if (spec.epsilon) project(adv.data(), x.data(), *spec.epsilon / 255.0);

  AdversarialBatch out = finish(model, x, std::move(adv), y);
  // Success is judged on the returned point with a fresh evaluation.
  const Tensor z = model.predict_logits(out.adversarial);
  const std::size_t k = model.num_classes();
  for (std::size_t i = 0; i < n; ++i) {
    double other = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (static_cast<int>(c) != y[i]) other = std::max(other, z[i * k + c]);
    }
    out.success[i] = out.adversarial_pred[i] != y[i] && other - z[i * k + y[i]] >= spec.confidence;
    out.iterations[i] = chunk_iters[i / std::max<std::size_t>(spec.chunk, 1)];
  }
  return out;
}

AdversarialBatch deepfool(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec) {
  spec.validate();
  check_batch(model, x, y);
  if (spec.family != AttackFamily::kDeepFool) {
    throw ContractError("deepfool called with a " + to_string(spec.family) + " spec");
  }
  if (zero_budget(spec)) return identity(model, x, y);
  const std::size_t n = x.dim(0), d = x.size() / n;
  Tensor adv = x;
  std::vector<std::size_t> iters(n, 0);
  parallel_chunks(n, spec.chunk, spec.workers, [&](std::size_t b, std::size_t e) {
    deepfool_chunk(model, x.rows(b, e), spec, spec.epsilon, adv.data().subspan(b * d, (e - b) * d),
                   std::span(iters).subspan(b, e - b));
  });
  AdversarialBatch out = finish(model, x, std::move(adv), y);
  out.iterations = std::move(iters);
  return out;
}

AdversarialBatch run_attack(const Classifier& model, const Tensor& x, std::span<const int> y,
                            const AttackSpec& spec) {
  switch (spec.family) {
    case AttackFamily::kFgsm:
      return fgsm(model, x, y, spec);
    case AttackFamily::kPgd:
      return pgd(model, x, y, spec);
    case AttackFamily::kCw:
      return cw(model, x, y, spec);
    case AttackFamily::kDeepFool:
      return deepfool(model, x, y, spec);
  }
  throw ContractError("unknown attack family");
}

AdversarialBatch blackbox_attack(const Classifier& substitute, const Classifier& target, const Tensor& x,
                                 std::span<const int> y, const AttackSpec& spec) {
  if (substitute.input_shape() != target.input_shape() || substitute.num_classes() != target.num_classes()) {
    throw ConfigError("substitute '" + substitute.id() + "' and target '" + target.id() + "' are not interchangeable");
  }
  CountingClassifier guarded(target);
  const AdversarialBatch crafted = run_attack(substitute, x, y, spec);
  AdversarialBatch out = finish(guarded, x, crafted.adversarial, y);
  out.iterations = crafted.iterations;
  if (guarded.gradient_calls() != 0) {
    throw ContractError("black-box attack evaluated the target's gradient " +
                        std::to_string(guarded.gradient_calls()) + " times");
  }
  return out;
}

}  // namespace advlab
