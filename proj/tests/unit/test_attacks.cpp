#include <doctest.h>

#include <cmath>

#include "advlab/attacks.hpp"
#include "advlab/error.hpp"
#include "support.hpp"

using namespace advlab;
using namespace advlab::testing;

namespace {

// logits = x W + b on a flattened [1, 1, d] input.
ModelClassifier linear_classifier(const Tensor& w, const Tensor& b) {
  const std::size_t d = w.dim(0), k = w.dim(1);
  Model m("linear", {1, 1, d}, {LayerSpec::flatten(), LayerSpec::dense(k)}, 0);
  m.parameters()[0].value = w;
  m.parameters()[1].value = b;
  return ModelClassifier(std::move(m));
}

ModelClassifier small_cnn(std::uint64_t seed) {
  return ModelClassifier(Model("cnn", {1, 6, 6},
                               {LayerSpec::conv(1, 3, 3), LayerSpec::act(Activation::kTanh), LayerSpec::flatten(),
                                LayerSpec::dense(4)},
                               seed));
}

double dot_row(const Tensor& w, std::size_t col, std::span<const double> x) {
  double s = 0;
  for (std::size_t q = 0; q < x.size(); ++q) s += w[q * w.dim(1) + col] * x[q];
  return s;
}

}  // namespace

TEST_SUITE("attacks") {
  TEST_CASE("FGSM on a 1-D logistic model moves against the weight") {
    // Two logits (0, w x): label 1 loss is -log sigmoid(w x), so dL/dx = -(1 - sigmoid) w < 0.
    const auto clf = linear_classifier(Tensor({1, 2}, {0.0, 3.0}), Tensor({2}, {0.0, 0.0}));
    const Tensor x({1, 1, 1, 1}, {0.5});
    const std::vector<int> y{1};
    const auto b = fgsm(clf, x, y, fgsm_spec(20));
    CHECK(b.adversarial[0] - 0.5 == doctest::Approx(-20.0 / 255.0).epsilon(1e-14));
    CHECK(b.linf[0] == doctest::Approx(20.0 / 255.0).epsilon(1e-14));
    CHECK(b.iterations[0] == 0);
  }

  TEST_CASE("PGD with one full step and no random start equals FGSM") {
    const auto clf = small_cnn(1);
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor(rng, {20, 1, 6, 6}, 0, 1);
    const std::vector<int> y{0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3};
    for (double eps : {1.0, 20.0, 80.0}) {
      AttackSpec p = pgd_spec(eps);
      p.steps = 1;
      p.step_size = eps / 255.0;
      p.random_start = false;
      const auto a = pgd(clf, x, y, p);
      const auto f = fgsm(clf, x, y, fgsm_spec(eps));
      CHECK(a.adversarial == f.adversarial);
    }
  }

  TEST_CASE("PGD iterates stay in the ball and in [0, 1]") {
    const auto clf = small_cnn(2);
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor(rng, {30, 1, 6, 6}, 0, 1);
    std::vector<int> y(30);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 4);
    const auto b = pgd(clf, x, y, pgd_spec(80, 5));
    for (std::size_t i = 0; i < x.size(); ++i) {
      REQUIRE(std::abs(b.adversarial[i] - x[i]) <= 80.0 / 255.0 + 1e-12);
      REQUIRE((b.adversarial[i] >= 0.0 && b.adversarial[i] <= 1.0));
    }
    CHECK(b.iterations[0] == 40);
    // Seeded: identical reruns, different seeds differ.
    CHECK(pgd(clf, x, y, pgd_spec(80, 5)).adversarial == b.adversarial);
    CHECK_FALSE(pgd(clf, x, y, pgd_spec(80, 6)).adversarial == b.adversarial);
    // Worker count does not change results.
    AttackSpec par = pgd_spec(80, 5);
    par.workers = 3;
    par.chunk = 7;
    CHECK(pgd(clf, x, y, par).adversarial == b.adversarial);
  }

  TEST_CASE("CW on a linear 2-class model finds the hyperplane distance") {
    constexpr std::size_t d = 16;
    std::mt19937_64 rng(3);
    // Class 1 logit minus class 0 logit is v.x + c.
    Tensor w({d, 2}, 0.0);
    const Tensor v = random_tensor(rng, {d}, -1, 1);
    for (std::size_t q = 0; q < d; ++q) w[q * 2 + 1] = v[q];
    const auto x = random_tensor(rng, {4, 1, 1, d}, 0.4, 0.6);
    // Bias puts every sample at a margin of 0.2 on the class-1 side.
    double vx0 = 0;
    for (std::size_t q = 0; q < d; ++q) vx0 += v[q] * x[q];
    const auto clf = linear_classifier(w, Tensor({2}, {0.0, 0.2 - vx0}));
    const auto b = cw(clf, x.rows(0, 1), std::vector<int>{1}, cw_spec(0));
    REQUIRE(b.success[0] == 1);
    const double analytic = 0.2 / norm2(v.data());
    CHECK(b.l2[0] == doctest::Approx(analytic).epsilon(0.05));
    CHECK(b.adversarial_pred[0] == 0);
  }

  TEST_CASE("DeepFool on a linear multiclass model takes one step to the nearest boundary") {
    constexpr std::size_t d = 8, k = 4;
    std::mt19937_64 rng(4);
    const Tensor w = random_tensor(rng, {d, k}, -1, 1);
    const Tensor x = random_tensor(rng, {1, 1, 1, d}, 0.45, 0.55);
    // Class 0 leads every other class by 0.05.
    Tensor b({k}, 0.0);
    const double z0 = dot_row(w, 0, x.data());
    for (std::size_t c = 1; c < k; ++c) b[c] = z0 - dot_row(w, c, x.data()) - 0.05;
    const auto clf = linear_classifier(w, b);
    REQUIRE(clf.predict(x)[0] == 0);

    const auto out = deepfool(clf, x, std::vector<int>{0}, deepfool_spec());
    CHECK(out.iterations[0] == 1);
    CHECK(out.success[0] == 1);
    CHECK(out.adversarial_pred[0] != 0);

    // Oracle: the closest boundary is the class c minimising 0.05 / ||w_c - w_0||.
    double best = 1e300;
    std::size_t best_c = 0;
    for (std::size_t c = 1; c < k; ++c) {
      double n2 = 0;
      for (std::size_t q = 0; q < d; ++q) n2 += std::pow(w[q * k + c] - w[q * k], 2);
      if (0.05 / std::sqrt(n2) < best) {
        best = 0.05 / std::sqrt(n2);
        best_c = c;
      }
    }
    CHECK(out.adversarial_pred[0] == static_cast<int>(best_c));
    // Step length (|f| + 1e-4) / ||w|| times the overshoot factor.
    const double expect = 1.02 * best * (0.05 + 1e-4) / 0.05;
    CHECK(out.l2[0] == doctest::Approx(expect).epsilon(1e-9));
  }

  TEST_CASE("epsilon 0 is the identity for every family") {
    const auto clf = small_cnn(5);
    std::mt19937_64 rng(5);
    const Tensor x = random_tensor(rng, {6, 1, 6, 6}, 0, 1);
    const std::vector<int> y{0, 1, 2, 3, 0, 1};
    AttackSpec cw0 = cw_spec(0);
    cw0.epsilon = 0.0;
    AttackSpec df0 = deepfool_spec();
    df0.epsilon = 0.0;
    for (const AttackSpec& s : {fgsm_spec(0), pgd_spec(0, 9), cw0, df0}) {
      const auto b = run_attack(clf, x, y, s);
      CHECK(b.adversarial == x);
      const auto pred = clf.predict(x);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
      CHECK(b.accuracy() == 100.0 * static_cast<double>(correct) / 6.0);
      for (auto s_ok : b.success) CHECK(s_ok == 0);
    }
  }

  TEST_CASE("black-box attacks never differentiate the target") {
    const auto sub = small_cnn(6), target = small_cnn(7);
    std::mt19937_64 rng(6);
    const Tensor x = random_tensor(rng, {8, 1, 6, 6}, 0, 1);
    const std::vector<int> y{0, 1, 2, 3, 0, 1, 2, 3};
    CountingClassifier counted(target);
    for (const AttackSpec& s : {fgsm_spec(20), pgd_spec(20, 1), deepfool_spec()}) {
      const auto b = blackbox_attack(sub, counted, x, y, s);
      CHECK(counted.gradient_calls() == 0);
      // Crafted on the substitute, so equal to the substitute's white-box points.
      CHECK(b.adversarial == run_attack(sub, x, y, s).adversarial);
    }
    // The counter does see white-box use.
    fgsm(counted, x, y, fgsm_spec(20));
    CHECK(counted.gradient_calls() > 0);
    // Self-transfer reduces to white-box.
    CHECK(blackbox_attack(target, target, x, y, pgd_spec(20, 1)).adversarial_pred ==
          pgd(target, x, y, pgd_spec(20, 1)).adversarial_pred);
  }

  TEST_CASE("spec contracts") {
    AttackSpec p = pgd_spec(20);
    p.step_size = 0.0;
    CHECK_THROWS_AS(p.validate(), ContractError);
    p.step_size = -1.0;
    CHECK_THROWS_AS(p.validate(), ContractError);
    CHECK_THROWS_AS(fgsm_spec(-1).validate(), ContractError);
    AttackSpec missing;
    missing.family = AttackFamily::kPgd;
    CHECK_THROWS_AS(missing.validate(), ContractError);
    CHECK(pgd_spec(20).effective_steps() == 40);
    CHECK(pgd_spec(20).effective_step_size() == doctest::Approx(2.5 * 20 / (255.0 * 40)));
    CHECK(cw_spec().effective_steps() == 1000);
    CHECK(deepfool_spec().effective_steps() == 50);
    CHECK(parse_attack_family("df") == AttackFamily::kDeepFool);
    CHECK_THROWS_AS(parse_attack_family("jsma"), ConfigError);
    const auto back = AttackSpec::from_json(pgd_spec(80, 4).to_json());
    CHECK(back.to_json() == pgd_spec(80, 4).to_json());
    const auto clf = small_cnn(1);
    CHECK_THROWS_AS(pgd(clf, Tensor({1, 1, 6, 6}, 0.5), std::vector<int>{0}, fgsm_spec(20)), ContractError);
  }
}
