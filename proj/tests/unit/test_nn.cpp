#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "advlab/architectures.hpp"
#include "advlab/checkpoint.hpp"
#include "advlab/error.hpp"
#include "advlab/losses.hpp"
#include "support.hpp"

using namespace advlab;
using namespace advlab::testing;

namespace {

const Shape kMnist{1, 28, 28};

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("advlab-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// An autoencoder whose layers are exactly the identity map: 1x1 conv with
// weight 1, bias 0, no activation.
Model identity_autoencoder() {
  Model m("identity", kMnist, {LayerSpec::conv(1, 1, 1)}, 0);
  m.parameters()[0].value.fill(1.0);
  return m;
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("LeNet5 maps a batch of 4 to 4x10 logits") {
    const Model c = build_lenet5(10, kMnist, 1);
    std::mt19937_64 rng(1);
    CHECK(c.infer(random_tensor(rng, {4, 1, 28, 28}, 0, 1)).shape() == Shape{4, 10});
    CHECK(c.output_shape() == Shape{10});
    CHECK(build_lenet5(10, {1, 32, 32}, 1).output_shape() == Shape{10});
    CHECK_THROWS_AS(build_lenet5(10, {1, 20, 20}, 1), ConfigError);
    CHECK_THROWS_AS(build_lenet5(10, {28, 28}, 1), ConfigError);
  }

  TEST_CASE("untrained LeNet5 with a symmetric output layer is uniform on random input") {
    // Symmetric: every class shares the same output weights, and the final
    // bias is zero. He-normal output weights alone do not give this.
    Model c = build_lenet5(10, kMnist, 2);
    Tensor& w = c.parameters()[8].value;
    REQUIRE(w.shape() == Shape{84, 10});
    for (std::size_t i = 0; i < 84; ++i)
      for (std::size_t k = 1; k < 10; ++k) w[i * 10 + k] = w[i * 10];
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor(rng, {1000, 1, 28, 28}, 0, 1);
    Tape t;
    const Tensor p = ops::softmax(t.constant(c.infer(x))).value();
    double worst = 0;
    for (double v : p.data()) worst = std::max(worst, v);
    CHECK(worst < 0.2);
    CHECK(worst == doctest::Approx(0.1).epsilon(1e-12));
  }

  TEST_CASE("He-normal initialisation statistics") {
    const Model c = build_lenet5(10, kMnist, 3, {Activation::kTanh, 2});
    for (const auto& p : c.parameters()) {
      if (p.name.ends_with("bias")) {
        CHECK(p.value == Tensor::zeros(p.value.shape()));
      }
    }
    // dense 120 -> 84: fan_in 120, 10080 samples.
    const Tensor& w = c.parameters()[6].value;
    REQUIRE(w.shape() == Shape{120, 84});
    double mean = 0, sq = 0;
    for (double v : w.data()) mean += v;
    mean /= static_cast<double>(w.size());
    for (double v : w.data()) sq += (v - mean) * (v - mean);
    const double var = sq / static_cast<double>(w.size() - 1);
    CHECK(std::abs(mean) < 4 * std::sqrt(2.0 / 120 / static_cast<double>(w.size())));
    CHECK(var == doctest::Approx(2.0 / 120).epsilon(0.05));
  }

  TEST_CASE("autoencoder preserves the input shape") {
    const Model ae = build_autoencoder(kMnist, 4);
    std::mt19937_64 rng(4);
    const Tensor y = ae.infer(random_tensor(rng, {8, 1, 28, 28}, 0, 1));
    CHECK(y.shape() == Shape{8, 1, 28, 28});
    for (double v : y.data()) CHECK((v >= 0.0 && v <= 1.0));
    CHECK_THROWS_AS(build_autoencoder({1, 30, 30}, 4), ConfigError);
    CHECK(build_autoencoder(kMnist, 4, {8}).output_shape() == kMnist);
  }

  TEST_CASE("compose_aec checks shapes and freezes the autoencoder") {
    const WholeClassifier aec = compose_aec(build_autoencoder(kMnist, 5), build_lenet5(10, kMnist, 5));
    CHECK(aec.autoencoder().frozen());
    CHECK_FALSE(aec.classifier().frozen());
    CHECK_THROWS_AS(compose_aec(build_autoencoder({1, 32, 32}, 5), build_lenet5(10, kMnist, 5)), ConfigError);
  }

  TEST_CASE("input gradients flow through the autoencoder") {
    const WholeClassifier aec = compose_aec(build_autoencoder(kMnist, 6), build_lenet5(10, kMnist, 6));
    std::mt19937_64 rng(6);
    Tape t;
    Var x = t.variable(random_tensor(rng, {2, 1, 28, 28}, 0, 1));
    const std::vector<int> y{3, 7};
    t.backward(cross_entropy(aec.logits(t, x), y));
    double l1 = 0;
    for (double g : x.grad().data()) l1 += std::abs(g);
    CHECK(l1 > 0);
  }

  TEST_CASE("an identity autoencoder leaves predictions unchanged") {
    const Model c = build_lenet5(10, kMnist, 7);
    const WholeClassifier aec(identity_autoencoder(), c);
    const ModelClassifier plain(c);
    std::mt19937_64 rng(7);
    const Tensor x = random_tensor(rng, {64, 1, 28, 28}, 0, 1);
    CHECK(aec.predict(x) == plain.predict(x));
    CHECK(aec.predict_logits(x) == plain.predict_logits(x));
  }

  TEST_CASE("encoder-classifier heads share the encoder") {
    EncoderClassifier ec = build_encoder_classifier(kMnist, 10, 8);
    std::mt19937_64 rng(8);
    Tape t;
    ParamBinding binding;
    auto [logits, recon] = ec.forward_both(t, t.constant(random_tensor(rng, {2, 1, 28, 28}, 0, 1)), &binding);
    CHECK(logits.shape() == Shape{2, 10});
    CHECK(recon.shape() == Shape{2, 1, 28, 28});
    const Model chained = ec.classification_model();
    const Tensor x = random_tensor(rng, {3, 1, 28, 28}, 0, 1);
    CHECK(chained.infer(x) == ec.predict_logits(x));
  }

  TEST_CASE("cross entropy contracts") {
    Tape t;
    const std::vector<int> labels{0, 3, 9};
    const double ce = cross_entropy(t.constant(Tensor({3, 10}, 0.7)), labels).value().item();
    CHECK(ce == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    CHECK_THROWS_AS(cross_entropy(t.constant(Tensor({3, 10})), std::vector<int>{0, 10, 1}), ContractError);
    CHECK_THROWS_AS(cross_entropy(t.constant(Tensor({3, 10})), std::vector<int>{0, -1, 1}), ContractError);
    CHECK_THROWS_AS(cross_entropy(t.constant(Tensor({3, 10})), labels, 0.0), ContractError);
  }

  TEST_CASE("temperature never changes the argmax") {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 200; ++i) {
      const Tensor z = random_tensor(rng, {5, 10}, -5, 5);
      const double temp = std::uniform_real_distribution<double>(0.05, 20)(rng);
      Tape t;
      Var scaled = ops::scale(t.constant(z), 1.0 / temp);
      CHECK(argmax_rows(ops::softmax(scaled).value()) == argmax_rows(z));
    }
  }

  TEST_CASE("l2 reconstruction") {
    Tape t;
    CHECK(l2_reconstruction(t.constant(Tensor::vector({0, 0})), t.constant(Tensor::vector({1, 1}))).value().item() ==
          1.0);
    const Tensor x = Tensor::vector({0.25, -1, 3});
    CHECK(l2_reconstruction(t.constant(x), t.constant(x)).value().item() == 0.0);
    Var o = t.variable(Tensor::vector({1, 2, 3, 4}));
    const Tensor target = Tensor::vector({0, 2, 5, 1});
    t.backward(l2_reconstruction(o, t.constant(target)));
    for (std::size_t i = 0; i < 4; ++i) CHECK(o.grad()[i] == doctest::Approx(2 * (o.value()[i] - target[i]) / 4));
    CHECK_THROWS_AS(l2_reconstruction(t.constant(Tensor::vector({1, 2})), t.constant(Tensor::vector({1}))),
                    ShapeError);
  }

  TEST_CASE("argmax ties go to the lowest index") {
    CHECK(argmax_rows(Tensor::matrix({{1, 3, 3}, {2, 2, 2}})) == std::vector<int>{1, 0});
  }

  TEST_CASE("frozen models expose no parameters to a binding") {
    Model m = build_lenet5(10, kMnist, 10);
    m.set_frozen(true);
    Tape t;
    ParamBinding binding;
    m.forward(t, t.constant(Tensor({1, 1, 28, 28})), &binding);
    CHECK(binding.entries.empty());
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip is bit-exact") {
    const auto dir = scratch_dir("ckpt");
    Model m = build_autoencoder(kMnist, 11);
    // Values that exercise every bit pattern class.
    m.parameters()[0].value[0] = -0.0;
    m.parameters()[0].value[1] = 5e-324;
    m.parameters()[0].value[2] = 1.0 / 3.0;
    m.set_frozen(true);
    save_checkpoint(dir / "ae", m, {{"note", "x"}});
    nlohmann::json meta;
    const Model back = load_checkpoint(dir / "ae", &meta);
    CHECK(back == m);
    CHECK(back.frozen());
    CHECK(meta["note"] == "x");
    CHECK(std::signbit(back.parameters()[0].value[0]));
    CHECK(read_checkpoint_metadata(dir / "ae")["note"] == "x");
    // The blob is raw little-endian float64 in parameter order.
    std::ifstream blob(dir / "ae.bin", std::ios::binary);
    unsigned char first[8];
    blob.seekg(8);
    blob.read(reinterpret_cast<char*>(first), 8);
    CHECK(first[0] == 1);  // 5e-324 is the smallest subnormal: 0x0000000000000001
    for (int i = 1; i < 8; ++i) CHECK(first[i] == 0);
  }

  TEST_CASE("a flipped byte is reported with the parameter and offset") {
    const auto dir = scratch_dir("corrupt");
    const Model m = build_lenet5(10, kMnist, 12);
    save_checkpoint(dir / "c", m);
    const std::size_t w0 = m.parameters()[0].value.size() * 8;  // layer0.weight bytes
    const std::size_t b0 = m.parameters()[1].value.size() * 8;
    {
      std::fstream f(dir / "c.bin", std::ios::in | std::ios::out | std::ios::binary);
      f.seekg(static_cast<std::streamoff>(w0 + b0 + 17));
      char c;
      f.read(&c, 1);
      c = static_cast<char>(c ^ 0x40);
      f.seekp(static_cast<std::streamoff>(w0 + b0 + 17));
      f.write(&c, 1);
    }
    try {
      load_checkpoint(dir / "c");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.offset() == w0 + b0);
      CHECK(std::string(e.what()).find("layer3.weight") != std::string::npos);
    }
  }

  TEST_CASE("a truncated blob is rejected") {
    const auto dir = scratch_dir("short");
    save_checkpoint(dir / "c", build_lenet5(10, kMnist, 13));
    std::filesystem::resize_file(dir / "c.bin", 100);
    CHECK_THROWS_AS(load_checkpoint(dir / "c"), ParseError);
  }
}
