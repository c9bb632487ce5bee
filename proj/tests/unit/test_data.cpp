#include <doctest.h>

#include <array>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <vector>

#include "advlab/data.hpp"
#include "advlab/error.hpp"

using namespace advlab;
namespace fs = std::filesystem;

namespace {

using Bytes = std::vector<unsigned char>;

void put_be32(Bytes& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(v >> s));
}

void write_file(const fs::path& p, const Bytes& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

Bytes read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("advlab-data-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Two 28x28 images: image k has pixel i equal to (i * (k + 1)) mod 256.
struct IdxFixture {
  fs::path images, labels;
  Bytes image_bytes, label_bytes;
};

IdxFixture idx_fixture(const std::string& name) {
  const auto dir = scratch(name);
  IdxFixture f{dir / "images", dir / "labels", {}, {}};
  put_be32(f.image_bytes, 0x00000803);
  put_be32(f.image_bytes, 2);
  put_be32(f.image_bytes, 28);
  put_be32(f.image_bytes, 28);
  for (std::uint32_t k = 0; k < 2; ++k)
    for (std::uint32_t i = 0; i < 784; ++i) f.image_bytes.push_back(static_cast<unsigned char>((i * (k + 1)) % 256));
  put_be32(f.label_bytes, 0x00000801);
  put_be32(f.label_bytes, 2);
  f.label_bytes.push_back(3);
  f.label_bytes.push_back(9);
  write_file(f.images, f.image_bytes);
  write_file(f.labels, f.label_bytes);
  return f;
}

template <class F>
std::size_t parse_error_offset(F&& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e.offset();
  }
  FAIL("expected ParseError");
  return 0;
}

const char* mnist_dir() { return std::getenv("ADVLAB_MNIST_DIR"); }

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("two-image IDX fixture parses exactly") {
    const auto f = idx_fixture("idx");
    const auto d = load_mnist_idx(f.images, f.labels, "fixture");
    REQUIRE(d.size() == 2);
    CHECK(d.images.shape() == Shape{2, 1, 28, 28});
    CHECK(d.labels == std::vector<int>{3, 9});
    CHECK(d.split == "fixture");
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t i = 0; i < 784; ++i)
        REQUIRE(d.images[k * 784 + i] == static_cast<double>((i * (k + 1)) % 256) / 255.0);
    // Re-parsing is bit-exact.
    const auto again = load_mnist_idx(f.images, f.labels, "fixture");
    CHECK(again.images == d.images);
    CHECK(again.checksum == d.checksum);
    CHECK(d.checksum.size() == 16);
  }

  TEST_CASE("IDX errors carry the offset of the bad field") {
    auto f = idx_fixture("idx-errors");
    const auto dir = f.images.parent_path();

    Bytes bad = f.image_bytes;
    bad[3] = 0x01;
    write_file(dir / "bad-magic", bad);
    CHECK(parse_error_offset([&] { load_mnist_idx(dir / "bad-magic", f.labels); }) == 0);

    bad = f.label_bytes;
    bad[3] = 0x03;
    write_file(dir / "bad-label-magic", bad);
    CHECK(parse_error_offset([&] { load_mnist_idx(f.images, dir / "bad-label-magic"); }) == 0);

    // Truncated pixel data: the error points at the end of what is there.
    bad = Bytes(f.image_bytes.begin(), f.image_bytes.end() - 10);
    write_file(dir / "short", bad);
    CHECK(parse_error_offset([&] { load_mnist_idx(dir / "short", f.labels); }) == bad.size());

    // Truncated header.
    write_file(dir / "tiny", Bytes(f.image_bytes.begin(), f.image_bytes.begin() + 6));
    CHECK_THROWS_AS(load_mnist_idx(dir / "tiny", f.labels), ParseError);

    // Count mismatch between the two files is reported at the labels' count field.
    bad = f.label_bytes;
    bad[7] = 3;
    bad.push_back(1);
    write_file(dir / "three-labels", bad);
    CHECK(parse_error_offset([&] { load_mnist_idx(f.images, dir / "three-labels"); }) == 4);

    // Label outside [0, 10).
    bad = f.label_bytes;
    bad[9] = 10;
    write_file(dir / "label-range", bad);
    CHECK(parse_error_offset([&] { load_mnist_idx(f.images, dir / "label-range"); }) == 9);

    CHECK_THROWS_AS(load_mnist_idx(dir / "missing", f.labels), IoError);
  }

  TEST_CASE("CIFAR-10 fixture record with label 7 and ramp pixels") {
    const auto dir = scratch("cifar");
    Bytes rec{7};
    for (std::size_t i = 0; i < 3072; ++i) rec.push_back(static_cast<unsigned char>(i % 256));
    Bytes two = rec;
    two.push_back(2);
    for (std::size_t i = 0; i < 3072; ++i) two.push_back(static_cast<unsigned char>(255 - i % 256));
    write_file(dir / "batch.bin", two);

    const auto d = load_cifar10_bin({dir / "batch.bin"}, "fixture");
    REQUIRE(d.size() == 2);
    CHECK(d.images.shape() == Shape{2, 3, 32, 32});
    CHECK(d.labels == std::vector<int>{7, 2});
    for (std::size_t i = 0; i < 3072; ++i) {
      REQUIRE(d.images[i] == static_cast<double>(i % 256) / 255.0);
      REQUIRE(d.images[3072 + i] == static_cast<double>(255 - i % 256) / 255.0);
    }
    // Files concatenate in order.
    write_file(dir / "one.bin", rec);
    const auto joined = load_cifar10_bin({dir / "one.bin", dir / "batch.bin"});
    CHECK(joined.labels == std::vector<int>{7, 7, 2});

    two.pop_back();
    write_file(dir / "ragged.bin", two);
    CHECK_THROWS_AS(load_cifar10_bin({dir / "ragged.bin"}), ParseError);
  }

  TEST_CASE("epsilon conversion") {
    CHECK(epsilon_to_unit(0) == 0.0);
    CHECK(epsilon_to_unit(255) == 1.0);
    CHECK(epsilon_to_unit(20) == doctest::Approx(0.0784313725490196).epsilon(1e-15));
    CHECK_THROWS_AS(epsilon_to_unit(-1), ContractError);
    static_assert(epsilon_to_unit(51) == 0.2);
  }

  TEST_CASE("slices and seeded subsets") {
    const auto f = idx_fixture("subset");
    const auto d = load_mnist_idx(f.images, f.labels);
    const auto s = slice(d, 1, 2);
    CHECK(s.labels == std::vector<int>{9});
    CHECK(s.images.shape() == Shape{1, 1, 28, 28});
    CHECK(s.images[5] == d.images[784 + 5]);
    CHECK(seeded_subset(d, 5, 1).size() == 2);
    const auto a = seeded_subset(d, 1, 42), b = seeded_subset(d, 1, 42);
    CHECK(a.labels == b.labels);
    CHECK(a.images == b.images);
  }

  TEST_CASE("real MNIST test split matches the raw label bytes") {
    const char* dir = mnist_dir();
    if (dir == nullptr) {
      MESSAGE("ADVLAB_MNIST_DIR unset; skipped");
      return;
    }
    const auto test = load_mnist(dir, "test");
    CHECK(test.size() == 10000);
    CHECK(test.images.shape() == Shape{10000, 1, 28, 28});
    for (double v : test.images.data()) REQUIRE((v >= 0.0 && v <= 1.0));

    // Independent histogram straight from the file bytes after the 8-byte header.
    const Bytes raw = read_file(fs::path(dir) / "t10k-labels-idx1-ubyte");
    std::array<int, 10> oracle{}, parsed{};
    for (std::size_t i = 8; i < raw.size(); ++i) ++oracle[raw[i]];
    for (int l : test.labels) ++parsed[static_cast<std::size_t>(l)];
    CHECK(parsed == oracle);
    CHECK(parsed == std::array<int, 10>{980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009});

    const auto train = load_mnist(dir, "train");
    CHECK(train.size() == 60000);
    CHECK(train.checksum != test.checksum);
  }
}
