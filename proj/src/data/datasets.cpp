#include "advlab/data.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "advlab/error.hpp"
#include "advlab/hash.hpp"

namespace advlab {
namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t offset, const std::string& file) {
  if (offset + 4 > b.size()) throw ParseError(file + ": truncated header", b.size());
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

void hash_bytes(Fnv1a64& h, const std::vector<unsigned char>& b) {
  h.update(std::as_bytes(std::span(b.data(), b.size())));
}

}  // namespace

Shape LabeledDataset::sample_shape() const {
  const Shape& s = images.shape();
  return Shape(s.begin() + 1, s.end());
}

LabeledDataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                              std::string split) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  const std::string in = images.string(), ln = labels.string();

  if (be32(img, 0, in) != 0x803) throw ParseError(in + ": bad magic, expected 0x00000803", 0);
  if (be32(lab, 0, ln) != 0x801) throw ParseError(ln + ": bad magic, expected 0x00000801", 0);
  const std::size_t n = be32(img, 4, in), rows = be32(img, 8, in), cols = be32(img, 12, in);
  const std::size_t nl = be32(lab, 4, ln);
  if (n == 0 || rows == 0 || cols == 0) throw ParseError(in + ": zero-sized dimension", 4);
  if (nl != n) throw ParseError(ln + ": " + std::to_string(nl) + " labels for " + std::to_string(n) + " images", 4);
  const std::size_t pixels = n * rows * cols;
  if (img.size() != 16 + pixels) {
    throw ParseError(in + ": expected " + std::to_string(16 + pixels) + " bytes, found " + std::to_string(img.size()),
                     std::min(img.size(), 16 + pixels));
  }
  if (lab.size() != 8 + n) {
    throw ParseError(ln + ": expected " + std::to_string(8 + n) + " bytes, found " + std::to_string(lab.size()),
                     std::min(lab.size(), 8 + n));
  }

  LabeledDataset d;
  d.name = "mnist";
  d.split = std::move(split);
  d.images = Tensor({n, 1, rows, cols});
  auto px = d.images.data();
  for (std::size_t i = 0; i < pixels; ++i) px[i] = img[16 + i] / 255.0;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (lab[8 + i] > 9) throw ParseError(ln + ": label " + std::to_string(lab[8 + i]) + " out of range", 8 + i);
    d.labels[i] = lab[8 + i];
  }
  Fnv1a64 h;
  hash_bytes(h, img);
  hash_bytes(h, lab);
  d.checksum = h.hex();
  return d;
}

LabeledDataset load_mnist(const std::filesystem::path& dir, const std::string& split) {
  std::string prefix;
  if (split == "train") {
    prefix = "train";
  } else if (split == "test") {
    prefix = "t10k";
  } else {
    throw ConfigError("unknown MNIST split '" + split + "' (expected train or test)");
  }
  return load_mnist_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"), split);
}

LabeledDataset load_cifar10_bin(const std::vector<std::filesystem::path>& files, std::string split) {
  constexpr std::size_t kRecord = 3073, kPixels = 3072;
  if (files.empty()) throw ConfigError("no CIFAR-10 batch files given");
  std::vector<std::vector<unsigned char>> raw;
  std::size_t n = 0;
  for (const auto& f : files) {
    raw.push_back(read_file(f));
    const std::size_t len = raw.back().size();
    if (len == 0 || len % kRecord != 0) {
      throw ParseError(f.string() + ": length " + std::to_string(len) + " is not a positive multiple of 3073",
                       len - len % kRecord);
    }
    n += len / kRecord;
  }

  LabeledDataset d;
  d.name = "cifar10";
  d.split = std::move(split);
  d.images = Tensor({n, 3, 32, 32});
  d.labels.resize(n);
  auto px = d.images.data();
  Fnv1a64 h;
  std::size_t row = 0;
  for (std::size_t fi = 0; fi < raw.size(); ++fi) {
    const auto& b = raw[fi];
    hash_bytes(h, b);
    for (std::size_t off = 0; off < b.size(); off += kRecord, ++row) {
      if (b[off] > 9) {
        throw ParseError(files[fi].string() + ": label " + std::to_string(b[off]) + " out of range", off);
      }
      d.labels[row] = b[off];
      for (std::size_t k = 0; k < kPixels; ++k) px[row * kPixels + k] = b[off + 1 + k] / 255.0;
    }
  }
  d.checksum = h.hex();
  return d;
}

LabeledDataset slice(const LabeledDataset& d, std::size_t begin, std::size_t end) {
  if (begin >= end || end > d.size()) {
    throw ContractError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside dataset of " +
                        std::to_string(d.size()));
  }
  LabeledDataset out = d;
  out.images = d.images.rows(begin, end);
  out.labels.assign(d.labels.begin() + begin, d.labels.begin() + end);
  return out;
}

LabeledDataset seeded_subset(const LabeledDataset& d, std::size_t n, std::uint64_t seed) {
  if (n >= d.size()) return d;
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  LabeledDataset out = d;
  out.images = d.images.gather_rows(idx);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = d.labels[idx[i]];
  return out;
}

}  // namespace advlab
