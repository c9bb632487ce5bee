#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advlab/error.hpp"
#include "advlab/tensor.hpp"

namespace advlab {

// Images in [0, 1], shape [N, C, H, W]; labels in [0, num_classes).
struct LabeledDataset {
  Tensor images;
  std::vector<int> labels;
  std::string name;
  std::string split;
  // FNV-1a 64 over the raw source bytes (images file, then labels file).
  std::string checksum;
  std::size_t num_classes = 10;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const;
};

// IDX pair: images magic 0x00000803, labels magic 0x00000801, big-endian
// headers. Pixels are divided by 255. Malformed input throws ParseError
// carrying the byte offset of the first bad field.
LabeledDataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                              std::string split = "");

// Standard file names under `dir`: train-*-idx?-ubyte or t10k-*.
LabeledDataset load_mnist(const std::filesystem::path& dir, const std::string& split);

// Concatenated 3073-byte records: one label byte, then 3x32x32 CHW pixels.
LabeledDataset load_cifar10_bin(const std::vector<std::filesystem::path>& files, std::string split = "");

// Rows [begin, end).
LabeledDataset slice(const LabeledDataset& d, std::size_t begin, std::size_t end);
// `n` distinct samples chosen by a seeded shuffle, kept in original order.
// n >= size returns a copy.
LabeledDataset seeded_subset(const LabeledDataset& d, std::size_t n, std::uint64_t seed);

// Attack budgets are given on the 0..255 pixel scale.
// Negative or non-finite budgets are a ContractError.
constexpr double epsilon_to_unit(double eps255) {
  if (!(eps255 >= 0.0) || eps255 > 1e300) throw ContractError("epsilon must be a finite value >= 0");
  return eps255 / 255.0;
}

}  // namespace advlab
