#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "condgauss/gaussian.hpp"
#include "condgauss/rng.hpp"

namespace condgauss {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SplitTag { kWhole, kPrior, kBound };

/// Inputs in [0,1]^dim stored row-major, labels 1..classes.
struct LabelledDataset {
  std::size_t dim = 0;
  std::size_t classes = 0;
  std::vector<double> inputs;
  std::vector<ClassLabel> labels;
  /// Position of every example in the originating dataset.
  std::vector<std::size_t> source_index;
  /// Content hash of the originating dataset.
  std::uint64_t source_hash = 0;
  SplitTag split = SplitTag::kWhole;

  [[nodiscard]] std::size_t size() const { return labels.size(); }
  [[nodiscard]] std::span<const double> input(std::size_t k) const { return {inputs.data() + k * dim, dim}; }
  [[nodiscard]] LabelledDataset subset(std::span<const std::size_t> rows, SplitTag tag) const;
  /// Throws DataError when counts or label ranges are inconsistent.
  void validate() const;
};

/// FNV-1a over raw bytes.
std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t content_hash(const LabelledDataset& ds);

/// Parses the big-endian IDX pair used by MNIST (images 0x00000803, labels
/// 0x00000801). Pixels are scaled by 1/255; file labels 0..K-1 become 1..K.
LabelledDataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
/// Writes the same layout (each input as a 1 x dim image, values quantized to bytes).
void write_idx(const LabelledDataset& ds, const std::filesystem::path& images, const std::filesystem::path& labels);

struct PriorBoundSplit {
  LabelledDataset prior;
  LabelledDataset bound;
  std::uint64_t fingerprint = 0;
};

/// Seeded permutation split: round(fraction * n) examples go to the prior set.
PriorBoundSplit split_prior_bound(const LabelledDataset& ds, double fraction, std::uint64_t seed);
/// Hash of the index partition (prior, bound) and the source dataset.
std::uint64_t split_fingerprint(const LabelledDataset& prior, const LabelledDataset& bound);

/// Gaussian blobs with class means on a seeded simplex scaled by `separation`,
/// unit noise, then mapped affinely into [0,1]^dim.
class BlobGenerator {
 public:
  BlobGenerator(std::size_t classes, std::size_t dim, double separation, std::uint64_t seed);

  /// `draw` selects an independent sample from the same class-conditional laws.
  [[nodiscard]] LabelledDataset sample(std::size_t per_class, std::uint64_t draw) const;
  [[nodiscard]] const std::vector<double>& means() const { return means_; }

 private:
  std::size_t classes_;
  std::size_t dim_;
  double separation_;
  RngStream root_;
  std::vector<double> means_;
};

LabelledDataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double separation,
                            std::uint64_t seed);

}  // namespace condgauss
