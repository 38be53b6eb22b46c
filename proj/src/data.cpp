#include "condgauss/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

namespace condgauss {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[offset_++];
    return v;
  }

  std::span<const unsigned char> take(std::size_t n) {
    need(n);
    std::span<const unsigned char> out(bytes_.data() + offset_, n);
    offset_ += n;
    return out;
  }

  [[nodiscard]] std::size_t offset() const { return offset_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - offset_ < n) {
      std::ostringstream msg;
      msg << name_ << ": truncated file, needed " << n << " bytes at byte offset " << offset_ << " but only "
          << bytes_.size() - offset_ << " remain";
      throw DataError(msg.str());
    }
  }

  const std::vector<unsigned char>& bytes_;
  std::string name_;
  std::size_t offset_ = 0;
};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

template <typename T>
std::uint64_t hash_values(std::span<const T> values, std::uint64_t seed) {
  return fnv1a({reinterpret_cast<const unsigned char*>(values.data()), values.size_bytes()}, seed);
}

}  // namespace

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t content_hash(const LabelledDataset& ds) {
  std::vector<int> labels(ds.labels.size());
  std::transform(ds.labels.begin(), ds.labels.end(), labels.begin(), [](ClassLabel y) { return y.value; });
  std::uint64_t h = hash_values(std::span<const double>(ds.inputs), 0xcbf29ce484222325ULL);
  return hash_values(std::span<const int>(labels), h);
}

LabelledDataset LabelledDataset::subset(std::span<const std::size_t> rows, SplitTag tag) const {
  LabelledDataset out;
  out.dim = dim;
  out.classes = classes;
  out.source_hash = source_hash;
  out.split = tag;
  out.inputs.reserve(rows.size() * dim);
  out.labels.reserve(rows.size());
  out.source_index.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= size()) throw std::out_of_range("subset row outside dataset");
    const auto x = input(r);
    out.inputs.insert(out.inputs.end(), x.begin(), x.end());
    out.labels.push_back(labels[r]);
    out.source_index.push_back(source_index[r]);
  }
  return out;
}

void LabelledDataset::validate() const {
  if (inputs.size() != labels.size() * dim) throw DataError("input and label counts disagree");
  if (source_index.size() != labels.size()) throw DataError("source index count disagrees with labels");
  if (classes < 2) throw DataError("need at least two classes");
  for (ClassLabel y : labels) {
    if (y.value < 1 || static_cast<std::size_t>(y.value) > classes) throw DataError("label outside 1..q");
  }
}

LabelledDataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img_bytes = read_file(images);
  const auto lab_bytes = read_file(labels);
  ByteReader img(img_bytes, images.filename().string());
  ByteReader lab(lab_bytes, labels.filename().string());

  if (const auto magic = img.u32(); magic != kImageMagic) {
    std::ostringstream msg;
    msg << images.string() << ": bad image magic 0x" << std::hex << magic;
    throw DataError(msg.str());
  }
  const std::size_t n_images = img.u32();
  const std::size_t rows = img.u32();
  const std::size_t cols = img.u32();

  if (const auto magic = lab.u32(); magic != kLabelMagic) {
    std::ostringstream msg;
    msg << labels.string() << ": bad label magic 0x" << std::hex << magic;
    throw DataError(msg.str());
  }
  const std::size_t n_labels = lab.u32();
  if (n_images != n_labels) {
    throw DataError("count mismatch: " + std::to_string(n_images) + " images vs " + std::to_string(n_labels) +
                    " labels");
  }

  LabelledDataset ds;
  ds.dim = rows * cols;
  const auto pixels = img.take(n_images * ds.dim);
  const auto codes = lab.take(n_labels);
  ds.inputs.resize(pixels.size());
  std::transform(pixels.begin(), pixels.end(), ds.inputs.begin(), [](unsigned char p) { return p / 255.0; });
  ds.labels.resize(n_labels);
  int max_code = 1;
  for (std::size_t k = 0; k < n_labels; ++k) {
    ds.labels[k] = ClassLabel{codes[k] + 1};
    max_code = std::max(max_code, static_cast<int>(codes[k]));
  }
  ds.classes = static_cast<std::size_t>(max_code) + 1;
  ds.source_index.resize(n_labels);
  std::iota(ds.source_index.begin(), ds.source_index.end(), std::size_t{0});
  ds.source_hash = content_hash(ds);
  ds.validate();
  return ds;
}

void write_idx(const LabelledDataset& ds, const std::filesystem::path& images, const std::filesystem::path& labels) {
  ds.validate();
  std::ofstream img(images, std::ios::binary);
  std::ofstream lab(labels, std::ios::binary);
  if (!img || !lab) throw DataError("cannot open IDX output files");
  put_u32(img, kImageMagic);
  put_u32(img, static_cast<std::uint32_t>(ds.size()));
  put_u32(img, 1);
  put_u32(img, static_cast<std::uint32_t>(ds.dim));
  std::vector<char> bytes(ds.inputs.size());
  std::transform(ds.inputs.begin(), ds.inputs.end(), bytes.begin(), [](double x) {
    return static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)));
  });
  img.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

  put_u32(lab, kLabelMagic);
  put_u32(lab, static_cast<std::uint32_t>(ds.size()));
  for (ClassLabel y : ds.labels) lab.put(static_cast<char>(y.value - 1));
  if (!img || !lab) throw DataError("failed writing IDX files");
}

std::uint64_t split_fingerprint(const LabelledDataset& prior, const LabelledDataset& bound) {
  auto sorted = [](std::vector<std::size_t> v) {
    std::sort(v.begin(), v.end());
    std::vector<std::uint64_t> w(v.begin(), v.end());
    return w;
  };
  const auto p = sorted(prior.source_index);
  const auto b = sorted(bound.source_index);
  const std::uint64_t header[3] = {bound.source_hash, p.size(), b.size()};
  std::uint64_t h = hash_values(std::span<const std::uint64_t>(header), 0xcbf29ce484222325ULL);
  h = hash_values(std::span<const std::uint64_t>(p), h);
  return hash_values(std::span<const std::uint64_t>(b), h);
}

PriorBoundSplit split_prior_bound(const LabelledDataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::domain_error("prior fraction must lie in (0,1)");
  const std::size_t n = ds.size();
  const auto n_prior = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n - n_prior < 8) throw DataError("bound split must keep at least 8 examples");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  RngStream rng = RngStream(seed).derive(StreamTag::kSplit);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> prior_rows(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_prior));
  std::vector<std::size_t> bound_rows(perm.begin() + static_cast<std::ptrdiff_t>(n_prior), perm.end());
  std::sort(prior_rows.begin(), prior_rows.end());
  std::sort(bound_rows.begin(), bound_rows.end());

  PriorBoundSplit out;
  out.prior = ds.subset(prior_rows, SplitTag::kPrior);
  out.bound = ds.subset(bound_rows, SplitTag::kBound);
  out.fingerprint = split_fingerprint(out.prior, out.bound);
  return out;
}

BlobGenerator::BlobGenerator(std::size_t classes, std::size_t dim, double separation, std::uint64_t seed)
    : classes_(classes), dim_(dim), separation_(separation), root_(RngStream(seed).derive(StreamTag::kData)) {
  if (classes < 2) throw std::invalid_argument("blobs need at least two classes");
  if (dim == 0) throw std::invalid_argument("blobs need dim >= 1");
  if (!(separation >= 0.0)) throw std::invalid_argument("separation must be non-negative");
  RngStream rng = root_.derive({0});
  means_.assign(classes * dim, 0.0);
  if (dim >= classes) {
    // Each class owns a seeded block of coordinates, so the directions are
    // orthonormal and nonnegative (sparse, stroke-like inputs).
    std::vector<std::size_t> coords(dim);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    std::shuffle(coords.begin(), coords.end(), rng);
    for (std::size_t k = 0; k < dim; ++k) means_[(k % classes) * dim + coords[k]] = 1.0;
  } else {
    for (double& x : means_) x = std::abs(rng.normal());
  }
  for (std::size_t c = 0; c < classes; ++c) {
    std::span<double> v(means_.data() + c * dim, dim);
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    for (double& x : v) x *= separation / norm;
  }
}

LabelledDataset BlobGenerator::sample(std::size_t per_class, std::uint64_t draw) const {
  RngStream rng = root_.derive({1, draw});
  // Unit-variance noise around the means, then x = clamp(raw / (peak + 3), 0, 1).
  const double peak = *std::max_element(means_.begin(), means_.end());
  const double scale = 1.0 / (peak + 3.0);
  LabelledDataset ds;
  ds.dim = dim_;
  ds.classes = classes_;
  ds.inputs.reserve(per_class * classes_ * dim_);
  for (std::size_t k = 0; k < per_class; ++k) {
    for (std::size_t c = 0; c < classes_; ++c) {
      for (std::size_t j = 0; j < dim_; ++j) {
        const double raw = means_[c * dim_ + j] + rng.normal();
        ds.inputs.push_back(std::clamp(raw * scale, 0.0, 1.0));
      }
      ds.labels.push_back(ClassLabel::from_index(c));
    }
  }
  ds.source_index.resize(ds.labels.size());
  std::iota(ds.source_index.begin(), ds.source_index.end(), std::size_t{0});
  ds.source_hash = content_hash(ds);
  return ds;
}

LabelledDataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double separation,
                            std::uint64_t seed) {
  return BlobGenerator(classes, dim, separation, seed).sample(per_class, 0);
}

}  // namespace condgauss
