#include "ebll/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "ebll/rng.hpp"

namespace ebll::data {

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::uint64_t sample_id(int task_id, std::size_t origin, std::size_t variant) {
  return derive_seed(0x45424c4cULL, {static_cast<std::uint64_t>(task_id), origin, variant});
}

void Dataset::validate() const {
  const std::size_t n = labels.size();
  if (origins.size() != n || variants.size() != n || ids.size() != n || (n > 0 && inputs.rows() != n)) {
    throw DimensionError("dataset columns have inconsistent lengths");
  }
  for (auto y : labels) {
    if (y >= class_count) throw std::invalid_argument("dataset label out of range");
  }
}

void SyntheticSpec::validate() const {
  if (input_dim == 0) throw std::invalid_argument("synthetic: input_dim must be positive");
  if (class_count < 2) throw std::invalid_argument("synthetic: class_count must be >= 2");
  if (samples_per_class < 2) throw std::invalid_argument("synthetic: samples_per_class must be >= 2 to split");
  if (!(test_fraction > 0.0 && val_fraction >= 0.0 && test_fraction + val_fraction < 1.0)) {
    throw std::invalid_argument("synthetic: split fractions must leave room for train and test");
  }
  if (!(cluster_spread >= 0.0) || !(mean_scale > 0.0)) {
    throw std::invalid_argument("synthetic: cluster_spread must be >= 0 and mean_scale > 0");
  }
  if (!(relatedness >= 0.0 && relatedness <= 1.0)) throw std::invalid_argument("synthetic: relatedness must be in [0, 1]");
}

namespace {

Eigen::MatrixXd random_rotation(std::size_t d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  return q;
}

struct SplitCounts {
  std::size_t train, val, test;
};

SplitCounts split_counts(const SyntheticSpec& s) {
  const auto n = s.samples_per_class;
  std::size_t test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(s.test_fraction * n)));
  std::size_t val = static_cast<std::size_t>(std::llround(s.val_fraction * n));
  if (test + val >= n) throw std::invalid_argument("synthetic: samples_per_class too small for the split");
  return {n - test - val, val, test};
}

Dataset empty_split(int task, Split split, std::size_t classes, std::size_t n, std::size_t dim) {
  Dataset ds;
  ds.task_id = task;
  ds.split = split;
  ds.class_count = classes;
  if (n > 0) ds.inputs = Tensor({n, dim});
  ds.labels.reserve(n);
  ds.origins.reserve(n);
  ds.variants.reserve(n);
  ds.ids.reserve(n);
  return ds;
}

}  // namespace

std::vector<Tensor> synthetic_class_means(std::span<const SyntheticSpec> specs) {
  if (specs.empty()) throw std::invalid_argument("synthetic: at least one task spec is required");
  std::vector<Tensor> means;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const auto& s = specs[k];
    s.validate();
    Rng rng(derive_seed(s.rng_seed, {0x6d65616eULL, k}));
    std::normal_distribution<double> normal(0.0, s.mean_scale);
    Tensor m({s.class_count, s.input_dim});
    if (k == 0) {
      for (double& v : m.data()) v = normal(rng);
    } else {
      const Tensor& prev = means.back();
      if (prev.rows() != s.class_count || prev.cols() != s.input_dim) {
        throw std::invalid_argument("synthetic: derived tasks must keep input_dim and class_count");
      }
      const Eigen::MatrixXd q = random_rotation(s.input_dim, rng);
      Eigen::VectorXd shift(static_cast<Eigen::Index>(s.input_dim));
      for (Eigen::Index i = 0; i < shift.size(); ++i) shift(i) = normal(rng);
      for (std::size_t c = 0; c < s.class_count; ++c) {
        Eigen::Map<const Eigen::VectorXd> p(prev.row(c).data(), static_cast<Eigen::Index>(s.input_dim));
        const Eigen::VectorXd moved = q * p + shift;
        for (std::size_t i = 0; i < s.input_dim; ++i) {
          const auto ii = static_cast<Eigen::Index>(i);
          m.at(c, i) = s.relatedness * p(ii) + (1.0 - s.relatedness) * moved(ii);
        }
      }
    }
    means.push_back(std::move(m));
  }
  return means;
}

std::vector<SyntheticSpec> benchmark_specs(std::uint64_t seed, std::size_t task_count, const SyntheticSpec& base) {
  std::vector<SyntheticSpec> specs(task_count, base);
  for (std::size_t k = 0; k < task_count; ++k) specs[k].rng_seed = seed * 100 + k;
  return specs;
}

std::vector<TaskData> gen_synthetic_sequence(std::span<const SyntheticSpec> specs) {
  const auto means = synthetic_class_means(specs);
  std::vector<TaskData> tasks;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const auto& s = specs[k];
    const int task = static_cast<int>(k) + 1;
    const auto counts = split_counts(s);
    const std::size_t d = s.input_dim;
    TaskData td{empty_split(task, Split::Train, s.class_count, counts.train * s.class_count, d),
                empty_split(task, Split::Val, s.class_count, counts.val * s.class_count, d),
                empty_split(task, Split::Test, s.class_count, counts.test * s.class_count, d)};

    Rng rng(derive_seed(s.rng_seed, {0x73616d70ULL, k}));
    std::normal_distribution<double> normal(0.0, 1.0);
    // Origins are numbered across all splits of the task so ids never collide.
    std::size_t origin = 0;
    auto emit = [&](Dataset& ds, std::size_t per_class) {
      for (std::size_t i = 0; i < per_class; ++i) {
        for (std::size_t c = 0; c < s.class_count; ++c) {
          auto row = ds.inputs.row(ds.labels.size());
          for (std::size_t j = 0; j < d; ++j) row[j] = means[k].at(c, j) + s.cluster_spread * normal(rng);
          ds.labels.push_back(c);
          ds.origins.push_back(origin);
          ds.variants.push_back(0);
          ds.ids.push_back(sample_id(task, origin, 0));
          ++origin;
        }
      }
    };
    emit(td.train, counts.train);
    emit(td.val, counts.val);
    emit(td.test, counts.test);
    tasks.push_back(std::move(td));
  }
  return tasks;
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::Io, "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void check_magic(const std::vector<unsigned char>& b, unsigned char dims, const std::filesystem::path& p) {
  if (b.size() < 4) throw IdxError(IdxError::Kind::Truncated, p.string() + ": shorter than the IDX magic");
  if (b[0] != 0 || b[1] != 0 || b[2] != 0x08 || b[3] != dims) {
    throw IdxError(IdxError::Kind::Magic, p.string() + ": bad IDX magic (expected unsigned-byte data with " +
                                              std::to_string(dims) + " dimensions)");
  }
  if (b.size() < 4 + 4 * std::size_t{dims}) {
    throw IdxError(IdxError::Kind::Truncated, p.string() + ": truncated IDX header");
  }
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, int task_id,
                 Split split) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  check_magic(img, 0x03, images);
  check_magic(lab, 0x01, labels);

  const std::size_t n = read_be32(img, 4);
  const std::size_t rows = read_be32(img, 8);
  const std::size_t cols = read_be32(img, 12);
  const std::size_t n_labels = read_be32(lab, 4);
  if (n != n_labels) {
    throw IdxError(IdxError::Kind::CountMismatch, "IDX count mismatch: " + std::to_string(n) + " images vs " +
                                                      std::to_string(n_labels) + " labels");
  }
  const std::size_t pixels = rows * cols;
  if (n == 0 || pixels == 0) throw IdxError(IdxError::Kind::Truncated, images.string() + ": empty IDX payload");
  if (img.size() < 16 + n * pixels) throw IdxError(IdxError::Kind::Truncated, images.string() + ": truncated payload");
  if (lab.size() < 8 + n) throw IdxError(IdxError::Kind::Truncated, labels.string() + ": truncated payload");

  Dataset ds = empty_split(task_id, split, 0, n, pixels);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = ds.inputs.row(i);
    for (std::size_t j = 0; j < pixels; ++j) row[j] = static_cast<double>(img[16 + i * pixels + j]) / 255.0;
    const std::size_t y = lab[8 + i];
    max_label = std::max(max_label, y);
    ds.labels.push_back(y);
    ds.origins.push_back(i);
    ds.variants.push_back(0);
    ds.ids.push_back(sample_id(task_id, i, 0));
  }
  ds.class_count = std::max<std::size_t>(2, max_label + 1);
  return ds;
}

void AugmentSpec::validate() const {
  if (factor == 0) throw std::invalid_argument("augment: factor must be >= 1");
  if (!(magnitude >= 0.0)) throw std::invalid_argument("augment: magnitude must be >= 0");
  if (block_size == 0) throw std::invalid_argument("augment: block_size must be >= 1");
}

Dataset augment(const Dataset& ds, const AugmentSpec& spec) {
  spec.validate();
  if (spec.factor == 1 || ds.size() == 0) return ds;
  const std::size_t n = ds.size();
  const std::size_t d = ds.input_dim();
  Dataset out = empty_split(ds.task_id, ds.split, ds.class_count, n * spec.factor, d);
  std::uniform_real_distribution<double> jitter(-spec.magnitude, spec.magnitude);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = ds.inputs.row(i);
    for (std::size_t v = 0; v < spec.factor; ++v) {
      auto dst = out.inputs.row(out.labels.size());
      std::copy(src.begin(), src.end(), dst.begin());
      if (v > 0) {
        if (spec.mode == AugmentMode::FlipJitter && v % 2 == 1) {
          for (std::size_t b = 0; b < d; b += spec.block_size) {
            std::reverse(dst.begin() + static_cast<std::ptrdiff_t>(b),
                         dst.begin() + static_cast<std::ptrdiff_t>(std::min(d, b + spec.block_size)));
          }
        }
        Rng rng(derive_seed(spec.seed, Stream::Augment, {ds.ids[i], v}));
        for (double& x : dst) x += jitter(rng);
      }
      out.labels.push_back(ds.labels[i]);
      out.origins.push_back(ds.origins[i]);
      out.variants.push_back(v);
      out.ids.push_back(sample_id(ds.task_id, ds.origins[i], v));
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> batches(const Dataset& ds, std::size_t batch_size,
                                              std::uint64_t epoch_seed) {
  if (batch_size == 0) throw std::invalid_argument("batches: batch_size must be >= 1");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(epoch_seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto stop = std::min(order.size(), start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return out;
}

Batch gather(const Dataset& ds, std::span<const std::size_t> rows) {
  Batch b{Tensor({rows.size(), ds.input_dim()}), {}, {}};
  b.labels.reserve(rows.size());
  b.ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = ds.inputs.row(rows[i]);
    std::copy(src.begin(), src.end(), b.inputs.row(i).begin());
    b.labels.push_back(ds.labels[rows[i]]);
    b.ids.push_back(ds.ids[rows[i]]);
  }
  return b;
}

Dataset originals(const Dataset& ds) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.variants[i] == 0) keep.push_back(i);
  }
  if (keep.size() == ds.size()) return ds;
  Dataset out = empty_split(ds.task_id, ds.split, ds.class_count, keep.size(), ds.input_dim());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const auto src = ds.inputs.row(keep[i]);
    std::copy(src.begin(), src.end(), out.inputs.row(i).begin());
    out.labels.push_back(ds.labels[keep[i]]);
    out.origins.push_back(ds.origins[keep[i]]);
    out.variants.push_back(0);
    out.ids.push_back(ds.ids[keep[i]]);
  }
  return out;
}

}  // namespace ebll::data
