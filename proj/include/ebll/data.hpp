#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ebll/tensor.hpp"

namespace ebll::data {

enum class Split { Train, Val, Test };
const char* to_string(Split s);

/// Stable id of one (possibly augmented) sample.
std::uint64_t sample_id(int task_id, std::size_t origin, std::size_t variant);

/// Samples of one task and one split, stored as a row-major batch.
struct Dataset {
  int task_id = 0;
  Split split = Split::Train;
  std::size_t class_count = 0;
  Tensor inputs;                     // [n x input_dim]
  std::vector<std::size_t> labels;   // n
  std::vector<std::size_t> origins;  // index of the un-augmented source sample
  std::vector<std::size_t> variants; // augmentation index, 0 = identity
  std::vector<std::uint64_t> ids;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t input_dim() const noexcept { return inputs.cols(); }
  void validate() const;
};

struct TaskData {
  Dataset train;
  Dataset val;  // may be empty
  Dataset test;
};

struct SyntheticSpec {
  std::size_t input_dim = 16;
  std::size_t class_count = 8;
  std::size_t samples_per_class = 300;
  double test_fraction = 1.0 / 3.0;
  double val_fraction = 0.0;
  /// Standard deviation of each class cluster around its mean.
  double cluster_spread = 1.0;
  /// Scale of the base task's class means (per-coordinate standard deviation).
  double mean_scale = 1.0;
  /// 1 keeps the previous task's means; 0 uses a random rotation plus shift of them.
  double relatedness = 0.6;
  std::uint64_t rng_seed = 1;

  void validate() const;
};

/// Gaussian-cluster classification tasks. Task k+1's class means interpolate
/// between task k's means and a seeded random rotation+shift of them.
std::vector<TaskData> gen_synthetic_sequence(std::span<const SyntheticSpec> specs);

/// Specs of the default synthetic benchmark; task k (0-based) uses rng_seed = seed * 100 + k.
std::vector<SyntheticSpec> benchmark_specs(std::uint64_t seed, std::size_t task_count = 3,
                                           const SyntheticSpec& base = {});

/// Class means used by gen_synthetic_sequence, one [class_count x input_dim] tensor per task.
std::vector<Tensor> synthetic_class_means(std::span<const SyntheticSpec> specs);

class IdxError : public std::runtime_error {
public:
  enum class Kind { Io, Magic, Truncated, CountMismatch };
  IdxError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

/// Read an IDX image file (magic 00 00 08 03) and label file (00 00 08 01).
/// Pixels are scaled to [0, 1] and flattened row-major.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, int task_id = 0,
                 Split split = Split::Train);

enum class AugmentMode {
  Jitter,
  /// Odd variants additionally reverse each block of `block_size` coordinates.
  FlipJitter,
};

struct AugmentSpec {
  std::size_t factor = 10;
  AugmentMode mode = AugmentMode::Jitter;
  /// Jitter is uniform in [-magnitude, magnitude] per coordinate.
  double magnitude = 0.1;
  std::size_t block_size = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Expand every sample into `factor` deterministic variants; variant 0 is the sample itself.
Dataset augment(const Dataset& ds, const AugmentSpec& spec);

/// Rows of a dataset in one training step.
struct Batch {
  Tensor inputs;
  std::vector<std::size_t> labels;
  std::vector<std::uint64_t> ids;
};

/// Seeded permutation of [0, n) cut into consecutive batches; the last may be short.
std::vector<std::vector<std::size_t>> batches(const Dataset& ds, std::size_t batch_size,
                                              std::uint64_t epoch_seed);
Batch gather(const Dataset& ds, std::span<const std::size_t> rows);

/// Only the identity variants of a dataset.
Dataset originals(const Dataset& ds);

}  // namespace ebll::data
