#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ebll/data.hpp"
#include "ebll/lifelong.hpp"

namespace ebll::config {

/// Invalid or unparsable configuration. `field()` is "section.key" when the
/// problem is tied to one entry.
class ConfigError : public std::runtime_error {
public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

private:
  std::string field_;
};

enum class DataSource { Synthetic, Idx };

struct IdxTask {
  std::filesystem::path images;
  std::filesystem::path labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
};

struct AnalysisConfig {
  std::size_t trials = 100;
  std::size_t samples_per_trial = 50;
  std::size_t max_pairs = 2500;
  /// Task whose checkpoint and autoencoder are analysed.
  int task = 1;
};

struct RunConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  lifelong::Strategy strategy = lifelong::Strategy::EBLL;
  std::filesystem::path output_dir = "runs";
  lifelong::SequenceConfig sequence{};

  DataSource source = DataSource::Synthetic;
  std::size_t task_count = 3;
  data::SyntheticSpec synthetic{};
  /// Seed of the synthetic tasks; the experiment seed when unset.
  std::optional<std::uint64_t> data_seed;
  std::vector<IdxTask> idx_tasks;

  AnalysisConfig analysis{};

  /// Replace the experiment seed (the run and, when not pinned, the data).
  void set_seed(std::uint64_t s);
};

/// Parse INI text. Relative paths resolve against `base_dir`.
RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// Datasets described by the config, in task order.
std::vector<data::TaskData> build_tasks(const RunConfig& cfg);

/// Human-readable listing of every section and key with its type and default.
std::string schema_description();

}  // namespace ebll::config
