#pragma once

// Small task sequences and configs that train in well under a second.

#include <vector>

#include "ebll/data.hpp"
#include "ebll/lifelong.hpp"

namespace fixture {

inline ebll::lifelong::SequenceConfig tiny_config(std::uint64_t seed = 1) {
  ebll::lifelong::SequenceConfig cfg;
  cfg.seed = seed;
  cfg.architecture.input_dim = 6;
  cfg.architecture.feature_widths = {12, 12};
  cfg.architecture.shared_widths = {8};
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.lr_drop_epochs = {3};
  cfg.code_dim = 3;
  cfg.default_alpha = 1.0;
  cfg.autoencoder.lambda = 1.0;
  cfg.autoencoder.max_epochs = 12;
  cfg.augment.factor = 2;
  return cfg;
}

inline std::vector<ebll::data::TaskData> tiny_tasks(std::size_t count = 2, std::uint64_t seed = 1) {
  ebll::data::SyntheticSpec base;
  base.input_dim = 6;
  base.class_count = 3;
  base.samples_per_class = 24;
  const auto specs = ebll::data::benchmark_specs(seed, count, base);
  return ebll::data::gen_synthetic_sequence(specs);
}

}  // namespace fixture
