#include "ebll/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace ebll::config {

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  sequence.seed = s;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_uint(const std::string& raw, const std::string& field, std::uint64_t min = 0) {
  const std::string v = trim(raw);
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || end != v.data() + v.size()) {
    throw ConfigError(field, "expected a non-negative integer, got '" + v + "'");
  }
  if (out < min) throw ConfigError(field, "must be >= " + std::to_string(min));
  return out;
}

double to_real(const std::string& raw, const std::string& field) {
  const std::string v = trim(raw);
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || end != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(field, "expected a finite number, got '" + v + "'");
  }
  return out;
}

double to_real_in(const std::string& raw, const std::string& field, double lo, double hi) {
  const double v = to_real(raw, field);
  if (v < lo || v > hi) {
    std::ostringstream msg;
    msg << "must lie in [" << lo << ", " << hi << "], got " << v;
    throw ConfigError(field, msg.str());
  }
  return v;
}

double to_positive(const std::string& raw, const std::string& field) {
  const double v = to_real(raw, field);
  if (!(v > 0.0)) throw ConfigError(field, "must be > 0");
  return v;
}

bool to_bool(const std::string& raw, const std::string& field) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(field, "expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> out;
  const std::string v = trim(raw);
  if (v.empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<std::size_t> to_widths(const std::string& raw, const std::string& field) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(raw)) out.push_back(to_uint(item, field, 1));
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& value, const std::string& field)>;

struct Field {
  const char* type;
  const char* default_value;
  Setter set;
};

using Schema = std::map<std::string, std::map<std::string, Field>>;

const Schema& schema() {
  static const Schema s = [] {
    Schema m;
    auto& ex = m["experiment"];
    ex["name"] = {"string", "experiment", [](RunConfig& c, const std::string& v, const std::string& f) {
                    c.name = trim(v);
                    if (c.name.empty()) throw ConfigError(f, "must not be empty");
                  }};
    ex["seed"] = {"integer (required)", "", [](RunConfig& c, const std::string& v, const std::string& f) {
                    c.set_seed(to_uint(v, f));
                  }};
    ex["strategy"] = {"finetune|feature_extraction|lwf|ebll|ebll_separate_fcs|joint", "ebll",
                      [](RunConfig& c, const std::string& v, const std::string& f) {
                        try {
                          c.strategy = lifelong::parse_strategy(trim(v));
                        } catch (const std::exception& e) {
                          throw ConfigError(f, e.what());
                        }
                      }};
    ex["output_dir"] = {"path", "runs", [](RunConfig& c, const std::string& v, const std::string&) {
                          c.output_dir = trim(v);
                        }};

    auto& ar = m["architecture"];
    ar["input_dim"] = {"integer >= 1", "16", [](RunConfig& c, const std::string& v, const std::string& f) {
                         c.sequence.architecture.input_dim = to_uint(v, f, 1);
                       }};
    ar["feature_widths"] = {"comma list of integers >= 1, non-empty", "64,64",
                            [](RunConfig& c, const std::string& v, const std::string& f) {
                              c.sequence.architecture.feature_widths = to_widths(v, f);
                              if (c.sequence.architecture.feature_widths.empty()) {
                                throw ConfigError(f, "needs at least one layer");
                              }
                            }};
    ar["shared_widths"] = {"comma list of integers >= 1", "32",
                           [](RunConfig& c, const std::string& v, const std::string& f) {
                             c.sequence.architecture.shared_widths = to_widths(v, f);
                           }};
    ar["head_hidden_widths"] = {"comma list of integers >= 1", "",
                                [](RunConfig& c, const std::string& v, const std::string& f) {
                                  c.sequence.architecture.head_hidden_widths = to_widths(v, f);
                                }};

    auto& sg = m["sgd"];
    sg["learning_rate"] = {"real > 0", "0.05", [](RunConfig& c, const std::string& v, const std::string& f) {
                             c.sequence.sgd.learning_rate = to_positive(v, f);
                           }};
    sg["momentum"] = {"real in [0,1)", "0.9", [](RunConfig& c, const std::string& v, const std::string& f) {
                        c.sequence.sgd.momentum = to_real_in(v, f, 0.0, 0.999999);
                      }};
    sg["weight_decay"] = {"real >= 0", "5e-4", [](RunConfig& c, const std::string& v, const std::string& f) {
                            c.sequence.sgd.weight_decay = to_real_in(v, f, 0.0, 1.0);
                          }};
    sg["lr_drop_epochs"] = {"comma list of integers >= 1", "30",
                            [](RunConfig& c, const std::string& v, const std::string& f) {
                              c.sequence.lr_drop_epochs = to_widths(v, f);
                            }};
    sg["lr_drop_factor"] = {"real in (0,1]", "0.1", [](RunConfig& c, const std::string& v, const std::string& f) {
                              c.sequence.lr_drop_factor = to_real_in(v, f, 1e-12, 1.0);
                            }};

    auto& tr = m["training"];
    tr["epochs"] = {"integer >= 1", "40", [](RunConfig& c, const std::string& v, const std::string& f) {
                      c.sequence.epochs = to_uint(v, f, 1);
                    }};
    tr["batch_size"] = {"integer >= 1", "32", [](RunConfig& c, const std::string& v, const std::string& f) {
                          c.sequence.batch_size = to_uint(v, f, 1);
                        }};

    auto& ll = m["lifelong"];
    ll["theta"] = {"real > 0", "2", [](RunConfig& c, const std::string& v, const std::string& f) {
                     c.sequence.theta = to_positive(v, f);
                   }};
    ll["alphas"] = {"comma list of reals >= 0, one per task", "",
                    [](RunConfig& c, const std::string& v, const std::string& f) {
                      c.sequence.alphas.clear();
                      for (const auto& item : split_list(v)) {
                        const double a = to_real(item, f);
                        if (a < 0.0) throw ConfigError(f, "entries must be >= 0");
                        c.sequence.alphas.push_back(a);
                      }
                    }};
    ll["default_alpha"] = {"real >= 0", "0.01", [](RunConfig& c, const std::string& v, const std::string& f) {
                             const double a = to_real(v, f);
                             if (a < 0.0) throw ConfigError(f, "must be >= 0");
                             c.sequence.default_alpha = a;
                           }};

    auto& ae = m["autoencoder"];
    ae["code_dim"] = {"integer, 0 = feature width / 4", "0",
                      [](RunConfig& c, const std::string& v, const std::string& f) {
                        c.sequence.code_dim = to_uint(v, f);
                      }};
    ae["lambda"] = {"real > 0", "1e-6", [](RunConfig& c, const std::string& v, const std::string& f) {
                      c.sequence.autoencoder.lambda = to_positive(v, f);
                    }};
    ae["reconstruction"] = {"squared|norm", "squared",
                            [](RunConfig& c, const std::string& v, const std::string& f) {
                              const std::string s = trim(v);
                              if (s == "squared") {
                                c.sequence.autoencoder.reconstruction = ae::ReconstructionLoss::SquaredHalf;
                              } else if (s == "norm") {
                                c.sequence.autoencoder.reconstruction = ae::ReconstructionLoss::Norm;
                              } else {
                                throw ConfigError(f, "expected squared or norm, got '" + s + "'");
                              }
                            }};
    ae["batch_size"] = {"integer >= 1", "32", [](RunConfig& c, const std::string& v, const std::string& f) {
                          c.sequence.autoencoder.batch_size = to_uint(v, f, 1);
                        }};
    ae["stop_window"] = {"integer >= 1", "5", [](RunConfig& c, const std::string& v, const std::string& f) {
                           c.sequence.autoencoder.stop_window = to_uint(v, f, 1);
                         }};
    ae["stop_tolerance"] = {"real >= 0", "1e-3", [](RunConfig& c, const std::string& v, const std::string& f) {
                              c.sequence.autoencoder.stop_tolerance = to_real_in(v, f, 0.0, 1.0);
                            }};
    ae["max_epochs"] = {"integer >= stop_window", "200",
                        [](RunConfig& c, const std::string& v, const std::string& f) {
                          c.sequence.autoencoder.max_epochs = to_uint(v, f, 1);
                        }};
    ae["rho"] = {"real in (0,1)", "0.95", [](RunConfig& c, const std::string& v, const std::string& f) {
                   c.sequence.autoencoder.optimizer.rho = to_real_in(v, f, 1e-12, 1.0 - 1e-12);
                 }};
    ae["epsilon"] = {"real > 0", "1e-6", [](RunConfig& c, const std::string& v, const std::string& f) {
                       c.sequence.autoencoder.optimizer.epsilon = to_positive(v, f);
                     }};
    ae["on_augmented"] = {"bool", "false", [](RunConfig& c, const std::string& v, const std::string& f) {
                            c.sequence.autoencoder_on_augmented = to_bool(v, f);
                          }};

    auto& da = m["data"];
    da["source"] = {"synthetic|idx", "synthetic", [](RunConfig& c, const std::string& v, const std::string& f) {
                      const std::string s = trim(v);
                      if (s == "synthetic") {
                        c.source = DataSource::Synthetic;
                      } else if (s == "idx") {
                        c.source = DataSource::Idx;
                      } else {
                        throw ConfigError(f, "expected synthetic or idx, got '" + s + "'");
                      }
                    }};
    da["tasks"] = {"integer >= 1", "3", [](RunConfig& c, const std::string& v, const std::string& f) {
                     c.task_count = to_uint(v, f, 1);
                   }};
    da["class_count"] = {"integer >= 2", "8", [](RunConfig& c, const std::string& v, const std::string& f) {
                           c.synthetic.class_count = to_uint(v, f, 2);
                         }};
    da["samples_per_class"] = {"integer >= 2", "300",
                               [](RunConfig& c, const std::string& v, const std::string& f) {
                                 c.synthetic.samples_per_class = to_uint(v, f, 2);
                               }};
    da["test_fraction"] = {"real in (0,1)", "0.3333", [](RunConfig& c, const std::string& v, const std::string& f) {
                             c.synthetic.test_fraction = to_real_in(v, f, 1e-9, 1.0 - 1e-9);
                           }};
    da["val_fraction"] = {"real in [0,1)", "0", [](RunConfig& c, const std::string& v, const std::string& f) {
                            c.synthetic.val_fraction = to_real_in(v, f, 0.0, 1.0 - 1e-9);
                          }};
    da["cluster_spread"] = {"real > 0", "1", [](RunConfig& c, const std::string& v, const std::string& f) {
                              c.synthetic.cluster_spread = to_positive(v, f);
                            }};
    da["mean_scale"] = {"real > 0", "1", [](RunConfig& c, const std::string& v, const std::string& f) {
                          c.synthetic.mean_scale = to_positive(v, f);
                        }};
    da["relatedness"] = {"real in [0,1]", "0.6", [](RunConfig& c, const std::string& v, const std::string& f) {
                           c.synthetic.relatedness = to_real_in(v, f, 0.0, 1.0);
                         }};
    da["seed"] = {"integer", "experiment seed", [](RunConfig& c, const std::string& v, const std::string& f) {
                    c.data_seed = to_uint(v, f);
                  }};

    auto& au = m["augment"];
    au["factor"] = {"integer >= 1", "10", [](RunConfig& c, const std::string& v, const std::string& f) {
                      c.sequence.augment.factor = to_uint(v, f, 1);
                    }};
    au["mode"] = {"jitter|flip_jitter", "jitter", [](RunConfig& c, const std::string& v, const std::string& f) {
                    const std::string s = trim(v);
                    if (s == "jitter") {
                      c.sequence.augment.mode = data::AugmentMode::Jitter;
                    } else if (s == "flip_jitter") {
                      c.sequence.augment.mode = data::AugmentMode::FlipJitter;
                    } else {
                      throw ConfigError(f, "expected jitter or flip_jitter, got '" + s + "'");
                    }
                  }};
    au["magnitude"] = {"real >= 0", "0.1", [](RunConfig& c, const std::string& v, const std::string& f) {
                         const double x = to_real(v, f);
                         if (x < 0.0) throw ConfigError(f, "must be >= 0");
                         c.sequence.augment.magnitude = x;
                       }};
    au["block_size"] = {"integer >= 1", "4", [](RunConfig& c, const std::string& v, const std::string& f) {
                          c.sequence.augment.block_size = to_uint(v, f, 1);
                        }};
    au["seed"] = {"integer", "0", [](RunConfig& c, const std::string& v, const std::string& f) {
                    c.sequence.augment.seed = to_uint(v, f);
                  }};

    auto& an = m["analysis"];
    an["trials"] = {"integer >= 2", "100", [](RunConfig& c, const std::string& v, const std::string& f) {
                      c.analysis.trials = to_uint(v, f, 2);
                    }};
    an["samples_per_trial"] = {"integer >= 1", "50", [](RunConfig& c, const std::string& v, const std::string& f) {
                                 c.analysis.samples_per_trial = to_uint(v, f, 1);
                               }};
    an["max_pairs"] = {"integer >= 1", "2500", [](RunConfig& c, const std::string& v, const std::string& f) {
                         c.analysis.max_pairs = to_uint(v, f, 1);
                       }};
    an["task"] = {"integer >= 1", "1", [](RunConfig& c, const std::string& v, const std::string& f) {
                    c.analysis.task = static_cast<int>(to_uint(v, f, 1));
                  }};
    return m;
  }();
  return s;
}

const std::set<std::string> kIdxKeys{"images", "labels", "test_images", "test_labels"};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& raw) {
  std::filesystem::path p = trim(raw);
  return p.is_relative() && !base.empty() ? base / p : p;
}

}  // namespace

RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("", "syntax error on line " + std::to_string(e.line()) + ": " + e.message());
  }

  RunConfig cfg;
  bool seed_given = false;
  bool tasks_given = false;
  std::map<int, IdxTask> idx;
  const std::regex task_section(R"(task([1-9][0-9]*))");
  const auto& table = schema();

  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(section, "keys must appear inside a [section]");
    std::smatch m;
    if (std::regex_match(section, m, task_section)) {
      auto& t = idx[std::stoi(m[1].str())];
      for (const auto& [key, node] : body) {
        const std::string field = section + "." + key;
        if (!kIdxKeys.count(key)) throw ConfigError(field, "unknown key");
        const auto path = resolve(base_dir, node.data());
        if (key == "images") t.images = path;
        if (key == "labels") t.labels = path;
        if (key == "test_images") t.test_images = path;
        if (key == "test_labels") t.test_labels = path;
      }
      continue;
    }
    const auto sec = table.find(section);
    if (sec == table.end()) throw ConfigError(section, "unknown section");
    for (const auto& [key, node] : body) {
      const std::string field = section + "." + key;
      if (!node.empty()) throw ConfigError(field, "nested keys are not supported");
      const auto it = sec->second.find(key);
      if (it == sec->second.end()) throw ConfigError(field, "unknown key");
      it->second.set(cfg, node.data(), field);
      if (field == "experiment.seed") seed_given = true;
      if (field == "data.tasks") tasks_given = true;
    }
  }

  if (!seed_given) throw ConfigError("experiment.seed", "missing required field 'seed'");
  if (cfg.output_dir.is_relative() && !base_dir.empty()) cfg.output_dir = base_dir / cfg.output_dir;

  if (cfg.source == DataSource::Idx) {
    if (idx.empty()) throw ConfigError("data.source", "idx data needs [task1], [task2], ... sections");
    int expected = 1;
    for (const auto& [n, t] : idx) {
      const std::string sec = "task" + std::to_string(n);
      if (n != expected++) throw ConfigError(sec, "task sections must be numbered 1, 2, ... without gaps");
      for (const auto* k : {"images", "labels", "test_images", "test_labels"}) {
        const std::string key = k;
        const auto& p = key == "images" ? t.images : key == "labels" ? t.labels
                      : key == "test_images" ? t.test_images : t.test_labels;
        if (p.empty()) throw ConfigError(sec + "." + key, "missing required field");
      }
      cfg.idx_tasks.push_back(t);
    }
    if (tasks_given && cfg.task_count != cfg.idx_tasks.size()) {
      throw ConfigError("data.tasks", "does not match the number of [taskN] sections");
    }
    cfg.task_count = cfg.idx_tasks.size();
  } else if (!idx.empty()) {
    throw ConfigError("task1", "[taskN] sections are only valid with data.source = idx");
  }

  cfg.synthetic.input_dim = cfg.sequence.architecture.input_dim;
  cfg.sequence.run_id = cfg.name;
  if (cfg.sequence.autoencoder.max_epochs < cfg.sequence.autoencoder.stop_window) {
    throw ConfigError("autoencoder.max_epochs", "must be >= autoencoder.stop_window");
  }
  if (!cfg.sequence.alphas.empty() && cfg.sequence.alphas.size() < cfg.task_count) {
    throw ConfigError("lifelong.alphas", "needs one entry per task (" + std::to_string(cfg.task_count) + ")");
  }
  if (cfg.analysis.task > static_cast<int>(cfg.task_count)) {
    throw ConfigError("analysis.task", "exceeds the number of tasks");
  }
  const std::size_t feature_dim = cfg.sequence.architecture.feature_dim();
  if (cfg.sequence.effective_code_dim() >= feature_dim) {
    throw ConfigError("autoencoder.code_dim", "must be smaller than the last feature width (" +
                                                  std::to_string(feature_dim) + ")");
  }
  try {
    cfg.sequence.validate();
    cfg.synthetic.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("", e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file " + path.string());
  return parse_config(in, path.parent_path());
}

std::vector<data::TaskData> build_tasks(const RunConfig& cfg) {
  if (cfg.source == DataSource::Synthetic) {
    const auto specs = data::benchmark_specs(cfg.data_seed.value_or(cfg.seed), cfg.task_count, cfg.synthetic);
    return data::gen_synthetic_sequence(specs);
  }
  std::vector<data::TaskData> tasks;
  for (std::size_t k = 0; k < cfg.idx_tasks.size(); ++k) {
    const auto& t = cfg.idx_tasks[k];
    const int id = static_cast<int>(k) + 1;
    data::TaskData td;
    td.train = data::load_idx(t.images, t.labels, id, data::Split::Train);
    td.test = data::load_idx(t.test_images, t.test_labels, id, data::Split::Test);
    td.val = data::Dataset{};
    td.val.task_id = id;
    td.val.split = data::Split::Val;
    td.val.class_count = td.train.class_count;
    if (td.train.inputs.cols() != cfg.sequence.architecture.input_dim) {
      throw ConfigError("architecture.input_dim", "task " + std::to_string(id) + " images have " +
                                                      std::to_string(td.train.inputs.cols()) + " pixels");
    }
    tasks.push_back(std::move(td));
  }
  return tasks;
}

std::string schema_description() {
  std::ostringstream out;
  for (const auto& [section, keys] : schema()) {
    out << "[" << section << "]\n";
    for (const auto& [key, field] : keys) {
      out << "  " << key << " : " << field.type;
      if (*field.default_value) out << " (default " << field.default_value << ")";
      out << "\n";
    }
  }
  out << "[taskN]  (data.source = idx, N = 1, 2, ...)\n"
         "  images, labels, test_images, test_labels : path\n";
  return out.str();
}

}  // namespace ebll::config
