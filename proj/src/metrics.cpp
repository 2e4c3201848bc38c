#include "ebll/metrics.hpp"

#include <charconv>
#include <fstream>
#include <stdexcept>

namespace ebll {

std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void MetricsLog::append_all(const MetricsLog& other) {
  rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end());
}

std::string MetricsLog::to_csv() const {
  std::string out = kHeader;
  out += '\n';
  for (const auto& r : rows_) {
    out += r.run_id;
    out += ',';
    out += r.phase;
    out += ',';
    out += std::to_string(r.task);
    out += ',';
    out += std::to_string(r.epoch);
    out += ',';
    out += std::to_string(r.eval_task);
    out += ',';
    out += r.metric;
    out += ',';
    out += format_real(r.value);
    out += '\n';
  }
  return out;
}

void MetricsLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write metrics to " + path.string());
  out << to_csv();
}

}  // namespace ebll
