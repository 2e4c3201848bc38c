#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ebll {

/// One named measurement. `eval_task` is 0 when the metric is not tied to a
/// particular evaluated task; `epoch` is 0 for end-of-task rows.
struct MetricRow {
  std::string run_id;
  std::string phase;
  int task = 0;
  long epoch = 0;
  int eval_task = 0;
  std::string metric;
  double value = 0.0;
};

/// Append-only metrics table written as CSV with the fixed header
/// run_id,phase,task,epoch,eval_task,metric,value
class MetricsLog {
public:
  static constexpr const char* kHeader = "run_id,phase,task,epoch,eval_task,metric,value";

  void append(MetricRow row) { rows_.push_back(std::move(row)); }
  void append_all(const MetricsLog& other);
  const std::vector<MetricRow>& rows() const noexcept { return rows_; }

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;

private:
  std::vector<MetricRow> rows_;
};

/// Shortest text that reads back to the identical double.
std::string format_real(double v);

}  // namespace ebll
