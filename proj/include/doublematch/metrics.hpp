#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dm {

inline constexpr const char* kMetricHeader = "step,l_l,l_p,l_s,mask_rate,lr,wall_time_s,eval_error,ema";

struct MetricRow {
  std::int64_t step = 0;
  double l_l = 0.0;
  double l_p = 0.0;
  double l_s = 0.0;
  double mask_rate = 0.0;
  double lr = 0.0;
  double wall_time_s = 0.0;
  std::optional<double> eval_error;  // fraction in [0,1]
  bool ema = false;                  // evaluation used the EMA shadow

  bool operator==(const MetricRow&) const = default;
};

std::string format_row(const MetricRow& row);
MetricRow parse_row(const std::string& line);

// One run's CSV. Every append rewrites the whole file through a temporary
// and a rename, so readers never see a torn file.
class MetricLog {
 public:
  explicit MetricLog(std::filesystem::path path);

  // Opens an existing file (for resuming) keeping rows with step <= up_to.
  static MetricLog resume(std::filesystem::path path, std::int64_t up_to);

  void append(const MetricRow& row);
  const std::vector<MetricRow>& rows() const { return rows_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  void flush() const;

  std::filesystem::path path_;
  std::vector<MetricRow> rows_;
};

// Partially written trailing lines are ignored.
std::vector<MetricRow> read_metric_log(const std::filesystem::path& path);

std::vector<double> eval_errors(const std::vector<MetricRow>& rows);

struct RunStats {
  double min_error = 0.0;
  double median_last = 0.0;  // median of the last `window` evaluations
  int num_evals = 0;
  bool fallback = false;  // fewer evaluations than the window
};

RunStats run_stats(const std::vector<double>& errors, int window = 20);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single run
};

MeanStd mean_std(const std::vector<double>& values);

struct Summary {
  std::vector<RunStats> runs;
  MeanStd min_error;
  MeanStd median_last;
  bool any_fallback = false;
};

Summary summarize(const std::vector<std::vector<double>>& runs, int window = 20);

// Error fractions rendered as percentages, "xx.xx±yy.yy".
std::string format_mean_std(const MeanStd& v);

struct CurveSeries {
  std::string label;
  std::vector<std::int64_t> steps;
  std::vector<double> accuracy;  // fraction
};

struct CurvePanel {
  std::string title;
  std::vector<CurveSeries> series;
};

CurveSeries curve_from_rows(const std::string& label, const std::vector<MetricRow>& rows);

// Accuracy-vs-step line chart, one panel per entry, written as PNG.
void plot_accuracy_curves(const std::vector<CurvePanel>& panels, const std::filesystem::path& out);

}  // namespace dm
