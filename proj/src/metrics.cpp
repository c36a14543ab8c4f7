#include "doublematch/metrics.hpp"

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doublematch/error.hpp"

namespace fs = std::filesystem;

namespace dm {

namespace {

double parse_double(std::string_view s, std::string_view line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw DataError(fmt::format("bad number '{}' in metric row '{}'", s, line));
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string format_row(const MetricRow& r) {
  return fmt::format("{},{},{},{},{},{},{},{},{}", r.step, r.l_l, r.l_p, r.l_s, r.mask_rate, r.lr, r.wall_time_s,
                     r.eval_error ? fmt::format("{}", *r.eval_error) : std::string(), r.ema ? 1 : 0);
}

MetricRow parse_row(const std::string& line) {
  const auto f = split_commas(line);
  if (f.size() != 9) throw DataError(fmt::format("metric row needs 9 fields: '{}'", line));
  MetricRow r;
  std::int64_t step = 0;
  auto [ptr, ec] = std::from_chars(f[0].data(), f[0].data() + f[0].size(), step);
  if (ec != std::errc() || ptr != f[0].data() + f[0].size()) throw DataError(fmt::format("bad step in '{}'", line));
  r.step = step;
  r.l_l = parse_double(f[1], line);
  r.l_p = parse_double(f[2], line);
  r.l_s = parse_double(f[3], line);
  r.mask_rate = parse_double(f[4], line);
  r.lr = parse_double(f[5], line);
  r.wall_time_s = parse_double(f[6], line);
  if (!f[7].empty()) r.eval_error = parse_double(f[7], line);
  r.ema = f[8] == "1";
  return r;
}

MetricLog::MetricLog(fs::path path) : path_(std::move(path)) { flush(); }

MetricLog MetricLog::resume(fs::path path, std::int64_t up_to) {
  auto rows = read_metric_log(path);
  std::erase_if(rows, [&](const MetricRow& r) { return r.step > up_to; });
  MetricLog log(std::move(path));
  log.rows_ = std::move(rows);
  log.flush();
  return log;
}

void MetricLog::append(const MetricRow& row) {
  if (!rows_.empty() && row.step <= rows_.back().step)
    throw DataError(fmt::format("metric log '{}': step {} does not follow step {}", path_.string(), row.step,
                                rows_.back().step));
  rows_.push_back(row);
  flush();
}

void MetricLog::flush() const {
  auto tmp = path_;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot write metric log '{}'", tmp.string()));
    out << kMetricHeader << '\n';
    for (const auto& r : rows_) out << format_row(r) << '\n';
  }
  fs::rename(tmp, path_);
}

std::vector<MetricRow> read_metric_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open metric log '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  std::vector<MetricRow> rows;
  std::size_t start = 0;
  bool header = true;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    if (end == std::string::npos) break;  // unterminated last line
    std::string line = text.substr(start, end - start);
    start = end + 1;
    if (header) {
      if (line != kMetricHeader) throw DataError(fmt::format("'{}' lacks the metric header", path.string()));
      header = false;
      continue;
    }
    if (!line.empty()) rows.push_back(parse_row(line));
  }
  if (header) throw DataError(fmt::format("'{}' lacks the metric header", path.string()));
  return rows;
}

std::vector<double> eval_errors(const std::vector<MetricRow>& rows) {
  std::vector<double> out;
  for (const auto& r : rows)
    if (r.eval_error) out.push_back(*r.eval_error);
  return out;
}

RunStats run_stats(const std::vector<double>& errors, int window) {
  if (errors.empty()) throw DataError("no evaluation data");
  RunStats s;
  s.num_evals = static_cast<int>(errors.size());
  s.min_error = *std::min_element(errors.begin(), errors.end());
  s.fallback = s.num_evals < window;
  const auto first = s.fallback ? errors.begin() : errors.end() - window;
  s.median_last = median(std::vector<double>(first, errors.end()));
  return s;
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) throw DataError("mean_std of an empty list");
  MeanStd m;
  m.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

Summary summarize(const std::vector<std::vector<double>>& runs, int window) {
  if (runs.empty()) throw DataError("summarize needs at least one run");
  Summary s;
  std::vector<double> mins, medians;
  for (const auto& errors : runs) {
    s.runs.push_back(run_stats(errors, window));
    mins.push_back(s.runs.back().min_error);
    medians.push_back(s.runs.back().median_last);
    s.any_fallback = s.any_fallback || s.runs.back().fallback;
  }
  // Sorting makes the floating-point sums independent of fold order.
  std::sort(mins.begin(), mins.end());
  std::sort(medians.begin(), medians.end());
  s.min_error = mean_std(mins);
  s.median_last = mean_std(medians);
  return s;
}

std::string format_mean_std(const MeanStd& v) { return fmt::format("{:.2f}±{:.2f}", 100.0 * v.mean, 100.0 * v.std); }

CurveSeries curve_from_rows(const std::string& label, const std::vector<MetricRow>& rows) {
  CurveSeries s;
  s.label = label;
  for (const auto& r : rows)
    if (r.eval_error) {
      s.steps.push_back(r.step);
      s.accuracy.push_back(1.0 - *r.eval_error);
    }
  if (s.steps.empty()) throw DataError(fmt::format("{}: no evaluation data", label));
  std::vector<std::size_t> order(s.steps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return s.steps[a] < s.steps[b]; });
  CurveSeries sorted{s.label, {}, {}};
  for (auto i : order) {
    sorted.steps.push_back(s.steps[i]);
    sorted.accuracy.push_back(s.accuracy[i]);
  }
  return sorted;
}

void plot_accuracy_curves(const std::vector<CurvePanel>& panels, const fs::path& out) {
  if (panels.empty()) throw DataError("nothing to plot");
  constexpr int kPanelW = 560, kPanelH = 400, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
  const std::vector<cv::Scalar> palette = {{200, 90, 30}, {40, 40, 210}, {50, 160, 50},
                                           {160, 60, 160}, {20, 150, 200}, {90, 90, 90}};
  cv::Mat canvas(kPanelH, kPanelW * static_cast<int>(panels.size()), CV_8UC3, cv::Scalar(255, 255, 255));
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& panel = panels[p];
    if (panel.series.empty()) throw DataError(fmt::format("panel '{}': empty group", panel.title));
    std::int64_t max_step = 1;
    double lo = 1.0, hi = 0.0;
    for (const auto& s : panel.series) {
      if (s.steps.empty()) throw DataError(fmt::format("{}: no evaluation data", s.label));
      max_step = std::max(max_step, s.steps.back());
      for (double a : s.accuracy) {
        lo = std::min(lo, a);
        hi = std::max(hi, a);
      }
    }
    lo = std::floor(lo * 10.0) / 10.0;
    hi = std::min(1.0, std::ceil(hi * 10.0) / 10.0);
    if (hi - lo < 0.1) hi = std::min(1.0, lo + 0.1), lo = hi - 0.1;
    const int x0 = static_cast<int>(p) * kPanelW + kLeft;
    const int x1 = static_cast<int>(p + 1) * kPanelW - kRight;
    const int y0 = kPanelH - kBottom, y1 = kTop;
    auto px = [&](double step) { return x0 + static_cast<int>((x1 - x0) * step / static_cast<double>(max_step)); };
    auto py = [&](double acc) { return y0 - static_cast<int>((y0 - y1) * (acc - lo) / (hi - lo)); };
    const cv::Scalar black(0, 0, 0), grid(225, 225, 225);
    for (int t = 0; t <= 4; ++t) {
      const double acc = lo + (hi - lo) * t / 4.0;
      cv::line(canvas, {x0, py(acc)}, {x1, py(acc)}, grid, 1);
      cv::putText(canvas, fmt::format("{:.0f}%", 100.0 * acc), {x0 - 50, py(acc) + 4}, cv::FONT_HERSHEY_SIMPLEX,
                  0.4, black, 1, cv::LINE_AA);
    }
    cv::rectangle(canvas, {x0, y1}, {x1, y0}, black, 1);
    cv::putText(canvas, fmt::format("{}", max_step), {x1 - 40, y0 + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black, 1,
                cv::LINE_AA);
    cv::putText(canvas, "0", {x0, y0 + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black, 1, cv::LINE_AA);
    cv::putText(canvas, "step", {(x0 + x1) / 2 - 15, y0 + 38}, cv::FONT_HERSHEY_SIMPLEX, 0.45, black, 1,
                cv::LINE_AA);
    cv::putText(canvas, panel.title, {x0, y1 - 14}, cv::FONT_HERSHEY_SIMPLEX, 0.55, black, 1, cv::LINE_AA);
    for (std::size_t si = 0; si < panel.series.size(); ++si) {
      const auto& s = panel.series[si];
      const auto color = palette[si % palette.size()];
      std::vector<cv::Point> pts;
      for (std::size_t i = 0; i < s.steps.size(); ++i)
        pts.emplace_back(px(static_cast<double>(s.steps[i])), py(s.accuracy[i]));
      cv::polylines(canvas, pts, false, color, 2, cv::LINE_AA);
      const int ly = y0 - 12 - 18 * static_cast<int>(panel.series.size() - 1 - si);
      cv::line(canvas, {x1 - 150, ly - 4}, {x1 - 125, ly - 4}, color, 2, cv::LINE_AA);
      cv::putText(canvas, s.label, {x1 - 120, ly}, cv::FONT_HERSHEY_SIMPLEX, 0.45, black, 1, cv::LINE_AA);
    }
  }
  if (!cv::imwrite(out.string(), canvas)) throw DataError(fmt::format("cannot write plot '{}'", out.string()));
}

}  // namespace dm
