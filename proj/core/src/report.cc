#include "xaib/report.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "xaib/error.h"

namespace xaib::report {
namespace {

std::string CsvField(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string XmlEscape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string SvgConfigComment(const std::string& run_config_json) {
  std::string body;
  for (char c : run_config_json) {
    if (c == '-' && !body.empty() && body.back() == '-') body += ' ';
    body += c;
  }
  return "<!-- config: " + body + " -->\n";
}

std::string Fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

struct Frame {
  double left = 70, top = 40, width = 520, height = 320;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  double px(double x) const { return left + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * width; }
  double py(double y) const { return top + height - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5) * height; }
};

std::string SvgOpen(const PlotLabels& labels, const Frame& f, double total_width, const std::string& config) {
  std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += SvgConfigComment(config);
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + Fixed(total_width) + "\" height=\"" +
       Fixed(f.top + f.height + 60) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + Fixed(f.left + f.width / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
       XmlEscape(labels.title) + "</text>\n";
  s += "<rect x=\"" + Fixed(f.left) + "\" y=\"" + Fixed(f.top) + "\" width=\"" + Fixed(f.width) + "\" height=\"" +
       Fixed(f.height) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0, yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s += "<text x=\"" + Fixed(f.px(xv)) + "\" y=\"" + Fixed(f.top + f.height + 16) +
         "\" text-anchor=\"middle\">" + Fixed(xv) + "</text>\n";
    s += "<text x=\"" + Fixed(f.left - 6) + "\" y=\"" + Fixed(f.py(yv) + 4) + "\" text-anchor=\"end\">" +
         Fixed(yv) + "</text>\n";
  }
  s += "<text x=\"" + Fixed(f.left + f.width / 2) + "\" y=\"" + Fixed(f.top + f.height + 40) +
       "\" text-anchor=\"middle\">" + XmlEscape(labels.x_label) + "</text>\n";
  s += "<text transform=\"translate(18," + Fixed(f.top + f.height / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">" + XmlEscape(labels.y_label) + "</text>\n";
  return s;
}

}  // namespace

std::string FormatNumber(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string CsvConfigLine(const std::string& run_config_json) {
  std::string flat;
  for (char c : run_config_json) flat += (c == '\n' || c == '\r') ? ' ' : c;
  return "# config: " + flat + "\n";
}

std::string TrainLogCsv(std::span<const EpochLog> epochs, const std::string& run_config_json) {
  std::string s = CsvConfigLine(run_config_json) + "epoch,train_loss,val_loss,val_accuracy\n";
  for (const auto& e : epochs) {
    s += std::to_string(e.epoch) + "," + FormatNumber(e.train_loss) + "," + FormatNumber(e.val_loss) + "," +
         FormatNumber(e.val_accuracy) + "\n";
  }
  return s;
}

std::string ConfusionCsv(const EvalReport& report, std::span<const std::string> classes,
                         const std::string& run_config_json) {
  if (report.confusion.size() != classes.size()) throw Error("confusion matrix and class list differ in size");
  std::string s = CsvConfigLine(run_config_json) + "true\\predicted";
  for (const auto& c : classes) s += "," + CsvField(c);
  s += "\n";
  for (std::size_t i = 0; i < classes.size(); ++i) {
    s += CsvField(classes[i]);
    for (auto v : report.confusion[i]) s += "," + std::to_string(v);
    s += "\n";
  }
  return s;
}

std::string LocalisationTableCsv(std::span<const std::string> methods,
                                 std::span<const std::vector<LocalisationResult>> results,
                                 const std::string& run_config_json,
                                 std::span<const LocalisationMetric> metrics) {
  if (methods.size() != results.size()) throw Error("localisation table: one result set per method required");
  std::string s = CsvConfigLine(run_config_json) + "metric";
  for (const auto& m : methods) s += "," + CsvField(m);
  s += "\n";
  for (auto metric : metrics) {
    s += MetricTitle(metric);
    for (const auto& per_method : results) {
      const auto it = std::find_if(per_method.begin(), per_method.end(),
                                   [&](const LocalisationResult& r) { return r.metric == metric; });
      s += "," + (it == per_method.end() ? std::string() : FormatNumber(it->mean));
    }
    s += "\n";
  }
  return s;
}

std::string DistributionCsv(const PredictiveDistribution& dist, std::span<const std::string> classes,
                            const std::string& run_config_json) {
  std::string s = CsvConfigLine(run_config_json) + "sample";
  for (const auto& c : classes) s += "," + CsvField(c);
  s += "\n";
  for (std::size_t t = 0; t < dist.probabilities.size(); ++t) {
    if (dist.probabilities[t].size() != classes.size()) throw Error("distribution row has the wrong class count");
    s += std::to_string(t);
    for (double p : dist.probabilities[t]) s += "," + FormatNumber(p);
    s += "\n";
  }
  return s;
}

std::string FlipCurvesCsv(const PfMcdBundle& bundle, const std::string& run_config_json) {
  std::string s = CsvConfigLine(run_config_json) + "fraction";
  for (const auto& c : bundle.curves) s += "," + CsvField(c.source + " score") + "," + CsvField(c.source + " accuracy");
  s += ",random score mean,random score stderr,random accuracy mean,random accuracy stderr\n";
  const auto& grid = bundle.random.points;
  for (std::size_t p = 0; p < grid.size(); ++p) {
    s += FormatNumber(grid[p].fraction);
    for (const auto& c : bundle.curves) {
      if (c.points.size() != grid.size()) throw Error("flip bundle curves have different step grids");
      s += "," + FormatNumber(c.points[p].mean_score) + "," + FormatNumber(c.points[p].accuracy);
    }
    s += "," + FormatNumber(grid[p].mean_score) + "," + FormatNumber(bundle.random.score_stderr[p]) + "," +
         FormatNumber(grid[p].accuracy) + "," + FormatNumber(bundle.random.accuracy_stderr[p]) + "\n";
  }
  return s;
}

std::string LinePlotSvg(const PlotLabels& labels, std::span<const Series> series, const std::string& run_config_json) {
  Frame f;
  bool any = false;
  for (const auto& sr : series) {
    if (sr.x.size() != sr.y.size()) throw Error("line plot: series '" + sr.name + "' has mismatched x/y");
    for (std::size_t i = 0; i < sr.x.size(); ++i) {
      if (!any) {
        f.x0 = f.x1 = sr.x[i];
        f.y0 = f.y1 = sr.y[i];
        any = true;
      }
      f.x0 = std::min(f.x0, sr.x[i]);
      f.x1 = std::max(f.x1, sr.x[i]);
      f.y0 = std::min(f.y0, sr.y[i]);
      f.y1 = std::max(f.y1, sr.y[i]);
    }
  }
  f.y0 = std::min(f.y0, 0.0);
  f.y1 = std::max(f.y1, 1.0);
  std::string s = SvgOpen(labels, f, f.left + f.width + 200, run_config_json);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& sr = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\"" +
         (sr.name == "random" ? " stroke-dasharray=\"5,3\"" : "") + " points=\"";
    for (std::size_t i = 0; i < sr.x.size(); ++i) {
      s += (i ? " " : "") + Fixed(f.px(sr.x[i])) + "," + Fixed(f.py(sr.y[i]));
    }
    s += "\"/>\n";
    const double ly = f.top + 10 + 16.0 * static_cast<double>(k);
    s += "<line x1=\"" + Fixed(f.left + f.width + 12) + "\" y1=\"" + Fixed(ly) + "\" x2=\"" +
         Fixed(f.left + f.width + 32) + "\" y2=\"" + Fixed(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + Fixed(f.left + f.width + 36) + "\" y=\"" + Fixed(ly + 4) + "\">" + XmlEscape(sr.name) +
         "</text>\n";
  }
  return s + "</svg>\n";
}

std::vector<std::size_t> HistogramCounts(std::span<const double> values, int bins, double lo, double hi) {
  if (bins < 1 || !(hi > lo)) throw Error("histogram: need bins >= 1 and hi > lo");
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    if (v < lo || v > hi) continue;
    auto b = static_cast<std::size_t>(std::floor((v - lo) / (hi - lo) * bins));
    counts[std::min(b, counts.size() - 1)]++;
  }
  return counts;
}

std::string HistogramSvg(const PlotLabels& labels, std::span<const double> values, int bins, double lo, double hi,
                         const std::string& run_config_json) {
  const auto counts = HistogramCounts(values, bins, lo, hi);
  Frame f;
  f.x0 = lo;
  f.x1 = hi;
  f.y0 = 0;
  f.y1 = static_cast<double>(std::max<std::size_t>(1, *std::max_element(counts.begin(), counts.end())));
  std::string s = SvgOpen(labels, f, f.left + f.width + 30, run_config_json);
  const double bw = (hi - lo) / bins;
  for (int b = 0; b < bins; ++b) {
    if (counts[b] == 0) continue;
    const double x = f.px(lo + b * bw), x2 = f.px(lo + (b + 1) * bw), y = f.py(static_cast<double>(counts[b]));
    s += "<rect class=\"bar\" x=\"" + Fixed(x) + "\" y=\"" + Fixed(y) + "\" width=\"" + Fixed(x2 - x) +
         "\" height=\"" + Fixed(f.top + f.height - y) + "\" fill=\"#4c72b0\" stroke=\"white\"/>\n";
  }
  return s + "</svg>\n";
}

}  // namespace xaib::report
