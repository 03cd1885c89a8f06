#pragma once

#include <span>
#include <string>
#include <vector>

#include "xaib/faithfulness.h"
#include "xaib/localisation.h"
#include "xaib/model.h"
#include "xaib/uncertainty.h"

namespace xaib::report {

// Shortest decimal that round-trips to the same double.
std::string FormatNumber(double v);

// Leading comment line that makes a CSV self-describing.
std::string CsvConfigLine(const std::string& run_config_json);

std::string TrainLogCsv(std::span<const EpochLog> epochs, const std::string& run_config_json);

// Rows are true classes, columns predicted classes.
std::string ConfusionCsv(const EvalReport& report, std::span<const std::string> classes,
                         const std::string& run_config_json);

// One row per localisation metric, one column per method.
std::string LocalisationTableCsv(std::span<const std::string> methods,
                                 std::span<const std::vector<LocalisationResult>> results,
                                 const std::string& run_config_json,
                                 std::span<const LocalisationMetric> metrics = kAllLocalisationMetrics);

// One row per MCD sample, one column per class.
std::string DistributionCsv(const PredictiveDistribution& dist, std::span<const std::string> classes,
                            const std::string& run_config_json);

// Step fraction, score and accuracy per curve, then the random baseline's
// mean and standard error.
std::string FlipCurvesCsv(const PfMcdBundle& bundle, const std::string& run_config_json);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotLabels {
  std::string title;
  std::string x_label;
  std::string y_label;
};

std::string LinePlotSvg(const PlotLabels& labels, std::span<const Series> series, const std::string& run_config_json);

// Equal-width bins over [lo, hi]; values at hi fall into the last bin.
std::vector<std::size_t> HistogramCounts(std::span<const double> values, int bins, double lo, double hi);
std::string HistogramSvg(const PlotLabels& labels, std::span<const double> values, int bins, double lo, double hi,
                         const std::string& run_config_json);

}  // namespace xaib::report
