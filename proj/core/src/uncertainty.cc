#include "xaib/uncertainty.h"

#include <algorithm>
#include <cmath>

#include "xaib/error.h"
#include "xaib/ops.h"

namespace xaib {

void MCDConfig::validate() const {
  if (samples < 1) throw Error("MCD: sample count must be >= 1, got " + std::to_string(samples));
  if (rate_override && !(*rate_override >= 0.0f && *rate_override < 1.0f)) {
    throw Error("MCD: dropout rate override must lie in [0, 1)");
  }
}

std::vector<RngStream> MCDConfig::streams() const {
  std::vector<RngStream> out;
  out.reserve(static_cast<std::size_t>(samples));
  for (int t = 0; t < samples; ++t) out.push_back(stream(t));
  return out;
}

std::vector<double> PredictiveDistribution::column(int cls) const {
  std::vector<double> col;
  col.reserve(probabilities.size());
  for (const auto& row : probabilities) col.push_back(row.at(static_cast<std::size_t>(cls)));
  return col;
}

double Quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw Error("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(values.size() - 1, lo + 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

void RequireDropout(const Model& model) {
  if (!model.spec().has_dropout) throw Error("MCD: the model has no dropout layer");
}

std::vector<double> Softmax(std::span<const float> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  std::vector<double> p(row.size());
  double z = 0.0;
  for (std::size_t c = 0; c < row.size(); ++c) z += (p[c] = std::exp(row[c] - mx));
  for (auto& v : p) v /= z;
  return p;
}

Tensor ImageBatch(const Model& model, const Tensor& image) {
  const auto& s = model.spec();
  if (image.rank() != 3 || image.dim(0) != s.in_channels || image.dim(1) != s.height || image.dim(2) != s.width) {
    throw Error("MCD: image shape " + ShapeToString(image.shape()) + " does not match the model input");
  }
  return image.clone().reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
}

// The conv stack is deterministic, so features are computed once and only
// the dropout+head part is resampled.
std::vector<std::vector<double>> HeadSamples(const Model& model, const Tensor& features, const MCDConfig& cfg,
                                             int first, int count) {
  constexpr int kChunk = 64;
  const auto f = features.dim(1);
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<std::size_t>(count));
  for (int b = first; b < first + count; b += kChunk) {
    const int e = std::min(first + count, b + kChunk);
    Tensor tiled({e - b, f});
    for (int t = b; t < e; ++t) {
      std::copy(features.data().begin(), features.data().end(), tiled.data().begin() + (t - b) * f);
    }
    DropoutControl dropout;
    dropout.active = true;
    dropout.rate_override = cfg.rate_override;
    for (int t = b; t < e; ++t) dropout.streams.push_back(cfg.stream(t));
    Tape tape;
    const Tensor logits = model.head(tape, tiled, dropout);
    const auto k = logits.dim(1);
    for (int t = b; t < e; ++t) {
      rows.push_back(Softmax(logits.data().subspan(static_cast<std::size_t>((t - b) * k), static_cast<std::size_t>(k))));
    }
  }
  return rows;
}

}  // namespace

PredictiveDistribution McdPredict(const Model& model, const Tensor& image, const MCDConfig& cfg) {
  RequireDropout(model);
  cfg.validate();
  Tape tape;
  const Tensor features = model.features(tape, ImageBatch(model, image));
  PredictiveDistribution dist;
  dist.probabilities = HeadSamples(model, features, cfg, 0, cfg.samples);
  const int k = model.spec().num_classes;
  for (int c = 0; c < k; ++c) {
    const auto col = dist.column(c);
    ClassSummary s;
    // Shifted by the first sample: a constant column gives exactly its value
    // and a zero spread.
    const double shift = col.front();
    double total = 0.0;
    for (double v : col) total += v - shift;
    const double offset = total / static_cast<double>(col.size());
    s.mean = shift + offset;
    if (col.size() > 1) {
      double ss = 0.0;
      for (double v : col) ss += (v - shift - offset) * (v - shift - offset);
      s.std = std::sqrt(ss / static_cast<double>(col.size() - 1));
    }
    s.q25 = Quantile(col, 0.25);
    s.median = Quantile(col, 0.5);
    s.q75 = Quantile(col, 0.75);
    dist.summary.push_back(s);
  }
  return dist;
}

std::vector<double> McdPredictSample(const Model& model, const Tensor& image, const MCDConfig& cfg, int t) {
  RequireDropout(model);
  cfg.validate();
  if (t < 0 || t >= cfg.samples) throw Error("MCD: sample index out of range");
  Tape tape;
  const Tensor features = model.features(tape, ImageBatch(model, image));
  return HeadSamples(model, features, cfg, t, 1).front();
}

std::vector<SaliencyMap> McdSaliencyStack(const Model& model, const Tensor& image, int label, Method method,
                                          const MCDConfig& cfg, Aggregation aggregation, const IGConfig& ig) {
  RequireDropout(model);
  cfg.validate();
  const auto streams = cfg.streams();
  const auto raw = RawAttributionSamples(model, image, label, method, ig, streams, cfg.rate_override);
  std::vector<SaliencyMap> stack;
  stack.reserve(raw.size());
  for (std::size_t t = 0; t < raw.size(); ++t) {
    auto map = Aggregate(raw[t], aggregation, method, label);
    map.lineage = "mcd seed=" + std::to_string(cfg.base_seed + t);
    stack.push_back(std::move(map));
  }
  return stack;
}

QuantileSaliencyMap QuantileMap(std::span<const SaliencyMap> stack, double q, QuantileRule rule) {
  if (stack.empty()) throw Error("quantile map: empty stack");
  if (!(q >= 0.0 && q <= 1.0)) throw Error("quantile map: q must lie in [0, 1], got " + std::to_string(q));
  const auto& first = stack.front();
  for (const auto& m : stack) {
    if (m.height != first.height || m.width != first.width) throw Error("quantile map: maps differ in size");
  }
  QuantileSaliencyMap out;
  out.q = q;
  out.samples = static_cast<int>(stack.size());
  out.method = first.method;
  out.map = first;
  out.map.lineage = "quantile q=" + std::to_string(q) + " over " + std::to_string(stack.size()) + " samples";
  const std::size_t t = stack.size();
  std::vector<float> column(t);
  const double pos = q * static_cast<double>(t - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(t - 1, lo + 1);
  const double frac = pos - static_cast<double>(lo);
  std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(t)));
  rank = rank == 0 ? 0 : rank - 1;
  for (std::size_t p = 0; p < first.values.size(); ++p) {
    for (std::size_t s = 0; s < t; ++s) column[s] = stack[s].values[p];
    std::sort(column.begin(), column.end());
    if (rule == QuantileRule::kNearestRank) {
      out.map.values[p] = column[rank];
    } else {
      const double a = column[lo], b = column[hi];
      out.map.values[p] = static_cast<float>(a + frac * (b - a));
    }
  }
  return out;
}

}  // namespace xaib
