#include "xaib/faithfulness.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "xaib/error.h"

namespace xaib {

const char* FillName(FillStrategy f) {
  switch (f) {
    case FillStrategy::kConstant: return "constant";
    case FillStrategy::kDatasetMean: return "dataset-mean";
    case FillStrategy::kImageMean: return "image-mean";
  }
  return "?";
}

FillStrategy ParseFill(const std::string& name) {
  if (name == "constant") return FillStrategy::kConstant;
  if (name == "dataset-mean") return FillStrategy::kDatasetMean;
  if (name == "image-mean" || name == "per-image-mean") return FillStrategy::kImageMean;
  throw Error("unknown fill strategy '" + name + "'");
}

void FlipConfig::validate() const {
  if (!(step > 0.0 && step <= max_fraction && max_fraction <= 1.0)) {
    throw Error("flip config: need 0 < step <= max_fraction <= 1");
  }
  if (patch < 1) throw Error("flip config: patch size must be >= 1");
  if (fill == FillStrategy::kDatasetMean && dataset_mean.empty()) {
    throw Error("flip config: dataset-mean fill needs per-channel means");
  }
}

std::vector<double> FlipConfig::fractions() const {
  validate();
  const auto count = static_cast<std::size_t>(std::floor(max_fraction / step + 1e-9)) + 1;
  std::vector<double> f(count);
  for (std::size_t i = 0; i < count; ++i) f[i] = static_cast<double>(i) * step;
  return f;
}

std::vector<float> FlipConfig::fill_values(const Tensor& image) const {
  const auto c = static_cast<std::size_t>(image.dim(0));
  switch (fill) {
    case FillStrategy::kConstant: return std::vector<float>(c, constant);
    case FillStrategy::kDatasetMean:
      if (dataset_mean.size() != c) throw Error("flip config: dataset mean has wrong channel count");
      return dataset_mean;
    case FillStrategy::kImageMean: {
      std::vector<float> out(c);
      const auto hw = image.numel() / c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += image.data()[ch * hw + i];
        out[ch] = static_cast<float>(s / static_cast<double>(hw));
      }
      return out;
    }
  }
  throw Error("unknown fill");
}

std::vector<std::int32_t> RankingFromMap(std::span<const float> values) {
  std::vector<std::int32_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::int32_t a, std::int32_t b) { return values[a] > values[b]; });
  return idx;
}

std::vector<std::int32_t> RandomRanking(std::int32_t pixels, RngStream rng) { return RandomPermutation(pixels, rng); }

namespace {

std::int64_t CellCount(const Tensor& image, int patch) {
  const auto h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
  return ((h + patch - 1) / patch) * ((w + patch - 1) / patch);
}

// Flips ranking[begin, end) in place on a (C,H,W) buffer.
void FlipRange(std::span<float> img, std::int64_t c, std::int64_t h, std::int64_t w,
               std::span<const std::int32_t> ranking, std::size_t begin, std::size_t end, std::span<const float> fill,
               int patch) {
  const std::int64_t cells_w = (w + patch - 1) / patch;
  const std::int64_t cells = ((h + patch - 1) / patch) * cells_w;
  for (std::size_t r = begin; r < end; ++r) {
    const auto cell = ranking[r];
    if (cell < 0 || cell >= cells) throw Error("flip: ranking index " + std::to_string(cell) + " out of range");
    const std::int64_t cy = cell / cells_w, cx = cell % cells_w;
    for (std::int64_t y = cy * patch; y < std::min(h, (cy + 1) * patch); ++y) {
      for (std::int64_t x = cx * patch; x < std::min(w, (cx + 1) * patch); ++x) {
        for (std::int64_t ch = 0; ch < c; ++ch) img[static_cast<std::size_t>((ch * h + y) * w + x)] = fill[ch];
      }
    }
  }
}

}  // namespace

Tensor FlipPixels(const Tensor& image, std::span<const std::int32_t> ranking, std::size_t n,
                  std::span<const float> fill, int patch) {
  if (image.rank() != 3) throw Error("flip: expected (C,H,W), got " + ShapeToString(image.shape()));
  if (patch < 1) throw Error("flip: patch size must be >= 1");
  const auto cells = static_cast<std::size_t>(CellCount(image, patch));
  if (n > cells || n > ranking.size()) {
    throw Error("flip: n=" + std::to_string(n) + " exceeds the " + std::to_string(std::min(cells, ranking.size())) +
                " rankable pixels");
  }
  if (fill.size() != static_cast<std::size_t>(image.dim(0))) throw Error("flip: fill needs one value per channel");
  Tensor out = image.clone();
  FlipRange(out.data(), image.dim(0), image.dim(1), image.dim(2), ranking, 0, n, fill, patch);
  return out;
}

double FlippingCurve::score_area() const {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += 0.5 * (points[i].mean_score + points[i - 1].mean_score) * (points[i].fraction - points[i - 1].fraction);
  }
  return area;
}

FlippingCurve PfCurve(const Model& model, const FlipSamples& samples,
                      std::span<const std::vector<std::int32_t>> rankings, const FlipConfig& cfg,
                      const std::string& source) {
  if (samples.size() == 0) throw Error("pixel flipping: empty sample set");
  if (rankings.size() != samples.size()) throw Error("pixel flipping: one ranking per sample required");
  const auto fractions = cfg.fractions();
  const auto& images = samples.images;
  const auto c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const auto per = static_cast<std::size_t>(c * h * w);
  const auto n = static_cast<std::int64_t>(samples.size());
  Tensor probe({c, h, w});
  const auto cells = static_cast<std::size_t>(CellCount(probe, cfg.patch));
  for (const auto& r : rankings) {
    if (r.size() != cells) throw Error("pixel flipping: ranking length does not match the pixel/cell count");
  }

  Tensor work = images.clone();
  std::vector<std::vector<float>> fills;
  for (std::int64_t i = 0; i < n; ++i) {
    Tensor img({c, h, w}, std::vector<float>(images.data().begin() + i * per, images.data().begin() + (i + 1) * per));
    fills.push_back(cfg.fill_values(img));
  }

  FlippingCurve curve;
  curve.source = source;
  curve.samples = samples.size();
  std::size_t flipped = 0;
  for (double f : fractions) {
    const auto target = std::min(cells, static_cast<std::size_t>(std::floor(f * static_cast<double>(cells) + 1e-9)));
    for (std::int64_t i = 0; i < n; ++i) {
      FlipRange(work.data().subspan(static_cast<std::size_t>(i) * per, per), c, h, w, rankings[i], flipped, target,
                fills[i], cfg.patch);
    }
    flipped = target;
    const auto probs = PredictBatch(model, work);
    double score = 0.0, correct = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      score += probs[i][samples.labels[i]];
      correct += ArgMax(probs[i]) == samples.labels[i] ? 1.0 : 0.0;
    }
    curve.points.push_back({f, score / static_cast<double>(n), correct / static_cast<double>(n)});
  }
  return curve;
}

std::vector<std::int32_t> BaselineRanking(std::int32_t cells, std::uint64_t seed, std::size_t sample) {
  return RandomRanking(cells, RngStream(seed).derive(sample));
}

FlippingCurve PfRandomBaseline(const Model& model, const FlipSamples& samples, const FlipConfig& cfg,
                               std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw Error("random baseline: at least one seed required");
  if (samples.size() == 0) throw Error("pixel flipping: empty sample set");
  Tensor probe({samples.images.dim(1), samples.images.dim(2), samples.images.dim(3)});
  const auto cells = static_cast<std::int32_t>(CellCount(probe, cfg.patch));
  FlippingCurve mean;
  mean.source = "random";
  mean.samples = samples.size();
  for (auto seed : seeds) {
    std::vector<std::vector<std::int32_t>> rankings;
    for (std::size_t i = 0; i < samples.size(); ++i) rankings.push_back(BaselineRanking(cells, seed, i));
    mean.per_seed.push_back(PfCurve(model, samples, rankings, cfg, "random seed=" + std::to_string(seed)));
  }
  const auto& first = mean.per_seed.front().points;
  const double s = static_cast<double>(seeds.size());
  for (std::size_t p = 0; p < first.size(); ++p) {
    double score = 0.0, acc = 0.0;
    for (const auto& c : mean.per_seed) {
      score += c.points[p].mean_score;
      acc += c.points[p].accuracy;
    }
    score /= s;
    acc /= s;
    double ss_score = 0.0, ss_acc = 0.0;
    for (const auto& c : mean.per_seed) {
      ss_score += (c.points[p].mean_score - score) * (c.points[p].mean_score - score);
      ss_acc += (c.points[p].accuracy - acc) * (c.points[p].accuracy - acc);
    }
    const double denom = seeds.size() > 1 ? (s - 1.0) * s : 1.0;
    mean.score_stderr.push_back(seeds.size() > 1 ? std::sqrt(ss_score / denom) : 0.0);
    mean.accuracy_stderr.push_back(seeds.size() > 1 ? std::sqrt(ss_acc / denom) : 0.0);
    mean.points.push_back({first[p].fraction, score, acc});
  }
  return mean;
}

double BelowFraction(const FlippingCurve& curve, const FlippingCurve& baseline) {
  if (curve.points.size() != baseline.points.size()) throw Error("curves have different step grids");
  if (curve.points.size() < 2) return 0.0;
  std::size_t below = 0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    below += curve.points[i].mean_score < baseline.points[i].mean_score;
  }
  return static_cast<double>(below) / static_cast<double>(curve.points.size() - 1);
}

namespace {

std::vector<float> CellScores(const SaliencyMap& map, int patch) {
  if (patch == 1) return map.values;
  const int cw = (map.width + patch - 1) / patch, ch = (map.height + patch - 1) / patch;
  std::vector<float> cells(static_cast<std::size_t>(cw) * ch, 0.0f);
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) cells[static_cast<std::size_t>(y / patch) * cw + x / patch] += map.at(y, x);
  }
  return cells;
}

}  // namespace

PfMcdBundle PfMcdExperiment(const Model& model, const FlipSamples& samples, const PfMcdConfig& cfg) {
  if (samples.size() == 0) throw Error("PF-MCD: empty sample set");
  for (int label : samples.labels) {
    if (label != samples.labels.front()) throw Error("PF-MCD: samples must share one class");
  }
  if (cfg.methods.empty() || cfg.quantiles.empty()) throw Error("PF-MCD: need at least one method and quantile");
  cfg.flip.validate();
  cfg.mcd.validate();

  PfMcdBundle bundle;
  const auto n = samples.size();
  const auto c = samples.images.dim(1), h = samples.images.dim(2), w = samples.images.dim(3);
  const auto per = static_cast<std::size_t>(c * h * w);
  std::vector<Tensor> images;
  for (std::size_t i = 0; i < n; ++i) {
    images.emplace_back(Shape{c, h, w}, std::vector<float>(samples.images.data().begin() + i * per,
                                                           samples.images.data().begin() + (i + 1) * per));
    bundle.explained_labels.push_back(PredictedLabel(model, images.back()));
  }

  for (auto method : cfg.methods) {
    // rankings[q][sample]
    std::vector<std::vector<std::vector<std::int32_t>>> rankings(cfg.quantiles.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto stack =
          McdSaliencyStack(model, images[i], bundle.explained_labels[i], method, cfg.mcd, cfg.aggregation, cfg.ig);
      for (std::size_t qi = 0; qi < cfg.quantiles.size(); ++qi) {
        const auto qmap = QuantileMap(stack, cfg.quantiles[qi]);
        rankings[qi].push_back(RankingFromMap(CellScores(qmap.map, cfg.flip.patch)));
      }
    }
    for (std::size_t qi = 0; qi < cfg.quantiles.size(); ++qi) {
      char name[96];
      std::snprintf(name, sizeof(name), "%s q=%.2f", MethodName(method), cfg.quantiles[qi]);
      bundle.curves.push_back(PfCurve(model, samples, rankings[qi], cfg.flip, name));
    }
  }

  std::vector<std::uint64_t> seeds = cfg.random_seeds;
  if (seeds.empty()) {
    seeds.resize(20);
    std::iota(seeds.begin(), seeds.end(), std::uint64_t{0});
  }
  bundle.random = PfRandomBaseline(model, samples, cfg.flip, seeds);
  for (const auto& curve : bundle.curves) {
    bundle.summaries.push_back({curve.source, BelowFraction(curve, bundle.random), curve.score_area()});
  }
  return bundle;
}

}  // namespace xaib
