#include "xaib/attribution.h"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "xaib/error.h"
#include "xaib/ops.h"
#include "xaib/raster_io.h"

namespace xaib {

using nlohmann::json;

const char* MethodName(Method m) {
  switch (m) {
    case Method::kGradient: return "gradient";
    case Method::kGradientXInput: return "gradient_x_input";
    case Method::kIntegratedGradients: return "integrated_gradients";
  }
  return "?";
}

Method ParseMethod(const std::string& name) {
  if (name == "gradient" || name == "grad") return Method::kGradient;
  if (name == "gradient_x_input" || name == "gxi" || name == "g-inp") return Method::kGradientXInput;
  if (name == "integrated_gradients" || name == "ig" || name == "int-g") return Method::kIntegratedGradients;
  throw Error("unknown attribution method '" + name + "'");
}

const char* AggregationName(Aggregation a) {
  switch (a) {
    case Aggregation::kRawSum: return "raw-sum";
    case Aggregation::kPositive: return "positive";
    case Aggregation::kAbsolute: return "absolute";
  }
  return "?";
}

Aggregation ParseAggregation(const std::string& name) {
  if (name == "raw-sum" || name == "raw") return Aggregation::kRawSum;
  if (name == "positive") return Aggregation::kPositive;
  if (name == "absolute") return Aggregation::kAbsolute;
  throw Error("unknown aggregation '" + name + "'");
}

void IGConfig::validate(const Tensor& image) const {
  if (steps < 1) throw Error("integrated gradients: step count must be >= 1, got " + std::to_string(steps));
  if (baseline.defined()) {
    if (baseline.shape() != image.shape()) {
      throw Error("integrated gradients: baseline shape " + ShapeToString(baseline.shape()) +
                  " differs from image " + ShapeToString(image.shape()));
    }
    for (float v : baseline.data()) {
      if (!std::isfinite(v)) throw Error("integrated gradients: baseline has non-finite values");
    }
  }
}

namespace {

constexpr std::int64_t kGradChunk = 16;

void CheckImage(const Model& model, const Tensor& image, int label) {
  const auto& s = model.spec();
  if (image.rank() != 3 || image.dim(0) != s.in_channels || image.dim(1) != s.height || image.dim(2) != s.width) {
    throw Error("attribution: image shape " + ShapeToString(image.shape()) + " does not match model input (" +
                std::to_string(s.in_channels) + "," + std::to_string(s.height) + "," + std::to_string(s.width) + ")");
  }
  if (label < 0 || label >= s.num_classes) {
    throw Error("attribution: label " + std::to_string(label) + " outside [0, " + std::to_string(s.num_classes) + ")");
  }
}

Tensor AsBatch(const Tensor& image) {
  return image.clone().reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
}

}  // namespace

void BatchedInputGradients(const Model& model, const Tensor& inputs, std::span<const int> labels,
                           std::span<const RngStream> streams, std::optional<float> rate_override,
                           const GradientSink& sink) {
  if (inputs.rank() != 4) throw Error("gradient batch: expected (J,C,H,W), got " + ShapeToString(inputs.shape()));
  const auto jobs = inputs.dim(0);
  if (static_cast<std::int64_t>(labels.size()) != jobs) throw Error("gradient batch: one label per job required");
  if (!streams.empty() && static_cast<std::int64_t>(streams.size()) != jobs) {
    throw Error("gradient batch: one dropout stream per job required");
  }
  const auto per = static_cast<std::size_t>(inputs.dim(1) * inputs.dim(2) * inputs.dim(3));
  for (std::int64_t b = 0; b < jobs; b += kGradChunk) {
    const auto e = std::min(jobs, b + kGradChunk);
    const auto rows = static_cast<std::size_t>(e - b);
    auto src = inputs.data().subspan(static_cast<std::size_t>(b) * per, rows * per);
    Tensor x({e - b, inputs.dim(1), inputs.dim(2), inputs.dim(3)}, std::vector<float>(src.begin(), src.end()));
    x.set_requires_grad(true);
    DropoutControl dropout;
    dropout.rate_override = rate_override;
    if (!streams.empty()) {
      dropout.active = true;
      dropout.streams.assign(streams.begin() + b, streams.begin() + e);
    }
    Tape tape;
    const Tensor logits = model.logits(tape, x, dropout);
    const Tensor target = ops::sum(tape, ops::pick(tape, logits, labels.subspan(static_cast<std::size_t>(b), rows)));
    tape.backward(target);
    const auto g = x.grad();
    for (std::size_t r = 0; r < rows; ++r) sink(static_cast<std::size_t>(b) + r, g.subspan(r * per, per));
  }
}

float TargetLogit(const Model& model, const Tensor& image, int label, const DropoutControl& dropout) {
  CheckImage(model, image, label);
  Tape tape;
  const Tensor logits = model.logits(tape, AsBatch(image), dropout);
  return logits.data()[static_cast<std::size_t>(label)];
}

int PredictedLabel(const Model& model, const Tensor& image) { return ArgMax(Predict(model, image)); }

Tensor InputGradient(const Model& model, const Tensor& image, int label, const DropoutControl& dropout) {
  CheckImage(model, image, label);
  if (dropout.active && dropout.streams.size() != 1) throw Error("attribution: need exactly one dropout stream");
  Tensor grad(image.shape());
  const int labels[] = {label};
  const std::span<const RngStream> streams =
      dropout.active ? std::span<const RngStream>(dropout.streams) : std::span<const RngStream>();
  BatchedInputGradients(model, AsBatch(image), labels, streams, dropout.rate_override,
                        [&](std::size_t, std::span<const float> g) { std::copy(g.begin(), g.end(), grad.data().begin()); });
  return grad;
}

namespace {

// Mean gradient along the midpoint path, for each sample stream (or one
// deterministic run when `streams` is empty); returns attribution tensors.
std::vector<Tensor> IntegratedGradientSamples(const Model& model, const Tensor& image, int label, const IGConfig& ig,
                                              std::span<const RngStream> streams,
                                              std::optional<float> rate_override) {
  ig.validate(image);
  const auto per = image.numel();
  const std::size_t samples = streams.empty() ? 1 : streams.size();
  const auto m = static_cast<std::size_t>(ig.steps);
  std::vector<float> baseline(per, 0.0f);
  if (ig.baseline.defined()) std::copy(ig.baseline.data().begin(), ig.baseline.data().end(), baseline.begin());
  const auto x = image.data();

  std::vector<std::vector<double>> accum(samples, std::vector<double>(per, 0.0));
  // Jobs are (sample, step) pairs, processed in bounded blocks.
  const std::size_t total = samples * m;
  constexpr std::size_t kBlock = 256;
  for (std::size_t j0 = 0; j0 < total; j0 += kBlock) {
    const std::size_t j1 = std::min(total, j0 + kBlock);
    Tensor inputs({static_cast<std::int64_t>(j1 - j0), image.dim(0), image.dim(1), image.dim(2)});
    std::vector<int> labels(j1 - j0, label);
    std::vector<RngStream> job_streams;
    auto dst = inputs.data();
    for (std::size_t j = j0; j < j1; ++j) {
      const std::size_t step = j % m;
      const double alpha = (static_cast<double>(step) + 0.5) / static_cast<double>(m);
      float* row = dst.data() + (j - j0) * per;
      for (std::size_t i = 0; i < per; ++i) {
        row[i] = static_cast<float>(baseline[i] + alpha * (static_cast<double>(x[i]) - baseline[i]));
      }
      if (!streams.empty()) job_streams.push_back(streams[j / m]);
    }
    BatchedInputGradients(model, inputs, labels, job_streams, rate_override,
                          [&](std::size_t job, std::span<const float> g) {
                            auto& acc = accum[(j0 + job) / m];
                            for (std::size_t i = 0; i < per; ++i) acc[i] += g[i];
                          });
  }
  std::vector<Tensor> out;
  out.reserve(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    Tensor attr(image.shape());
    auto a = attr.data();
    for (std::size_t i = 0; i < per; ++i) {
      a[i] = static_cast<float>(accum[s][i] / static_cast<double>(m) * (static_cast<double>(x[i]) - baseline[i]));
    }
    out.push_back(std::move(attr));
  }
  return out;
}

std::vector<Tensor> GradientSamples(const Model& model, const Tensor& image, int label, bool times_input,
                                    std::span<const RngStream> streams, std::optional<float> rate_override) {
  const auto per = image.numel();
  const std::size_t samples = streams.empty() ? 1 : streams.size();
  std::vector<Tensor> out(samples);
  constexpr std::size_t kBlock = 256;
  const auto x = image.data();
  for (std::size_t s0 = 0; s0 < samples; s0 += kBlock) {
    const std::size_t s1 = std::min(samples, s0 + kBlock);
    Tensor inputs({static_cast<std::int64_t>(s1 - s0), image.dim(0), image.dim(1), image.dim(2)});
    for (std::size_t s = s0; s < s1; ++s) std::copy(x.begin(), x.end(), inputs.data().begin() + (s - s0) * per);
    std::vector<int> labels(s1 - s0, label);
    const auto job_streams = streams.empty() ? streams : streams.subspan(s0, s1 - s0);
    BatchedInputGradients(model, inputs, labels, job_streams, rate_override,
                          [&](std::size_t job, std::span<const float> g) {
                            Tensor t(image.shape());
                            auto d = t.data();
                            for (std::size_t i = 0; i < per; ++i) d[i] = times_input ? g[i] * x[i] : g[i];
                            out[s0 + job] = std::move(t);
                          });
  }
  return out;
}

}  // namespace

std::vector<Tensor> RawAttributionSamples(const Model& model, const Tensor& image, int label, Method method,
                                          const IGConfig& ig, std::span<const RngStream> streams,
                                          std::optional<float> rate_override) {
  CheckImage(model, image, label);
  if (streams.empty()) throw Error("attribution samples: at least one stream required");
  switch (method) {
    case Method::kGradient: return GradientSamples(model, image, label, false, streams, rate_override);
    case Method::kGradientXInput: return GradientSamples(model, image, label, true, streams, rate_override);
    case Method::kIntegratedGradients:
      return IntegratedGradientSamples(model, image, label, ig, streams, rate_override);
  }
  throw Error("unknown method");
}

Tensor RawAttribution(const Model& model, const Tensor& image, int label, Method method, const IGConfig& ig,
                      const DropoutControl& dropout) {
  CheckImage(model, image, label);
  if (dropout.active && dropout.streams.size() != 1) throw Error("attribution: need exactly one dropout stream");
  const std::span<const RngStream> streams =
      dropout.active ? std::span<const RngStream>(dropout.streams) : std::span<const RngStream>();
  switch (method) {
    case Method::kGradient:
      return GradientSamples(model, image, label, false, streams, dropout.rate_override).front();
    case Method::kGradientXInput:
      return GradientSamples(model, image, label, true, streams, dropout.rate_override).front();
    case Method::kIntegratedGradients:
      return IntegratedGradientSamples(model, image, label, ig, streams, dropout.rate_override).front();
  }
  throw Error("unknown method");
}

SaliencyMap Aggregate(const Tensor& raw, Aggregation aggregation, Method method, int label) {
  if (raw.rank() != 3) throw Error("aggregate: expected (C,H,W), got " + ShapeToString(raw.shape()));
  SaliencyMap map;
  map.height = static_cast<int>(raw.dim(1));
  map.width = static_cast<int>(raw.dim(2));
  map.method = method;
  map.label = label;
  map.aggregation = aggregation;
  const auto c = raw.dim(0);
  const auto hw = static_cast<std::size_t>(map.height) * map.width;
  map.values.resize(hw);
  const auto v = raw.data();
  for (std::size_t p = 0; p < hw; ++p) {
    double s = 0.0;
    for (std::int64_t ch = 0; ch < c; ++ch) s += v[static_cast<std::size_t>(ch) * hw + p];
    if (aggregation == Aggregation::kPositive) s = std::max(s, 0.0);
    if (aggregation == Aggregation::kAbsolute) s = std::abs(s);
    map.values[p] = static_cast<float>(s);
  }
  for (float f : map.values) {
    if (!std::isfinite(f)) throw Error("attribution produced non-finite values");
  }
  return map;
}

SaliencyMap Gradient(const Model& model, const Tensor& image, int label, Aggregation aggregation,
                     const DropoutControl& dropout) {
  return Explain(model, image, label, Method::kGradient, aggregation, {}, dropout);
}

SaliencyMap GradientXInput(const Model& model, const Tensor& image, int label, Aggregation aggregation,
                           const DropoutControl& dropout) {
  return Explain(model, image, label, Method::kGradientXInput, aggregation, {}, dropout);
}

SaliencyMap IntegratedGradients(const Model& model, const Tensor& image, int label, const IGConfig& ig,
                                Aggregation aggregation, const DropoutControl& dropout) {
  return Explain(model, image, label, Method::kIntegratedGradients, aggregation, ig, dropout);
}

SaliencyMap Explain(const Model& model, const Tensor& image, int label, Method method, Aggregation aggregation,
                    const IGConfig& ig, const DropoutControl& dropout) {
  auto map = Aggregate(RawAttribution(model, image, label, method, ig, dropout), aggregation, method, label);
  if (dropout.active) map.lineage = "dropout stream key=" + std::to_string(dropout.streams.front().key());
  return map;
}

void WriteSaliencyMap(const std::filesystem::path& stem, const SaliencyMap& map, const std::string& run_config_json) {
  const std::string name = stem.filename().string();
  json meta = {{"height", map.height},
               {"width", map.width},
               {"method", MethodName(map.method)},
               {"label", map.label},
               {"aggregation", AggregationName(map.aggregation)},
               {"lineage", map.lineage},
               {"raster", name + ".f32"},
               {"heatmap", name + ".png"},
               {"run_config", json::parse(run_config_json)}};
  auto raster_path = stem;
  raster_path += ".f32";
  auto sidecar_path = stem;
  sidecar_path += ".json";
  auto png_path = stem;
  png_path += ".png";
  WriteRaster(raster_path, {map.height, map.width}, map.values,
              json{{"method", MethodName(map.method)}, {"label", map.label}}.dump());
  WriteFileAtomic(sidecar_path, meta.dump(1) + "\n");
  WritePng(png_path, Heatmap(map.values, map.height, map.width));
}

SaliencyMap ReadSaliencyMap(const std::filesystem::path& stem) {
  auto raster_path = stem;
  raster_path += ".f32";
  auto sidecar_path = stem;
  sidecar_path += ".json";
  SaliencyMap map;
  try {
    const json meta = json::parse(ReadFileText(sidecar_path));
    map.height = meta.at("height").get<int>();
    map.width = meta.at("width").get<int>();
    map.method = ParseMethod(meta.at("method").get<std::string>());
    map.label = meta.at("label").get<int>();
    map.aggregation = ParseAggregation(meta.at("aggregation").get<std::string>());
    map.lineage = meta.at("lineage").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed saliency sidecar " + sidecar_path.string() + ": " + e.what());
  }
  auto raster = ReadRaster(raster_path);
  if (raster.shape != Shape{map.height, map.width}) {
    throw IoError("saliency raster shape does not match its sidecar: " + raster_path.string());
  }
  map.values = std::move(raster.values);
  return map;
}

}  // namespace xaib
