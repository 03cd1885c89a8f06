#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xaib/model.h"
#include "xaib/rng.h"
#include "xaib/tensor.h"

namespace xaib {

enum class Method { kGradient, kGradientXInput, kIntegratedGradients };

// How per-channel attributions collapse to one value per pixel. All modes sum
// over channels first; positive then clips at 0, absolute takes |.|.
enum class Aggregation { kRawSum, kPositive, kAbsolute };

const char* MethodName(Method m);
Method ParseMethod(const std::string& name);  // also accepts grad, gxi, ig
const char* AggregationName(Aggregation a);
Aggregation ParseAggregation(const std::string& name);
inline constexpr Method kAllMethods[] = {Method::kGradient, Method::kGradientXInput,
                                          Method::kIntegratedGradients};

struct SaliencyMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;  // row-major, height*width
  Method method = Method::kGradient;
  int label = -1;
  Aggregation aggregation = Aggregation::kRawSum;
  // Where the map came from: "deterministic" or "mcd seed=<n>" etc.
  std::string lineage = "deterministic";

  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct IGConfig {
  Tensor baseline;  // undefined means all-zeros, same shape as the image
  int steps = 64;

  void validate(const Tensor& image) const;
};

// The explained score is the pre-softmax logit of `label`.
float TargetLogit(const Model& model, const Tensor& image, int label, const DropoutControl& dropout = {});
// Deterministic (dropout inactive) argmax class.
int PredictedLabel(const Model& model, const Tensor& image);

// d logit[label] / d image, shape (C,H,W).
Tensor InputGradient(const Model& model, const Tensor& image, int label, const DropoutControl& dropout = {});

// Per-channel attribution (C,H,W) before aggregation. For integrated
// gradients, the m-step midpoint rule along baseline -> image.
Tensor RawAttribution(const Model& model, const Tensor& image, int label, Method method,
                      const IGConfig& ig = {}, const DropoutControl& dropout = {});

SaliencyMap Aggregate(const Tensor& raw, Aggregation aggregation, Method method, int label);

SaliencyMap Gradient(const Model& model, const Tensor& image, int label, Aggregation aggregation,
                     const DropoutControl& dropout = {});
SaliencyMap GradientXInput(const Model& model, const Tensor& image, int label, Aggregation aggregation,
                           const DropoutControl& dropout = {});
SaliencyMap IntegratedGradients(const Model& model, const Tensor& image, int label, const IGConfig& ig,
                                Aggregation aggregation, const DropoutControl& dropout = {});
SaliencyMap Explain(const Model& model, const Tensor& image, int label, Method method, Aggregation aggregation,
                    const IGConfig& ig = {}, const DropoutControl& dropout = {});

// Raw attributions of one image under several dropout samples: entry t uses
// streams[t] for both the forward and the backward pass (and for every IG
// path point). Rows are batched internally; results do not depend on the
// batching.
std::vector<Tensor> RawAttributionSamples(const Model& model, const Tensor& image, int label, Method method,
                                          const IGConfig& ig, std::span<const RngStream> streams,
                                          std::optional<float> rate_override = std::nullopt);

// Gradient sink for the batched engine: job index and its (C,H,W) gradient.
using GradientSink = std::function<void(std::size_t job, std::span<const float> grad)>;

// Evaluates d logit[labels[j]] / d inputs[j] for every job j. `inputs` is
// (J,C,H,W); streams is empty (dropout inactive) or holds one stream per job.
void BatchedInputGradients(const Model& model, const Tensor& inputs, std::span<const int> labels,
                           std::span<const RngStream> streams, std::optional<float> rate_override,
                           const GradientSink& sink);

// Sidecar-described saliency files: <stem>.f32 (float raster), <stem>.json
// (dims, method, label, aggregation, lineage, run_config) and <stem>.png
// (min-max heatmap).
void WriteSaliencyMap(const std::filesystem::path& stem, const SaliencyMap& map,
                      const std::string& run_config_json = "{}");
SaliencyMap ReadSaliencyMap(const std::filesystem::path& stem);

}  // namespace xaib
