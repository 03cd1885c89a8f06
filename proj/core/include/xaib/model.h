#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xaib/dataset.h"
#include "xaib/rng.h"
#include "xaib/tensor.h"

namespace xaib {

struct ConvBlock {
  int channels = 16;
  int kernel = 3;  // odd; "same" padding
  int pool = 2;    // maxpool window and stride; 1 disables pooling
  bool operator==(const ConvBlock&) const = default;
};

// conv blocks -> flatten -> [dropout] -> dense(classes). With no conv blocks
// the network is a linear classifier on the flattened input.
struct ModelSpec {
  int in_channels = 3;
  int height = 64;
  int width = 64;
  std::vector<ConvBlock> blocks;
  bool has_dropout = true;
  float dropout_rate = 0.5f;
  int num_classes = 3;

  void validate() const;
  std::int64_t feature_size() const;
  bool operator==(const ModelSpec&) const = default;

  // 16/32/64-channel 3×3 conv blocks with 2×2 pooling, dropout 0.5.
  static ModelSpec Desk(int num_classes, int height = 64, int width = 64, int in_channels = 3);
  // Flatten -> dense, no dropout layer.
  static ModelSpec Linear(int num_classes, int height, int width, int in_channels = 1);
};

// How the dropout layer behaves in one forward pass. Inactive unless asked.
struct DropoutControl {
  bool active = false;
  std::optional<float> rate_override;
  // One stream for the whole batch or one per batch row (see ops::dropout).
  std::vector<RngStream> streams;

  static DropoutControl Inactive() { return {}; }
  static DropoutControl Sampled(RngStream stream, std::optional<float> rate = std::nullopt) {
    return DropoutControl{true, rate, {stream}};
  }
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

class Model {
 public:
  Model() = default;
  // Fan-in scaled uniform init, seeded.
  Model(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  Tensor& parameter(const std::string& name);

  // Pre-softmax scores, x: (N,C,H,W) -> (N,classes). With track_weights the
  // parameters participate in the tape (training); otherwise only x can
  // carry gradients and the weights are read-only.
  Tensor logits(Tape& tape, const Tensor& x, const DropoutControl& dropout = {},
                bool track_weights = false) const;
  // Output of the last conv block, flattened: (N, feature_size).
  Tensor features(Tape& tape, const Tensor& x, bool track_weights = false) const;
  Tensor head(Tape& tape, const Tensor& features, const DropoutControl& dropout = {},
              bool track_weights = false) const;

  float effective_dropout_rate(const DropoutControl& dropout) const;

 private:
  Tensor weight(std::size_t i, bool track) const;
  ModelSpec spec_;
  std::vector<NamedTensor> params_;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 20;
  int batch_size = 32;
  std::uint64_t seed = 7;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainingMeta {
  TrainConfig config;
  std::vector<EpochLog> epochs;
};

struct Checkpoint {
  Model model;
  TrainingMeta meta;
};

// Adam with standard moments; dropout active during the update steps,
// inactive for the per-epoch validation pass. Throws Error naming the epoch
// when the loss becomes non-finite.
Checkpoint Train(const ModelSpec& spec, const ImageSet& train, const ImageSet& val,
                 const TrainConfig& config);

// Checkpoint file: magic "XAIBCKPT", u32 version, u64 header length, JSON
// header (spec, tensor table, training metadata), then each tensor's
// little-endian float32 values in header order.
std::vector<std::uint8_t> EncodeCheckpoint(const Checkpoint& ckpt, const std::string& extra_json = "{}");
Checkpoint DecodeCheckpoint(std::span<const std::uint8_t> bytes);
void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt,
                    const std::string& extra_json = "{}");
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

std::string ModelSpecToJson(const ModelSpec& spec);
ModelSpec ModelSpecFromJson(const std::string& text);

// Softmax probabilities (double, rows sum to 1) for images (N,C,H,W) or a
// single (C,H,W) image.
std::vector<std::vector<double>> PredictBatch(const Model& model, const Tensor& images,
                                              const DropoutControl& dropout = {});
std::vector<double> Predict(const Model& model, const Tensor& image);
// Labels by descending probability, ties to the lower class index.
std::vector<int> TopK(std::span<const double> probabilities, int k);
std::vector<int> PredictTopK(const Model& model, const Tensor& image, int k);
int ArgMax(std::span<const double> values);
int ArgMax(std::span<const float> values);

struct EvalReport {
  std::vector<std::pair<int, double>> topk;  // (k, accuracy)
  std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]
  std::size_t count = 0;

  double accuracy(int k) const;
};

// Scores already-computed probability rows.
EvalReport EvaluatePredictions(const std::vector<std::vector<double>>& probabilities,
                               std::span<const int> truths, std::span<const int> ks, int num_classes);
EvalReport Evaluate(const Model& model, const ImageSet& set, std::span<const int> ks);

// Per-class shuffled split; each class keeps floor(n*ratio) (at least 1,
// at most n-1) samples in the first part.
std::pair<RunManifest, RunManifest> SplitStratified(const RunManifest& manifest, double ratio,
                                                    std::uint64_t seed);

}  // namespace xaib
