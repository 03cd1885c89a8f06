#include "xaib/model.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "xaib/error.h"
#include "xaib/ops.h"

namespace xaib {

void ModelSpec::validate() const {
  if (num_classes < 2) throw Error("model spec: need at least 2 classes, got " + std::to_string(num_classes));
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
    throw Error("model spec: dropout rate must lie in [0, 1), got " + std::to_string(dropout_rate));
  }
  if (in_channels < 1 || height < 1 || width < 1) throw Error("model spec: input shape must be positive");
  int h = height, w = width;
  for (const auto& b : blocks) {
    if (b.channels < 1 || b.kernel < 1 || b.kernel % 2 == 0 || b.pool < 1) {
      throw Error("model spec: conv blocks need channels >= 1, odd kernel, pool >= 1");
    }
    if (h < b.pool || w < b.pool) throw Error("model spec: input too small for the conv/pool stack");
    h /= b.pool;
    w /= b.pool;
  }
}

std::int64_t ModelSpec::feature_size() const {
  std::int64_t c = in_channels, h = height, w = width;
  for (const auto& b : blocks) {
    c = b.channels;
    h = (h - b.pool) / b.pool + 1;
    w = (w - b.pool) / b.pool + 1;
  }
  return c * h * w;
}

ModelSpec ModelSpec::Desk(int num_classes, int height, int width, int in_channels) {
  ModelSpec s;
  s.in_channels = in_channels;
  s.height = height;
  s.width = width;
  s.blocks = {{16, 3, 2}, {32, 3, 2}, {64, 3, 2}};
  s.has_dropout = true;
  s.dropout_rate = 0.5f;
  s.num_classes = num_classes;
  return s;
}

ModelSpec ModelSpec::Linear(int num_classes, int height, int width, int in_channels) {
  ModelSpec s;
  s.in_channels = in_channels;
  s.height = height;
  s.width = width;
  s.has_dropout = false;
  s.dropout_rate = 0.0f;
  s.num_classes = num_classes;
  return s;
}

namespace {

Tensor UniformInit(Shape shape, double bound, RngStream rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>((2.0 * rng.next_uniform() - 1.0) * bound);
  return t;
}

}  // namespace

Model::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  const RngStream root(seed);
  std::uint64_t tag = 0;
  std::int64_t in = spec_.in_channels;
  for (std::size_t i = 0; i < spec_.blocks.size(); ++i) {
    const auto& b = spec_.blocks[i];
    const std::int64_t fan_in = in * b.kernel * b.kernel;
    params_.push_back({"conv" + std::to_string(i) + ".weight",
                       UniformInit({b.channels, in, b.kernel, b.kernel}, std::sqrt(6.0 / fan_in),
                                   root.derive(tag++))});
    params_.push_back({"conv" + std::to_string(i) + ".bias", Tensor({b.channels})});
    ++tag;
    in = b.channels;
  }
  const auto features = spec_.feature_size();
  params_.push_back({"head.weight", UniformInit({spec_.num_classes, features},
                                                std::sqrt(3.0 / static_cast<double>(features)),
                                                root.derive(tag++))});
  params_.push_back({"head.bias", Tensor({spec_.num_classes})});
}

Tensor& Model::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw Error("model has no parameter '" + name + "'");
}

Tensor Model::weight(std::size_t i, bool track) const {
  return track ? params_.at(i).value : params_.at(i).value.detached();
}

float Model::effective_dropout_rate(const DropoutControl& dropout) const {
  return dropout.rate_override.value_or(spec_.dropout_rate);
}

Tensor Model::features(Tape& tape, const Tensor& x, bool track_weights) const {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels || x.dim(2) != spec_.height || x.dim(3) != spec_.width) {
    throw Error("model: expected input (N," + std::to_string(spec_.in_channels) + "," +
                std::to_string(spec_.height) + "," + std::to_string(spec_.width) + "), got " +
                ShapeToString(x.shape()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < spec_.blocks.size(); ++i) {
    const auto& b = spec_.blocks[i];
    h = ops::conv2d(tape, h, weight(2 * i, track_weights), weight(2 * i + 1, track_weights),
                    {1, b.kernel / 2});
    h = ops::relu(tape, h);
    if (b.pool > 1) h = ops::maxpool2d(tape, h, b.pool, b.pool);
  }
  return ops::flatten(tape, h);
}

Tensor Model::head(Tape& tape, const Tensor& features, const DropoutControl& dropout,
                   bool track_weights) const {
  Tensor h = features;
  if (spec_.has_dropout) {
    const float rate = effective_dropout_rate(dropout);
    if (dropout.active && dropout.streams.empty()) throw Error("model: active dropout needs an rng stream");
    h = ops::dropout(tape, h, rate, dropout.streams, dropout.active);
  }
  const std::size_t n = params_.size();
  return ops::dense(tape, h, weight(n - 2, track_weights), weight(n - 1, track_weights));
}

Tensor Model::logits(Tape& tape, const Tensor& x, const DropoutControl& dropout, bool track_weights) const {
  return head(tape, features(tape, x, track_weights), dropout, track_weights);
}

namespace {

Tensor GatherBatch(const Tensor& images, std::span<const std::int32_t> rows) {
  const auto per = static_cast<std::size_t>(images.dim(1) * images.dim(2) * images.dim(3));
  Tensor out({static_cast<std::int64_t>(rows.size()), images.dim(1), images.dim(2), images.dim(3)});
  auto src = images.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(src.begin() + rows[i] * per, per, dst.begin() + i * per);
  }
  return out;
}

Tensor SliceBatch(const Tensor& images, std::int64_t begin, std::int64_t end) {
  const auto per = images.dim(1) * images.dim(2) * images.dim(3);
  auto src = images.data().subspan(static_cast<std::size_t>(begin * per), static_cast<std::size_t>((end - begin) * per));
  return Tensor({end - begin, images.dim(1), images.dim(2), images.dim(3)},
                std::vector<float>(src.begin(), src.end()));
}

std::vector<double> SoftmaxRow(std::span<const float> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  std::vector<double> p(row.size());
  double z = 0.0;
  for (std::size_t c = 0; c < row.size(); ++c) z += (p[c] = std::exp(row[c] - mx));
  for (auto& v : p) v /= z;
  return p;
}

constexpr std::int64_t kEvalChunk = 64;

struct ValStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

ValStats Validate(const Model& model, const ImageSet& set) {
  ValStats s;
  if (set.size() == 0) return s;
  const auto n = static_cast<std::int64_t>(set.size());
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::int64_t b = 0; b < n; b += kEvalChunk) {
    const auto e = std::min(n, b + kEvalChunk);
    Tape tape;
    const Tensor logits = model.logits(tape, SliceBatch(set.images, b, e));
    const auto k = logits.dim(1);
    for (std::int64_t i = b; i < e; ++i) {
      const auto row = logits.data().subspan(static_cast<std::size_t>((i - b) * k), static_cast<std::size_t>(k));
      const auto p = SoftmaxRow(row);
      loss -= std::log(std::max(p[set.labels[i]], 1e-300));
      correct += ArgMax(p) == set.labels[i];
    }
  }
  s.loss = loss / n;
  s.accuracy = static_cast<double>(correct) / n;
  return s;
}

}  // namespace

Checkpoint Train(const ModelSpec& spec, const ImageSet& train, const ImageSet& val, const TrainConfig& config) {
  spec.validate();
  if (config.epochs < 0 || config.batch_size < 1 || !(config.learning_rate > 0.0)) {
    throw Error("train: need epochs >= 0, batch >= 1, lr > 0");
  }
  for (const ImageSet* set : {&train, &val}) {
    for (int label : set->labels) {
      if (label < 0 || label >= spec.num_classes) {
        throw Error("train: label " + std::to_string(label) + " outside [0, " + std::to_string(spec.num_classes) + ")");
      }
    }
  }
  Checkpoint ckpt{Model(spec, config.seed), TrainingMeta{config, {}}};
  if (config.epochs == 0) return ckpt;
  if (train.size() == 0) throw Error("train: empty training set");

  auto& params = ckpt.model.parameters();
  for (auto& p : params) p.value.set_requires_grad(true);
  std::vector<std::vector<float>> m1(params.size()), m2(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m1[i].assign(params[i].value.numel(), 0.0f);
    m2[i].assign(params[i].value.numel(), 0.0f);
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::int64_t step = 0;
  const RngStream root = RngStream(config.seed).derive(0x7472616eULL);
  const auto n = static_cast<std::int32_t>(train.size());

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = RandomPermutation(n, root.derive(2 * epoch));
    const RngStream dropout_root = root.derive(2 * epoch + 1);
    double loss_sum = 0.0;
    for (std::int32_t b = 0, batch = 0; b < n; b += config.batch_size, ++batch) {
      const auto e = std::min(n, b + config.batch_size);
      const std::span<const std::int32_t> rows(order.data() + b, static_cast<std::size_t>(e - b));
      std::vector<int> labels;
      for (auto r : rows) labels.push_back(train.labels[r]);

      Tape tape;
      const Tensor logits = ckpt.model.logits(tape, GatherBatch(train.images, rows),
                                              DropoutControl::Sampled(dropout_root.derive(batch)), true);
      const Tensor loss = ops::cross_entropy(tape, logits, labels);
      if (!std::isfinite(loss.item())) {
        throw Error("train: loss diverged (non-finite) at epoch " + std::to_string(epoch));
      }
      loss_sum += static_cast<double>(loss.item()) * (e - b);
      for (auto& p : params) p.value.zero_grad();
      tape.backward(loss);

      ++step;
      const double lr_t = config.learning_rate * std::sqrt(1.0 - std::pow(kBeta2, static_cast<double>(step))) /
                          (1.0 - std::pow(kBeta1, static_cast<double>(step)));
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].value;
        if (!p.has_grad()) continue;
        auto w = p.data();
        auto g = p.grad();
        for (std::size_t j = 0; j < w.size(); ++j) {
          m1[i][j] = static_cast<float>(kBeta1 * m1[i][j] + (1.0 - kBeta1) * g[j]);
          m2[i][j] = static_cast<float>(kBeta2 * m2[i][j] + (1.0 - kBeta2) * g[j] * g[j]);
          w[j] -= static_cast<float>(lr_t * m1[i][j] / (std::sqrt(static_cast<double>(m2[i][j])) + kEps));
        }
      }
    }
    const double train_loss = loss_sum / n;
    if (!std::isfinite(train_loss)) {
      throw Error("train: loss diverged (non-finite) at epoch " + std::to_string(epoch));
    }
    const auto v = Validate(ckpt.model, val);
    ckpt.meta.epochs.push_back({epoch, train_loss, v.loss, v.accuracy});
  }
  for (auto& p : params) {
    p.value.set_requires_grad(false);
    p.value.zero_grad();
  }
  return ckpt;
}

int ArgMax(std::span<const double> values) {
  if (values.empty()) throw Error("argmax of empty vector");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

int ArgMax(std::span<const float> values) {
  if (values.empty()) throw Error("argmax of empty vector");
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::vector<std::vector<double>> PredictBatch(const Model& model, const Tensor& images,
                                              const DropoutControl& dropout) {
  Tensor batch = images;
  if (images.rank() == 3) batch = images.reshaped({1, images.dim(0), images.dim(1), images.dim(2)});
  if (batch.rank() != 4) throw Error("predict: expected (C,H,W) or (N,C,H,W), got " + ShapeToString(images.shape()));
  std::vector<std::vector<double>> out;
  const auto n = batch.dim(0);
  if (dropout.active && dropout.streams.size() > 1 && static_cast<std::int64_t>(dropout.streams.size()) != n) {
    throw Error("predict: per-row dropout streams must match the batch size");
  }
  for (std::int64_t b = 0; b < n; b += kEvalChunk) {
    const auto e = std::min(n, b + kEvalChunk);
    DropoutControl chunk = dropout;
    if (dropout.streams.size() > 1) {
      chunk.streams.assign(dropout.streams.begin() + b, dropout.streams.begin() + e);
    } else if (dropout.active && n > kEvalChunk) {
      throw Error("predict: a single dropout stream cannot span multiple chunks; pass per-row streams");
    }
    Tape tape;
    const Tensor logits = model.logits(tape, SliceBatch(batch, b, e), chunk);
    const auto k = logits.dim(1);
    for (std::int64_t i = 0; i < e - b; ++i) {
      out.push_back(SoftmaxRow(logits.data().subspan(static_cast<std::size_t>(i * k), static_cast<std::size_t>(k))));
    }
  }
  return out;
}

std::vector<double> Predict(const Model& model, const Tensor& image) {
  if (image.rank() != 3) throw Error("predict: expected a (C,H,W) image, got " + ShapeToString(image.shape()));
  return PredictBatch(model, image).front();
}

std::vector<int> TopK(std::span<const double> probabilities, int k) {
  const int n = static_cast<int>(probabilities.size());
  if (k < 1 || k > n) throw Error("top-k: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return probabilities[a] > probabilities[b]; });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

std::vector<int> PredictTopK(const Model& model, const Tensor& image, int k) {
  return TopK(Predict(model, image), k);
}

double EvalReport::accuracy(int k) const {
  for (const auto& [kk, acc] : topk) {
    if (kk == k) return acc;
  }
  throw Error("eval report has no top-" + std::to_string(k) + " entry");
}

EvalReport EvaluatePredictions(const std::vector<std::vector<double>>& probabilities, std::span<const int> truths,
                               std::span<const int> ks, int num_classes) {
  if (probabilities.size() != truths.size()) throw Error("evaluate: predictions and labels differ in length");
  if (probabilities.empty()) throw Error("evaluate: empty sample set");
  EvalReport r;
  r.count = truths.size();
  r.confusion.assign(static_cast<std::size_t>(num_classes), std::vector<std::int64_t>(num_classes, 0));
  std::map<int, std::size_t> hits;
  for (int k : ks) hits[k] = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const auto& p = probabilities[i];
    if (static_cast<int>(p.size()) != num_classes) throw Error("evaluate: probability row has wrong width");
    if (truths[i] < 0 || truths[i] >= num_classes) throw Error("evaluate: label out of range");
    ++r.confusion[truths[i]][ArgMax(p)];
    for (auto& [k, h] : hits) {
      const auto top = TopK(p, std::min(k, num_classes));
      h += std::find(top.begin(), top.end(), truths[i]) != top.end();
    }
  }
  for (const auto& [k, h] : hits) r.topk.emplace_back(k, static_cast<double>(h) / static_cast<double>(r.count));
  return r;
}

EvalReport Evaluate(const Model& model, const ImageSet& set, std::span<const int> ks) {
  return EvaluatePredictions(PredictBatch(model, set.images), set.labels, ks, model.spec().num_classes);
}

std::pair<RunManifest, RunManifest> SplitStratified(const RunManifest& manifest, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw Error("split: ratio must lie strictly between 0 and 1 (got " + std::to_string(ratio) +
                "); both parts must be non-empty");
  }
  std::vector<std::vector<std::size_t>> by_class(manifest.classes.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) by_class.at(manifest.records[i].label).push_back(i);
  std::string too_small;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < 2) too_small += (too_small.empty() ? "" : ", ") + manifest.classes[c];
  }
  if (!too_small.empty()) throw Error("split: classes with fewer than 2 samples: " + too_small);

  RunManifest first = manifest, second = manifest;
  first.records.clear();
  second.records.clear();
  std::vector<std::pair<std::size_t, bool>> assignment;  // (record, in first)
  const RngStream root(seed);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const auto& members = by_class[c];
    const auto n = members.size();
    auto take = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9));
    take = std::clamp<std::size_t>(take, 1, n - 1);
    const auto perm = RandomPermutation(static_cast<std::int32_t>(n), root.derive(c));
    for (std::size_t j = 0; j < n; ++j) assignment.emplace_back(members[perm[j]], j < take);
  }
  std::sort(assignment.begin(), assignment.end());
  for (const auto& [idx, in_first] : assignment) {
    (in_first ? first : second).records.push_back(manifest.records[idx]);
  }
  return {std::move(first), std::move(second)};
}

}  // namespace xaib
