#include "run_config.h"

#include <algorithm>
#include <cstdlib>
#include <sstream>

#include "json.hpp"
#include "xaib/attribution.h"
#include "xaib/dataset.h"
#include "xaib/error.h"
#include "xaib/faithfulness.h"
#include "xaib/localisation.h"
#include "xaib/raster_io.h"

namespace xaib::cli {

using nlohmann::json;

const std::vector<KeySpec>& ConfigKeys() {
  static const std::vector<KeySpec> keys = {
      {"manifest", ValueKind::kString, "dataset manifest JSON"},
      {"checkpoint", ValueKind::kString, "model checkpoint file"},
      {"out", ValueKind::kString, "output directory"},
      {"seed", ValueKind::kUint, "global seed"},
      {"epochs", ValueKind::kInt, "training epochs"},
      {"learning_rate", ValueKind::kDouble, "Adam learning rate"},
      {"batch_size", ValueKind::kInt, "training batch size"},
      {"val_ratio", ValueKind::kDouble, "train share when the manifest has no val split"},
      {"dropout", ValueKind::kDouble, "dropout rate of the model"},
      {"methods", ValueKind::kStringList, "attribution methods"},
      {"metrics", ValueKind::kStringList, "localisation metrics"},
      {"split", ValueKind::kString, "manifest split to evaluate"},
      {"ig_steps", ValueKind::kInt, "integrated-gradients steps"},
      {"aggregation", ValueKind::kString, "channel aggregation: raw-sum, positive, absolute"},
      {"top_k", ValueKind::kInt, "k for top-k intersection"},
      {"parts", ValueKind::kStringList, "mask parts counted as ground truth"},
      {"limit", ValueKind::kInt, "use only the first N images of the split (0 = all)"},
      {"samples", ValueKind::kInt, "MC-dropout samples T"},
      {"mcd_rate", ValueKind::kDouble, "dropout rate override for MC-dropout"},
      {"mcd_seed", ValueKind::kUint, "base seed of the MC-dropout streams"},
      {"quantiles", ValueKind::kDoubleList, "quantile levels for quantile maps"},
      {"images", ValueKind::kIntList, "split positions explained by mcd"},
      {"bins", ValueKind::kInt, "histogram bins"},
      {"flip_step", ValueKind::kDouble, "pixel-flipping step fraction"},
      {"flip_max", ValueKind::kDouble, "largest flipped fraction"},
      {"fill", ValueKind::kString, "flip fill: constant, dataset-mean, image-mean"},
      {"fill_value", ValueKind::kDouble, "fill for the constant strategy"},
      {"patch", ValueKind::kInt, "flip patch side in pixels"},
      {"random_seeds", ValueKind::kInt, "random-baseline seed count"},
      {"classes", ValueKind::kStringList, "classes for flip (empty = all)"},
      {"image_size", ValueKind::kInt, "synthetic image side"},
      {"train_per_class", ValueKind::kInt, "synthetic training images per class"},
      {"val_per_class", ValueKind::kInt, "synthetic validation images per class"},
      {"test_per_class", ValueKind::kInt, "synthetic test images per class"},
      {"noise", ValueKind::kDouble, "synthetic pixel noise"},
      {"min_object", ValueKind::kInt, "smallest synthetic object side"},
      {"max_object", ValueKind::kInt, "largest synthetic object side"},
  };
  return keys;
}

const KeySpec* FindKey(const std::string& key) {
  for (const auto& k : ConfigKeys()) {
    if (k.key == key) return &k;
  }
  return nullptr;
}

std::string FlagName(const KeySpec& spec) {
  std::string name = "--" + spec.key;
  std::replace(name.begin(), name.end(), '_', '-');
  return name;
}

std::string EnvName(const KeySpec& spec) {
  std::string name = "XAIB_" + spec.key;
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::toupper(c); });
  return name;
}

EnvLookup ProcessEnv() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (v == nullptr) return std::nullopt;
    return std::string(v);
  };
}

namespace {

std::vector<std::string> SplitList(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

template <typename T>
T ParseNumber(const std::string& text, const std::string& where) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) throw IoError(where + ": cannot parse '" + text + "' as a number");
  return v;
}

// Typed JSON value from a flag or environment string.
json FromText(const KeySpec& spec, const std::string& text, const std::string& where) {
  switch (spec.kind) {
    case ValueKind::kString: return text;
    case ValueKind::kInt: return ParseNumber<long long>(text, where);
    case ValueKind::kUint:
      if (!text.empty() && text[0] == '-') throw IoError(where + ": must be non-negative");
      return ParseNumber<unsigned long long>(text, where);
    case ValueKind::kDouble: return ParseNumber<double>(text, where);
    case ValueKind::kBool:
      if (text == "1" || text == "true") return true;
      if (text == "0" || text == "false") return false;
      throw IoError(where + ": expected true or false, got '" + text + "'");
    case ValueKind::kStringList: return SplitList(text);
    case ValueKind::kIntList: {
      json arr = json::array();
      for (const auto& s : SplitList(text)) arr.push_back(ParseNumber<long long>(s, where));
      return arr;
    }
    case ValueKind::kDoubleList: {
      json arr = json::array();
      for (const auto& s : SplitList(text)) arr.push_back(ParseNumber<double>(s, where));
      return arr;
    }
  }
  return nullptr;
}

void CheckType(const KeySpec& spec, const json& v, const std::string& where) {
  bool ok = false;
  switch (spec.kind) {
    case ValueKind::kString: ok = v.is_string(); break;
    case ValueKind::kInt: ok = v.is_number_integer(); break;
    case ValueKind::kUint: ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0); break;
    case ValueKind::kDouble: ok = v.is_number(); break;
    case ValueKind::kBool: ok = v.is_boolean(); break;
    case ValueKind::kStringList:
      ok = v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); });
      break;
    case ValueKind::kIntList:
      ok = v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number_integer(); });
      break;
    case ValueKind::kDoubleList:
      ok = v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); });
      break;
  }
  if (!ok) throw IoError(where + ": wrong type for '" + spec.key + "'");
}

template <typename T>
void Take(const json& doc, const char* key, T& field) {
  if (doc.contains(key)) field = doc.at(key).get<T>();
}

void Require(bool ok, const std::string& message) {
  if (!ok) throw IoError("invalid config: " + message);
}

void Validate(RunConfig& c) {
  Require(c.epochs >= 0, "epochs must be >= 0");
  Require(c.learning_rate > 0.0, "learning_rate must be > 0");
  Require(c.batch_size >= 1, "batch_size must be >= 1");
  Require(c.val_ratio > 0.0 && c.val_ratio < 1.0, "val_ratio must lie in (0, 1)");
  Require(c.dropout >= 0.0 && c.dropout < 1.0, "dropout must lie in [0, 1)");
  Require(c.ig_steps >= 1, "ig_steps must be >= 1");
  Require(c.top_k >= 1, "top_k must be >= 1");
  Require(c.limit >= 0, "limit must be >= 0");
  Require(c.samples >= 1, "samples must be >= 1");
  Require(!c.mcd_rate || (*c.mcd_rate >= 0.0 && *c.mcd_rate < 1.0), "mcd_rate must lie in [0, 1)");
  Require(c.bins >= 1, "bins must be >= 1");
  Require(c.patch >= 1, "patch must be >= 1");
  Require(c.random_seeds >= 1, "random_seeds must be >= 1");
  Require(!c.methods.empty(), "methods must not be empty");
  Require(!c.metrics.empty(), "metrics must not be empty");
  for (double q : c.quantiles) Require(q >= 0.0 && q <= 1.0, "quantiles must lie in [0, 1]");
  for (int i : c.images) Require(i >= 0, "images must be >= 0");
  try {
    for (const auto& m : c.methods) ParseMethod(m);
    ParseAggregation(c.aggregation);
    ParseFill(c.fill);
  } catch (const IoError&) {
    throw;
  } catch (const Error& e) {
    throw IoError(std::string("invalid config: ") + e.what());
  }
  for (const auto& m : c.metrics) {
    Require(std::any_of(std::begin(kAllLocalisationMetrics), std::end(kAllLocalisationMetrics),
                        [&](LocalisationMetric x) { return m == MetricId(x); }),
            "unknown metric '" + m + "'");
  }
  for (const auto& p : c.parts) {
    Require(p == "head" || p == "thorax" || p == "abdomen", "unknown part '" + p + "'");
  }
}

}  // namespace

RunConfig ResolveConfig(const std::string& command, const std::string& config_path, const FlagValues& flags,
                        const EnvLookup& env) {
  json doc = json::object();
  if (!config_path.empty()) {
    const std::string text = ReadFileText(config_path);
    try {
      doc = json::parse(text);
    } catch (const json::exception& e) {
      throw IoError(config_path + ": " + e.what());
    }
    if (!doc.is_object()) throw IoError(config_path + ": config must be a JSON object");
    for (const auto& [key, value] : doc.items()) {
      const KeySpec* spec = FindKey(key);
      if (spec == nullptr) throw IoError(config_path + ": unknown key '" + key + "'");
      CheckType(*spec, value, config_path);
    }
  }
  for (const auto& spec : ConfigKeys()) {
    if (auto v = env(EnvName(spec))) doc[spec.key] = FromText(spec, *v, EnvName(spec));
  }
  for (const auto& [key, text] : flags) {
    const KeySpec* spec = FindKey(key);
    if (spec == nullptr) throw IoError("unknown flag for key '" + key + "'");
    doc[key] = FromText(*spec, text, FlagName(*spec));
  }

  RunConfig c;
  c.command = command;
  try {
    Take(doc, "manifest", c.manifest);
    Take(doc, "checkpoint", c.checkpoint);
    Take(doc, "out", c.out);
    Take(doc, "seed", c.seed);
    Take(doc, "epochs", c.epochs);
    Take(doc, "learning_rate", c.learning_rate);
    Take(doc, "batch_size", c.batch_size);
    Take(doc, "val_ratio", c.val_ratio);
    Take(doc, "dropout", c.dropout);
    Take(doc, "methods", c.methods);
    Take(doc, "metrics", c.metrics);
    Take(doc, "split", c.split);
    Take(doc, "ig_steps", c.ig_steps);
    Take(doc, "aggregation", c.aggregation);
    Take(doc, "top_k", c.top_k);
    Take(doc, "parts", c.parts);
    Take(doc, "limit", c.limit);
    Take(doc, "samples", c.samples);
    if (doc.contains("mcd_rate")) c.mcd_rate = doc.at("mcd_rate").get<double>();
    Take(doc, "mcd_seed", c.mcd_seed);
    Take(doc, "quantiles", c.quantiles);
    Take(doc, "images", c.images);
    Take(doc, "bins", c.bins);
    Take(doc, "flip_step", c.flip_step);
    Take(doc, "flip_max", c.flip_max);
    Take(doc, "fill", c.fill);
    Take(doc, "fill_value", c.fill_value);
    Take(doc, "patch", c.patch);
    Take(doc, "random_seeds", c.random_seeds);
    Take(doc, "classes", c.classes);
    Take(doc, "image_size", c.image_size);
    Take(doc, "train_per_class", c.train_per_class);
    Take(doc, "val_per_class", c.val_per_class);
    Take(doc, "test_per_class", c.test_per_class);
    Take(doc, "noise", c.noise);
    Take(doc, "min_object", c.min_object);
    Take(doc, "max_object", c.max_object);
  } catch (const json::exception& e) {
    throw IoError(std::string("invalid config: ") + e.what());
  }
  if (c.aggregation.empty()) c.aggregation = command == "flip" ? "absolute" : "positive";
  if (c.samples == 0) c.samples = command == "flip" ? kFlippingSamples : kDistributionSamples;
  Validate(c);

  json resolved = {{"command", c.command},
                   {"manifest", c.manifest},
                   {"checkpoint", c.checkpoint},
                   {"out", c.out},
                   {"seed", c.seed},
                   {"epochs", c.epochs},
                   {"learning_rate", c.learning_rate},
                   {"batch_size", c.batch_size},
                   {"val_ratio", c.val_ratio},
                   {"dropout", c.dropout},
                   {"methods", c.methods},
                   {"metrics", c.metrics},
                   {"split", c.split},
                   {"ig_steps", c.ig_steps},
                   {"aggregation", c.aggregation},
                   {"top_k", c.top_k},
                   {"parts", c.parts},
                   {"limit", c.limit},
                   {"samples", c.samples},
                   {"mcd_rate", c.mcd_rate ? json(*c.mcd_rate) : json(nullptr)},
                   {"mcd_seed", c.mcd_seed},
                   {"quantiles", c.quantiles},
                   {"images", c.images},
                   {"bins", c.bins},
                   {"flip_step", c.flip_step},
                   {"flip_max", c.flip_max},
                   {"fill", c.fill},
                   {"fill_value", c.fill_value},
                   {"patch", c.patch},
                   {"random_seeds", c.random_seeds},
                   {"classes", c.classes},
                   {"image_size", c.image_size},
                   {"train_per_class", c.train_per_class},
                   {"val_per_class", c.val_per_class},
                   {"test_per_class", c.test_per_class},
                   {"noise", c.noise},
                   {"min_object", c.min_object},
                   {"max_object", c.max_object}};
  c.json = resolved.dump(1);
  return c;
}

}  // namespace xaib::cli
