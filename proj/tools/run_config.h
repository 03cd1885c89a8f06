#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace xaib::cli {

enum class ValueKind { kString, kInt, kUint, kDouble, kBool, kStringList, kIntList, kDoubleList };

struct KeySpec {
  std::string key;  // config-file key; flag is --key with '_' -> '-', env var is XAIB_KEY
  ValueKind kind;
  std::string help;
};

// Every key a run config may contain.
const std::vector<KeySpec>& ConfigKeys();
const KeySpec* FindKey(const std::string& key);

std::string FlagName(const KeySpec& spec);  // e.g. "--learning-rate"
std::string EnvName(const KeySpec& spec);   // e.g. "XAIB_LEARNING_RATE"

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup ProcessEnv();

struct RunConfig {
  std::string command;
  std::string manifest;
  std::string checkpoint;
  std::string out = "out";
  std::uint64_t seed = 7;

  // model and training
  int epochs = 20;
  double learning_rate = 1e-3;
  int batch_size = 32;
  double val_ratio = 0.8;
  double dropout = 0.5;

  // explanation and localisation
  std::vector<std::string> methods{"gradient", "gradient_x_input", "integrated_gradients"};
  std::vector<std::string> metrics{"pointing_game", "attribution_localisation", "top_k_intersection",
                                   "relevance_rank_accuracy", "auc"};
  std::string split = "test";
  int ig_steps = 64;
  std::string aggregation;  // command default: positive, absolute for flip
  int top_k = 1000;
  std::vector<std::string> parts;
  int limit = 0;  // first N images of the split; 0 = all

  // MCD
  int samples = 0;  // command default: 500 for mcd, 100 for flip
  std::optional<double> mcd_rate;
  std::uint64_t mcd_seed = 0;
  std::vector<double> quantiles{0.25, 0.5, 0.75};
  std::vector<int> images{0};
  int bins = 50;

  // pixel flipping
  double flip_step = 0.01;
  double flip_max = 0.5;
  std::string fill = "dataset-mean";
  double fill_value = 0.0;
  int patch = 1;
  int random_seeds = 20;
  std::vector<std::string> classes;

  // synthetic data
  int image_size = 64;
  int train_per_class = 100;
  int val_per_class = 30;
  int test_per_class = 30;
  double noise = 0.08;
  int min_object = 18;
  int max_object = 28;

  // Resolved config as pretty JSON (the form embedded in every artifact).
  std::string json;
};

// Flag values as typed on the command line, keyed by config key.
using FlagValues = std::map<std::string, std::string>;

// Merges defaults < config file < XAIB_* environment < flags, fills in the
// command-specific defaults and validates. Throws IoError for unreadable or
// malformed inputs and unknown keys.
RunConfig ResolveConfig(const std::string& command, const std::string& config_path, const FlagValues& flags,
                        const EnvLookup& env);

}  // namespace xaib::cli
