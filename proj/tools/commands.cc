#include "commands.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>

#include "CLI11.hpp"
#include "json.hpp"
#include "xaib/attribution.h"
#include "xaib/dataset.h"
#include "xaib/error.h"
#include "xaib/faithfulness.h"
#include "xaib/localisation.h"
#include "xaib/model.h"
#include "xaib/raster_io.h"
#include "xaib/report.h"
#include "xaib/synthetic.h"
#include "xaib/uncertainty.h"

namespace xaib::cli {

using nlohmann::json;
namespace fs = std::filesystem;

std::string SafeName(const std::string& name) {
  std::string out;
  for (char c : name) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_';
  return out.empty() ? std::string("_") : out;
}

namespace {

json ConfigObject(const RunConfig& cfg) { return json::parse(cfg.json); }

void WriteJson(const fs::path& path, const json& doc) { WriteFileAtomic(path, doc.dump(1) + "\n"); }

RunManifest RequireManifest(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw IoError(cfg.command + ": --manifest is required");
  return LoadManifest(cfg.manifest);
}

Model RequireModel(const RunConfig& cfg, const RunManifest& manifest) {
  if (cfg.checkpoint.empty()) throw IoError(cfg.command + ": --checkpoint is required");
  if (!fs::exists(cfg.checkpoint)) throw IoError("checkpoint not found: " + cfg.checkpoint);
  Model model = LoadCheckpoint(cfg.checkpoint).model;
  const auto& s = model.spec();
  if (s.num_classes != manifest.num_classes() || s.height != manifest.height || s.width != manifest.width ||
      s.in_channels != manifest.channels) {
    throw IoError("checkpoint " + cfg.checkpoint + " (" + std::to_string(s.num_classes) + " classes, " +
                  std::to_string(s.width) + "x" + std::to_string(s.height) + ") does not match manifest " +
                  cfg.manifest + " (" + std::to_string(manifest.num_classes()) + " classes, " +
                  std::to_string(manifest.width) + "x" + std::to_string(manifest.height) + ")");
  }
  return model;
}

// Records of the configured split, truncated to cfg.limit.
RunManifest SelectSplit(const RunConfig& cfg, const RunManifest& manifest) {
  RunManifest part = manifest.with_split(cfg.split);
  if (part.records.empty()) throw IoError("manifest " + cfg.manifest + " has no records in split '" + cfg.split + "'");
  if (cfg.limit > 0 && part.records.size() > static_cast<std::size_t>(cfg.limit)) {
    part.records.resize(static_cast<std::size_t>(cfg.limit));
  }
  return part;
}

std::string RecordName(const RunManifest& m, std::size_t i) {
  char prefix[16];
  std::snprintf(prefix, sizeof(prefix), "%04zu_", i);
  return prefix + SafeName(fs::path(m.records[i].image).stem().string());
}

std::vector<Method> Methods(const RunConfig& cfg) {
  std::vector<Method> out;
  for (const auto& m : cfg.methods) out.push_back(ParseMethod(m));
  return out;
}

IGConfig IgConfig(const RunConfig& cfg) {
  IGConfig ig;
  ig.steps = cfg.ig_steps;
  return ig;
}

MCDConfig McdConfig(const RunConfig& cfg) {
  MCDConfig mcd;
  mcd.samples = cfg.samples;
  if (cfg.mcd_rate) mcd.rate_override = static_cast<float>(*cfg.mcd_rate);
  mcd.base_seed = cfg.mcd_seed;
  return mcd;
}

std::string QuantileTag(double q) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "q%.2f", q);
  return buf;
}

Tensor Subset(const ImageSet& set, const std::vector<std::size_t>& rows) {
  const auto c = set.images.dim(1), h = set.images.dim(2), w = set.images.dim(3);
  const auto per = static_cast<std::size_t>(c * h * w);
  Tensor out({static_cast<std::int64_t>(rows.size()), c, h, w});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = set.images.data().subspan(rows[i] * per, per);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

std::vector<LocalisationMetric> Metrics(const RunConfig& cfg) {
  std::vector<LocalisationMetric> out;
  for (auto m : kAllLocalisationMetrics) {
    if (std::find(cfg.metrics.begin(), cfg.metrics.end(), MetricId(m)) != cfg.metrics.end()) out.push_back(m);
  }
  return out;
}

Part ParsePart(const std::string& name) {
  if (name == "head") return Part::kHead;
  if (name == "thorax") return Part::kThorax;
  return Part::kAbdomen;
}

}  // namespace

void CmdSynth(const RunConfig& cfg, std::ostream& log) {
  SyntheticSpec spec = DeskSyntheticSpec(cfg.seed);
  spec.image_size = cfg.image_size;
  spec.train_per_class = cfg.train_per_class;
  spec.val_per_class = cfg.val_per_class;
  spec.test_per_class = cfg.test_per_class;
  spec.noise = cfg.noise;
  spec.min_object = cfg.min_object;
  spec.max_object = cfg.max_object;
  const auto manifest = MaterializeSynthetic(spec, cfg.out);
  log << "wrote " << manifest.records.size() << " images and masks, manifest " << (fs::path(cfg.out) / "manifest.json").string()
      << "\n";
}

void CmdTrain(const RunConfig& cfg, std::ostream& log) {
  const RunManifest manifest = RequireManifest(cfg);
  RunManifest train = manifest.with_split("train");
  RunManifest val = manifest.with_split("val");
  if (train.records.empty() || val.records.empty()) {
    const bool untagged = std::all_of(manifest.records.begin(), manifest.records.end(),
                                      [](const ManifestRecord& r) { return r.split.empty(); });
    if (!untagged) throw IoError("manifest " + cfg.manifest + " needs both 'train' and 'val' records");
    std::tie(train, val) = SplitStratified(manifest, cfg.val_ratio, cfg.seed);
  }
  ModelSpec spec = ModelSpec::Desk(manifest.num_classes(), manifest.height, manifest.width, manifest.channels);
  spec.dropout_rate = static_cast<float>(cfg.dropout);
  TrainConfig tc;
  tc.learning_rate = cfg.learning_rate;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.seed = cfg.seed;
  const Checkpoint ckpt = Train(spec, LoadImageSet(train), LoadImageSet(val), tc);
  const json extra = {{"run_config", ConfigObject(cfg)}, {"classes", manifest.classes}};
  SaveCheckpoint(fs::path(cfg.out) / "model.ckpt", ckpt, extra.dump());
  WriteFileAtomic(fs::path(cfg.out) / "train_log.csv", report::TrainLogCsv(ckpt.meta.epochs, cfg.json));
  if (!ckpt.meta.epochs.empty()) {
    const auto& last = ckpt.meta.epochs.back();
    log << "epoch " << last.epoch << ": train_loss " << report::FormatNumber(last.train_loss) << ", val_accuracy "
        << report::FormatNumber(last.val_accuracy) << "\n";
  }
}

void CmdEval(const RunConfig& cfg, std::ostream& log) {
  const RunManifest manifest = RequireManifest(cfg);
  const Model model = RequireModel(cfg, manifest);
  const ImageSet set = LoadImageSet(SelectSplit(cfg, manifest));
  const int k = manifest.num_classes();
  const std::vector<int> ks{1, std::min(3, k)};
  const EvalReport r = Evaluate(model, set, ks);
  const json doc = {{"top1", r.accuracy(1)},
                    {"top3", r.accuracy(std::min(3, k))},
                    {"count", r.count},
                    {"split", cfg.split},
                    {"classes", manifest.classes},
                    {"confusion", r.confusion},
                    {"run_config", ConfigObject(cfg)}};
  WriteJson(fs::path(cfg.out) / "eval.json", doc);
  WriteFileAtomic(fs::path(cfg.out) / "confusion.csv", report::ConfusionCsv(r, manifest.classes, cfg.json));
  log << "top1 " << report::FormatNumber(r.accuracy(1)) << ", top3 " << report::FormatNumber(r.accuracy(ks[1]))
      << " on " << r.count << " images\n";
}

void CmdExplain(const RunConfig& cfg, std::ostream& log) {
  const RunManifest manifest = RequireManifest(cfg);
  const Model model = RequireModel(cfg, manifest);
  const RunManifest part = SelectSplit(cfg, manifest);
  const ImageSet set = LoadImageSet(part);
  const auto methods = Methods(cfg);
  const auto aggregation = ParseAggregation(cfg.aggregation);
  const fs::path dir = fs::path(cfg.out) / "maps";
  json records = json::array();
  std::size_t written = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Tensor image = set.image(i);
    const int label = PredictedLabel(model, image);
    const std::string name = RecordName(part, i);
    json maps = json::object();
    for (auto method : methods) {
      const SaliencyMap map = Explain(model, image, label, method, aggregation, IgConfig(cfg));
      const std::string stem = name + "_" + MethodName(method);
      WriteSaliencyMap(dir / stem, map, cfg.json);
      maps[MethodName(method)] = "maps/" + stem;
      ++written;
    }
    records.push_back({{"image", part.records[i].image},
                       {"true_label", set.labels[i]},
                       {"predicted_label", label},
                       {"target", "predicted"},
                       {"maps", maps}});
  }
  WriteJson(fs::path(cfg.out) / "explain.json", {{"records", records}, {"run_config", ConfigObject(cfg)}});
  log << "wrote " << written << " saliency maps for " << set.size() << " images\n";
}

void CmdLocalise(const RunConfig& cfg, std::ostream& log) {
  const RunManifest manifest = RequireManifest(cfg);
  const Model model = RequireModel(cfg, manifest);
  const RunManifest part = SelectSplit(cfg, manifest);
  const ImageSet set = LoadImageSet(part);
  const auto seg = LoadMasks(part);
  LocalisationConfig lc;
  lc.top_k = static_cast<std::size_t>(cfg.top_k);
  lc.aggregation = ParseAggregation(cfg.aggregation);
  for (const auto& p : cfg.parts) lc.parts.push_back(ParsePart(p));
  std::vector<BinaryMask> masks;
  for (const auto& m : seg) masks.push_back(SelectMask(m, lc));

  const auto methods = Methods(cfg);
  const auto metrics = Metrics(cfg);
  std::vector<std::string> names;
  std::vector<std::vector<LocalisationResult>> results;
  json per_method = json::object();
  for (auto method : methods) {
    std::vector<SaliencyMap> maps;
    for (std::size_t i = 0; i < set.size(); ++i) {
      const Tensor image = set.image(i);
      maps.push_back(Explain(model, image, PredictedLabel(model, image), method, lc.aggregation, IgConfig(cfg)));
    }
    results.push_back(EvaluateLocalisation(maps, masks, lc));
    names.emplace_back(MethodName(method));
    json per_metric = json::object();
    for (const auto& r : results.back()) {
      if (std::find(metrics.begin(), metrics.end(), r.metric) == metrics.end()) continue;
      json scores = json::array();
      for (const auto& s : r.scores) scores.push_back(s ? json(*s) : json(nullptr));
      per_metric[MetricId(r.metric)] = {{"mean", r.mean},
                                        {"count", r.count},
                                        {"skipped", r.skipped},
                                        {"scores", scores},
                                        {"skip_reasons", r.skip_reasons}};
    }
    per_method[MethodName(method)] = per_metric;
  }
  json images = json::array();
  for (const auto& r : part.records) images.push_back(r.image);
  WriteFileAtomic(fs::path(cfg.out) / "localisation.csv",
                  report::LocalisationTableCsv(names, results, cfg.json, metrics));
  WriteJson(fs::path(cfg.out) / "localisation_samples.json",
            {{"images", images}, {"methods", per_method}, {"run_config", ConfigObject(cfg)}});
  log << "scored " << set.size() << " images with " << names.size() << " methods\n";
}

void CmdMcd(const RunConfig& cfg, std::ostream& log) {
  const RunManifest manifest = RequireManifest(cfg);
  const Model model = RequireModel(cfg, manifest);
  const RunManifest part = SelectSplit(cfg, manifest);
  const ImageSet set = LoadImageSet(part);
  const MCDConfig mcd = McdConfig(cfg);
  const auto aggregation = ParseAggregation(cfg.aggregation);
  const fs::path dir = fs::path(cfg.out) / "mcd";
  json summary = json::array();
  for (int pos : cfg.images) {
    if (static_cast<std::size_t>(pos) >= set.size()) {
      throw IoError("mcd: image position " + std::to_string(pos) + " outside split '" + cfg.split + "' of " +
                    std::to_string(set.size()) + " images");
    }
    const Tensor image = set.image(static_cast<std::size_t>(pos));
    const int truth = set.labels[pos];
    const int predicted = PredictedLabel(model, image);
    const std::string name = RecordName(part, static_cast<std::size_t>(pos));
    const PredictiveDistribution dist = McdPredict(model, image, mcd);
    WriteFileAtomic(dir / (name + "_distribution.csv"), report::DistributionCsv(dist, manifest.classes, cfg.json));
    const auto column = dist.column(truth);
    const report::PlotLabels labels{"True class probability (" + manifest.classes[truth] + "), T=" +
                                        std::to_string(mcd.samples),
                                    "probability", "count"};
    WriteFileAtomic(dir / (name + "_histogram.svg"), report::HistogramSvg(labels, column, cfg.bins, 0.0, 1.0, cfg.json));
    json maps = json::object();
    for (auto method : Methods(cfg)) {
      const auto stack = McdSaliencyStack(model, image, predicted, method, mcd, aggregation, IgConfig(cfg));
      for (double q : cfg.quantiles) {
        const auto qmap = QuantileMap(stack, q);
        const std::string stem = name + "_" + MethodName(method) + "_" + QuantileTag(q);
        WriteSaliencyMap(dir / stem, qmap.map, cfg.json);
        maps[MethodName(method)].push_back("mcd/" + stem);
      }
    }
    json classes = json::array();
    for (std::size_t c = 0; c < dist.summary.size(); ++c) {
      const auto& s = dist.summary[c];
      classes.push_back({{"class", manifest.classes[c]},
                         {"mean", s.mean},
                         {"std", s.std},
                         {"q25", s.q25},
                         {"median", s.median},
                         {"q75", s.q75}});
    }
    summary.push_back({{"image", part.records[pos].image},
                       {"true_label", truth},
                       {"predicted_label", predicted},
                       {"samples", mcd.samples},
                       {"classes", classes},
                       {"quantile_maps", maps}});
  }
  WriteJson(fs::path(cfg.out) / "mcd.json", {{"images", summary}, {"run_config", ConfigObject(cfg)}});
  log << "MC-dropout with T=" << mcd.samples << " on " << cfg.images.size() << " images\n";
}

void CmdFlip(const RunConfig& cfg, std::ostream& log) {
  const RunManifest manifest = RequireManifest(cfg);
  const Model model = RequireModel(cfg, manifest);
  const ImageSet set = LoadImageSet(SelectSplit(cfg, manifest));

  PfMcdConfig pf;
  pf.methods = Methods(cfg);
  pf.quantiles = cfg.quantiles;
  pf.mcd = McdConfig(cfg);
  pf.ig = IgConfig(cfg);
  pf.aggregation = ParseAggregation(cfg.aggregation);
  for (int s = 0; s < cfg.random_seeds; ++s) pf.random_seeds.push_back(cfg.seed + static_cast<std::uint64_t>(s));
  pf.flip.fill = ParseFill(cfg.fill);
  pf.flip.constant = static_cast<float>(cfg.fill_value);
  pf.flip.step = cfg.flip_step;
  pf.flip.max_fraction = cfg.flip_max;
  pf.flip.patch = cfg.patch;
  if (pf.flip.fill == FillStrategy::kDatasetMean) {
    const RunManifest train = manifest.with_split("train");
    pf.flip.dataset_mean = ChannelMeans(LoadImageSet(train.records.empty() ? manifest : train).images);
  }
  pf.flip.validate();

  std::vector<int> targets;
  if (cfg.classes.empty()) {
    for (int c = 0; c < manifest.num_classes(); ++c) targets.push_back(c);
  } else {
    for (const auto& name : cfg.classes) {
      const auto it = std::find(manifest.classes.begin(), manifest.classes.end(), name);
      if (it == manifest.classes.end()) throw IoError("flip: unknown class '" + name + "'");
      targets.push_back(static_cast<int>(it - manifest.classes.begin()));
    }
  }
  const fs::path dir = fs::path(cfg.out) / "flip";
  json summary = json::array();
  for (int c : targets) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (set.labels[i] == c) rows.push_back(i);
    }
    if (rows.empty()) {
      log << "skipping class " << manifest.classes[c] << ": no images in split '" << cfg.split << "'\n";
      continue;
    }
    const FlipSamples samples{Subset(set, rows), std::vector<int>(rows.size(), c)};
    const PfMcdBundle bundle = PfMcdExperiment(model, samples, pf);
    const std::string name = SafeName(manifest.classes[c]);
    WriteFileAtomic(dir / (name + ".csv"), report::FlipCurvesCsv(bundle, cfg.json));
    std::vector<report::Series> series;
    const auto add_series = [&](const std::string& label, const FlippingCurve& curve) {
      report::Series s{label, {}, {}};
      for (const auto& p : curve.points) {
        s.x.push_back(p.fraction);
        s.y.push_back(p.mean_score);
      }
      series.push_back(std::move(s));
    };
    for (const auto& curve : bundle.curves) add_series(curve.source, curve);
    add_series("random", bundle.random);
    const report::PlotLabels labels{"Pixel flipping: " + manifest.classes[c] + " (" + std::to_string(rows.size()) +
                                        " images)",
                                    "flipped fraction", "mean true-class probability"};
    WriteFileAtomic(dir / (name + ".svg"), report::LinePlotSvg(labels, series, cfg.json));
    json curves = json::array();
    for (const auto& s : bundle.summaries) {
      curves.push_back(
          {{"source", s.source}, {"below_random_fraction", s.below_random_fraction}, {"score_area", s.score_area}});
    }
    summary.push_back({{"class", manifest.classes[c]},
                       {"samples", rows.size()},
                       {"random_score_area", bundle.random.score_area()},
                       {"curves", curves}});
  }
  WriteJson(fs::path(cfg.out) / "flip.json", {{"classes", summary}, {"run_config", ConfigObject(cfg)}});
  log << "pixel flipping for " << summary.size() << " classes\n";
}

void RunCommand(const RunConfig& cfg, std::ostream& log) {
  static const std::map<std::string, void (*)(const RunConfig&, std::ostream&)> table = {
      {"synth", CmdSynth}, {"train", CmdTrain}, {"eval", CmdEval}, {"explain", CmdExplain},
      {"localise", CmdLocalise}, {"mcd", CmdMcd}, {"flip", CmdFlip}};
  const auto it = table.find(cfg.command);
  if (it == table.end()) throw IoError("unknown command '" + cfg.command + "'");
  if (cfg.command != "synth") {
    if (!cfg.manifest.empty() && !fs::exists(cfg.manifest)) throw IoError("manifest not found: " + cfg.manifest);
    if (!cfg.checkpoint.empty() && cfg.command != "train" && !fs::exists(cfg.checkpoint)) {
      throw IoError("checkpoint not found: " + cfg.checkpoint);
    }
  }
  fs::create_directories(cfg.out);
  WriteFileAtomic(fs::path(cfg.out) / "run_config.json", cfg.json + "\n");
  it->second(cfg, log);
}

int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const EnvLookup& env) {
  CLI::App app{"Explainability benchmark: training, attribution, localisation, MC-dropout and pixel flipping"};
  app.require_subcommand(1);
  std::string config_path;
  std::map<std::string, std::string> storage;
  std::map<std::string, CLI::Option*> options;
  std::vector<CLI::App*> subs;
  const std::map<std::string, std::string> descriptions{
      {"synth", "write the synthetic desk dataset and its manifest"},
      {"train", "train the CNN and write model.ckpt and train_log.csv"},
      {"eval", "top-1/top-3 accuracy and confusion matrix"},
      {"explain", "saliency maps for every method"},
      {"localise", "localisation metrics per method"},
      {"mcd", "MC-dropout predictive distributions and quantile saliency maps"},
      {"flip", "pixel-flipping curves for quantile maps and the random baseline"},
  };
  for (const char* name : kCommands) {
    CLI::App* sub = app.add_subcommand(name, descriptions.at(name));
    sub->add_option("--config", config_path, "JSON run config (flags and XAIB_* variables override it)");
    for (const auto& key : ConfigKeys()) {
      options[std::string(name) + "/" + key.key] = sub->add_option(FlagName(key), storage[key.key], key.help);
    }
    subs.push_back(sub);
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  try {
    const CLI::App* chosen = app.get_subcommands().front();
    FlagValues flags;
    for (const auto& key : ConfigKeys()) {
      if (options[chosen->get_name() + "/" + key.key]->count() > 0) flags[key.key] = storage[key.key];
    }
    const RunConfig cfg = ResolveConfig(chosen->get_name(), config_path, flags, env);
    RunCommand(cfg, out);
    return 0;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace xaib::cli
