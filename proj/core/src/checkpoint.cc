#include <algorithm>

#include "json.hpp"
#include "xaib/error.h"
#include "xaib/model.h"
#include "xaib/raster_io.h"

namespace xaib {

using nlohmann::json;

namespace {

constexpr std::string_view kCheckpointMagic = "XAIBCKPT";
constexpr std::uint32_t kCheckpointVersion = 1;

json SpecJson(const ModelSpec& s) {
  json blocks = json::array();
  for (const auto& b : s.blocks) blocks.push_back({{"channels", b.channels}, {"kernel", b.kernel}, {"pool", b.pool}});
  return {{"in_channels", s.in_channels}, {"height", s.height},          {"width", s.width},
          {"blocks", blocks},             {"has_dropout", s.has_dropout}, {"dropout_rate", s.dropout_rate},
          {"num_classes", s.num_classes}};
}

ModelSpec SpecFromJson(const json& j) {
  ModelSpec s;
  for (const auto& [key, value] : j.items()) {
    if (key == "in_channels") {
      s.in_channels = value.get<int>();
    } else if (key == "height") {
      s.height = value.get<int>();
    } else if (key == "width") {
      s.width = value.get<int>();
    } else if (key == "has_dropout") {
      s.has_dropout = value.get<bool>();
    } else if (key == "dropout_rate") {
      s.dropout_rate = value.get<float>();
    } else if (key == "num_classes") {
      s.num_classes = value.get<int>();
    } else if (key == "blocks") {
      for (const auto& b : value) {
        s.blocks.push_back({b.at("channels").get<int>(), b.at("kernel").get<int>(), b.at("pool").get<int>()});
      }
    } else {
      throw IoError("model spec: unknown key '" + key + "'");
    }
  }
  s.validate();
  return s;
}

}  // namespace

std::string ModelSpecToJson(const ModelSpec& spec) { return SpecJson(spec).dump(); }

ModelSpec ModelSpecFromJson(const std::string& text) {
  try {
    return SpecFromJson(json::parse(text));
  } catch (const json::exception& e) {
    throw IoError(std::string("model spec: ") + e.what());
  }
}

std::vector<std::uint8_t> EncodeCheckpoint(const Checkpoint& ckpt, const std::string& extra_json) {
  json header;
  header["format"] = "xaib-checkpoint";
  header["spec"] = SpecJson(ckpt.model.spec());
  json tensors = json::array();
  for (const auto& p : ckpt.model.parameters()) tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  header["tensors"] = tensors;
  const auto& cfg = ckpt.meta.config;
  json epochs = json::array();
  for (const auto& e : ckpt.meta.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"val_accuracy", e.val_accuracy}});
  }
  header["training"] = {{"learning_rate", cfg.learning_rate},
                        {"epochs", cfg.epochs},
                        {"batch_size", cfg.batch_size},
                        {"seed", cfg.seed},
                        {"log", epochs}};
  header["extra"] = json::parse(extra_json);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  AppendU32(out, kCheckpointVersion);
  AppendU64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& p : ckpt.model.parameters()) AppendFloats(out, p.value.data());
  return out;
}

Checkpoint DecodeCheckpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 12 ||
      !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) {
    throw IoError("not a checkpoint (bad magic)");
  }
  const auto version = ReadU32(bytes, 8);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = ReadU64(bytes, 12);
  if (20 + header_len > bytes.size()) throw IoError("truncated checkpoint header");
  Checkpoint ckpt;
  std::size_t offset = 20 + header_len;
  try {
    const json header = json::parse(std::string(reinterpret_cast<const char*>(bytes.data()) + 20, header_len));
    ckpt.model = Model(SpecFromJson(header.at("spec")), 0);
    const auto& tensors = header.at("tensors");
    auto& params = ckpt.model.parameters();
    if (tensors.size() != params.size()) throw IoError("checkpoint tensor table does not match its spec");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto name = tensors[i].at("name").get<std::string>();
      const auto shape = tensors[i].at("shape").get<Shape>();
      if (name != params[i].name || shape != params[i].value.shape()) {
        throw IoError("checkpoint tensor " + std::to_string(i) + " (" + name + " " + ShapeToString(shape) +
                      ") inconsistent with spec (" + params[i].name + " " +
                      ShapeToString(params[i].value.shape()) + ")");
      }
      ReadFloats(bytes, offset, params[i].value.data());
      offset += params[i].value.numel() * 4;
    }
    const auto& t = header.at("training");
    ckpt.meta.config.learning_rate = t.at("learning_rate").get<double>();
    ckpt.meta.config.epochs = t.at("epochs").get<int>();
    ckpt.meta.config.batch_size = t.at("batch_size").get<int>();
    ckpt.meta.config.seed = t.at("seed").get<std::uint64_t>();
    for (const auto& e : t.at("log")) {
      ckpt.meta.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(),
                                  e.at("val_loss").get<double>(), e.at("val_accuracy").get<double>()});
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint header: ") + e.what());
  }
  if (offset != bytes.size()) throw IoError("checkpoint has trailing bytes");
  return ckpt;
}

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt, const std::string& extra_json) {
  WriteFileAtomic(path, EncodeCheckpoint(ckpt, extra_json));
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  return DecodeCheckpoint(ReadFileBytes(path));
}

}  // namespace xaib
