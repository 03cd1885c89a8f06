#include "xaib/dataset.h"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <set>

#include "json.hpp"
#include "xaib/error.h"
#include "xaib/raster_io.h"

namespace xaib {

using nlohmann::json;

const char* PartName(Part part) {
  switch (part) {
    case Part::kBackground: return "background";
    case Part::kHead: return "head";
    case Part::kThorax: return "thorax";
    case Part::kAbdomen: return "abdomen";
  }
  return "?";
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(inside.begin(), inside.end(), std::uint8_t{1}));
}

BinaryMask SegMask::union_mask() const {
  BinaryMask m{height, width, std::vector<std::uint8_t>(parts.size())};
  for (std::size_t i = 0; i < parts.size(); ++i) m.inside[i] = parts[i] != Part::kBackground;
  return m;
}

BinaryMask SegMask::part_mask(Part part) const {
  BinaryMask m{height, width, std::vector<std::uint8_t>(parts.size())};
  for (std::size_t i = 0; i < parts.size(); ++i) m.inside[i] = parts[i] == part;
  return m;
}

namespace {

struct Anchor {
  std::array<int, 3> rgb;
  Part part;
};

constexpr std::array<Anchor, 4> kAnchors{{
    {{255, 0, 0}, Part::kHead},
    {{0, 255, 0}, Part::kThorax},
    {{0, 0, 255}, Part::kAbdomen},
    {{0, 0, 0}, Part::kBackground},
}};

}  // namespace

SegMask DecodeMask(const Image8& image, int tolerance) {
  if (image.channels != 3 && image.channels != 4) {
    throw IoError("mask must be RGB or RGBA, got " + std::to_string(image.channels) + " channels");
  }
  SegMask mask(image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const auto* px = image.at(y, x);
      if (image.channels == 4 && px[3] <= tolerance) continue;  // transparent
      int best_dist = 256;
      Part best = Part::kBackground;
      for (const auto& a : kAnchors) {
        int d = 0;
        for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(px[c] - a.rgb[c]));
        if (d < best_dist) {
          best_dist = d;
          best = a.part;
        }
      }
      if (best_dist > tolerance) {
        throw IoError("mask pixel at (x=" + std::to_string(x) + ", y=" + std::to_string(y) +
                      ") = (" + std::to_string(px[0]) + "," + std::to_string(px[1]) + "," +
                      std::to_string(px[2]) + ") is farther than " + std::to_string(tolerance) +
                      " from every anchor color");
      }
      mask.parts[static_cast<std::size_t>(y) * image.width + x] = best;
    }
  }
  return mask;
}

Image8 EncodeMask(const SegMask& mask) {
  Image8 img(mask.height, mask.width, 3);
  for (std::size_t i = 0; i < mask.parts.size(); ++i) {
    for (const auto& a : kAnchors) {
      if (a.part != mask.parts[i]) continue;
      for (int c = 0; c < 3; ++c) img.pixels[i * 3 + c] = static_cast<std::uint8_t>(a.rgb[c]);
    }
  }
  return img;
}

SegMask LoadMask(const std::filesystem::path& path, int tolerance) {
  try {
    return DecodeMask(ReadImage(path), tolerance);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string RunManifest::merged_name(const std::string& raw) const {
  const auto it = merge.find(raw);
  return it == merge.end() ? raw : it->second;
}

RunManifest RunManifest::with_split(const std::string& split) const {
  RunManifest out = *this;
  out.records.clear();
  for (const auto& r : records) {
    if (r.split == split) out.records.push_back(r);
  }
  return out;
}

std::vector<std::size_t> RunManifest::class_counts() const {
  std::vector<std::size_t> counts(classes.size(), 0);
  for (const auto& r : records) {
    if (r.label >= 0 && r.label < num_classes()) ++counts[r.label];
  }
  return counts;
}

void IndexManifest(RunManifest& manifest) {
  std::set<std::string> raw_classes;
  std::set<std::string> seen_images;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (r.image.empty()) throw IoError("manifest record " + std::to_string(i) + ": empty image path");
    if (r.class_name.empty()) throw IoError("manifest record " + std::to_string(i) + ": empty class");
    if (!seen_images.insert(r.image).second) {
      throw IoError("manifest record " + std::to_string(i) + ": duplicate image '" + r.image + "'");
    }
    raw_classes.insert(r.class_name);
  }
  for (const auto& [raw, merged] : manifest.merge) {
    if (!raw_classes.count(raw)) {
      throw IoError("merge map names class '" + raw + "' that no record uses");
    }
    if (merged.empty()) throw IoError("merge map sends '" + raw + "' to an empty name");
  }
  std::set<std::string> merged_names;
  for (const auto& raw : raw_classes) merged_names.insert(manifest.merged_name(raw));
  manifest.classes.assign(merged_names.begin(), merged_names.end());
  for (auto& r : manifest.records) {
    const auto name = manifest.merged_name(r.class_name);
    r.label = static_cast<int>(
        std::lower_bound(manifest.classes.begin(), manifest.classes.end(), name) - manifest.classes.begin());
  }
}

namespace {

void RejectUnknownKeys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw IoError(where + ": unknown key '" + key + "'");
    }
  }
}

}  // namespace

RunManifest ParseManifest(const std::string& json_text, const std::filesystem::path& root) {
  RunManifest m;
  m.root = root;
  try {
    const json doc = json::parse(json_text);
    if (!doc.is_object()) throw IoError("manifest: top level must be an object");
    RejectUnknownKeys(doc, {"format", "version", "image_size", "channels", "normalization", "merge", "records"},
                      "manifest");
    if (doc.value("format", std::string("xaib-manifest")) != "xaib-manifest") {
      throw IoError("manifest: unexpected format tag");
    }
    if (doc.value("version", 1) != 1) throw IoError("manifest: unsupported version");
    if (doc.contains("image_size")) {
      const auto& size = doc.at("image_size");
      RejectUnknownKeys(size, {"height", "width"}, "manifest.image_size");
      m.height = size.at("height").get<int>();
      m.width = size.at("width").get<int>();
    }
    m.channels = doc.value("channels", 3);
    if (m.height < 1 || m.width < 1 || m.channels != 3) {
      throw IoError("manifest: image_size must be positive and channels must be 3");
    }
    if (doc.contains("normalization")) {
      const auto& n = doc.at("normalization");
      RejectUnknownKeys(n, {"mean", "std"}, "manifest.normalization");
      m.normalization.mean = n.at("mean").get<std::vector<float>>();
      m.normalization.std = n.at("std").get<std::vector<float>>();
      if (m.normalization.mean.size() != 3 || m.normalization.std.size() != 3) {
        throw IoError("manifest: normalization needs 3 means and 3 stds");
      }
      for (float s : m.normalization.std) {
        if (!(s > 0.0f)) throw IoError("manifest: normalization std must be positive");
      }
    }
    if (doc.contains("merge")) m.merge = doc.at("merge").get<std::map<std::string, std::string>>();
    const auto& records = doc.at("records");
    if (!records.is_array()) throw IoError("manifest: records must be an array");
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      const std::string where = "manifest record " + std::to_string(i);
      if (!r.is_object()) throw IoError(where + ": not an object");
      RejectUnknownKeys(r, {"image", "class", "mask", "split"}, where);
      ManifestRecord rec;
      rec.image = r.at("image").get<std::string>();
      rec.class_name = r.at("class").get<std::string>();
      if (r.contains("mask") && !r.at("mask").is_null()) rec.mask = r.at("mask").get<std::string>();
      rec.split = r.value("split", std::string());
      m.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("manifest: ") + e.what());
  }
  IndexManifest(m);
  return m;
}

RunManifest LoadManifest(const std::filesystem::path& path, bool check_files) {
  if (!std::filesystem::exists(path)) throw IoError("manifest not found: " + path.string());
  auto m = ParseManifest(ReadFileText(path), path.parent_path());
  if (check_files) {
    for (std::size_t i = 0; i < m.records.size(); ++i) {
      const auto& r = m.records[i];
      if (!std::filesystem::exists(m.resolve(r.image))) {
        throw IoError("manifest record " + std::to_string(i) + ": missing image " + m.resolve(r.image).string());
      }
      if (r.mask && !std::filesystem::exists(m.resolve(*r.mask))) {
        throw IoError("manifest record " + std::to_string(i) + ": missing mask " + m.resolve(*r.mask).string());
      }
    }
  }
  return m;
}

std::string ManifestToJson(const RunManifest& m) {
  json doc;
  doc["format"] = "xaib-manifest";
  doc["version"] = 1;
  doc["image_size"] = {{"height", m.height}, {"width", m.width}};
  doc["channels"] = m.channels;
  doc["normalization"] = {{"mean", m.normalization.mean}, {"std", m.normalization.std}};
  doc["merge"] = m.merge;
  json records = json::array();
  for (const auto& r : m.records) {
    json rec = {{"image", r.image}, {"class", r.class_name}, {"split", r.split}};
    if (r.mask) rec["mask"] = *r.mask;
    records.push_back(std::move(rec));
  }
  doc["records"] = std::move(records);
  return doc.dump(1);
}

void SaveManifest(const RunManifest& manifest, const std::filesystem::path& path) {
  WriteFileAtomic(path, ManifestToJson(manifest) + "\n");
}

Tensor ImageSet::image(std::size_t i) const {
  const auto c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const auto n = static_cast<std::size_t>(c * h * w);
  const auto src = images.data().subspan(i * n, n);
  return Tensor({c, h, w}, std::vector<float>(src.begin(), src.end()));
}

ImageSet LoadImageSet(const RunManifest& manifest) {
  ImageSet set;
  const auto n = static_cast<std::int64_t>(manifest.records.size());
  const std::int64_t per = static_cast<std::int64_t>(manifest.channels) * manifest.height * manifest.width;
  set.images = Tensor({n, manifest.channels, manifest.height, manifest.width});
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& r = manifest.records[i];
    Tensor img = LoadImage(manifest.resolve(r.image), manifest.height, manifest.width, manifest.normalization);
    std::copy(img.data().begin(), img.data().end(), set.images.data().begin() + i * per);
    set.labels.push_back(r.label);
    set.record_index.push_back(static_cast<std::size_t>(i));
  }
  return set;
}

namespace {

SegMask ResizeNearest(const SegMask& m, int height, int width) {
  if (m.height == height && m.width == width) return m;
  SegMask out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(m.height - 1, static_cast<int>((y + 0.5) * m.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(m.width - 1, static_cast<int>((x + 0.5) * m.width / width));
      out.parts[static_cast<std::size_t>(y) * width + x] = m.at(sy, sx);
    }
  }
  return out;
}

}  // namespace

std::vector<SegMask> LoadMasks(const RunManifest& manifest, int tolerance) {
  std::vector<SegMask> masks;
  masks.reserve(manifest.records.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (!r.mask) throw IoError("manifest record " + std::to_string(i) + " has no mask");
    SegMask m = LoadMask(manifest.resolve(*r.mask), tolerance);
    const Image8 img = ReadImage(manifest.resolve(r.image));
    if (img.height != m.height || img.width != m.width) {
      throw IoError("manifest record " + std::to_string(i) + ": mask is " + std::to_string(m.width) + "x" +
                    std::to_string(m.height) + " but image is " + std::to_string(img.width) + "x" +
                    std::to_string(img.height));
    }
    masks.push_back(ResizeNearest(m, manifest.height, manifest.width));
  }
  return masks;
}

std::vector<float> ChannelMeans(const Tensor& images) {
  if (images.rank() != 4) throw Error("ChannelMeans: expected (N,C,H,W), got " + ShapeToString(images.shape()));
  const auto n = images.dim(0), c = images.dim(1), hw = images.dim(2) * images.dim(3);
  std::vector<float> means(static_cast<std::size_t>(c), 0.0f);
  if (n == 0) return means;
  const auto data = images.data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const float* p = data.data() + (i * c + ch) * hw;
      for (std::int64_t k = 0; k < hw; ++k) total += p[k];
    }
    means[ch] = static_cast<float>(total / static_cast<double>(n * hw));
  }
  return means;
}

}  // namespace xaib
