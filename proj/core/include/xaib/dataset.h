#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xaib/image_io.h"
#include "xaib/tensor.h"

namespace xaib {

enum class Part : std::uint8_t { kBackground = 0, kHead = 1, kThorax = 2, kAbdomen = 3 };

const char* PartName(Part part);

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> inside;  // 1 = in mask

  std::size_t count() const;
  bool operator==(const BinaryMask&) const = default;
};

// Body-part segmentation. Encoded on disk as red = head, green = thorax,
// blue = abdomen, black or transparent = background.
struct SegMask {
  int height = 0;
  int width = 0;
  std::vector<Part> parts;

  SegMask() = default;
  SegMask(int h, int w) : height(h), width(w), parts(static_cast<std::size_t>(h) * w, Part::kBackground) {}

  Part at(int y, int x) const { return parts[static_cast<std::size_t>(y) * width + x]; }
  BinaryMask union_mask() const;
  BinaryMask part_mask(Part part) const;
  bool operator==(const SegMask&) const = default;
};

inline constexpr int kDefaultMaskTolerance = 16;

// Nearest pure-color anchor per pixel; a pixel farther than `tolerance` (per
// channel) from every anchor raises IoError naming its (x, y).
SegMask DecodeMask(const Image8& image, int tolerance = kDefaultMaskTolerance);
Image8 EncodeMask(const SegMask& mask);
SegMask LoadMask(const std::filesystem::path& path, int tolerance = kDefaultMaskTolerance);

struct ManifestRecord {
  std::string image;                // relative to the manifest's directory
  std::string class_name;           // raw (pre-merge) class
  std::optional<std::string> mask;  // optional segmentation PNG
  std::string split;                // "train" | "val" | "test" | ""
  int label = -1;                   // dense index of the merged class
};

// A dataset description. Class indices are dense 0..K-1, assigned
// alphabetically by merged class name.
struct RunManifest {
  std::filesystem::path root;  // directory that record paths are relative to
  int height = 64;
  int width = 64;
  int channels = 3;
  Normalization normalization;
  std::map<std::string, std::string> merge;  // raw class -> merged class
  std::vector<std::string> classes;          // merged class names by index
  std::vector<ManifestRecord> records;

  int num_classes() const { return static_cast<int>(classes.size()); }
  std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
  std::string merged_name(const std::string& raw) const;

  // Records whose split tag equals `split` (class table kept as-is).
  RunManifest with_split(const std::string& split) const;
  std::vector<std::size_t> class_counts() const;
};

// Applies the merge map and assigns dense indices. Throws Error on merge keys
// that match no record or on duplicate image paths, naming the record index.
void IndexManifest(RunManifest& manifest);

// Parses and validates a manifest JSON file. With check_files, every image
// and mask path must exist.
RunManifest LoadManifest(const std::filesystem::path& path, bool check_files = true);
RunManifest ParseManifest(const std::string& json_text, const std::filesystem::path& root);
std::string ManifestToJson(const RunManifest& manifest);
void SaveManifest(const RunManifest& manifest, const std::filesystem::path& path);

// Images stacked as (N,C,H,W) with their labels.
struct ImageSet {
  Tensor images;
  std::vector<int> labels;
  std::vector<std::size_t> record_index;  // position in the source manifest

  std::size_t size() const { return labels.size(); }
  Tensor image(std::size_t i) const;  // (C,H,W) copy
};

ImageSet LoadImageSet(const RunManifest& manifest);
std::vector<SegMask> LoadMasks(const RunManifest& manifest, int tolerance = kDefaultMaskTolerance);

// Per-channel mean of the normalized images, used as the default flip fill.
std::vector<float> ChannelMeans(const Tensor& images);

}  // namespace xaib
