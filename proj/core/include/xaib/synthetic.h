#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xaib/dataset.h"
#include "xaib/image_io.h"

namespace xaib {

enum class ShapeKind { kDisc, kSquare, kTriangle, kDiamond };
enum class Texture { kSolid, kStripes, kChecker };

struct SyntheticClass {
  std::string name;
  ShapeKind shape = ShapeKind::kDisc;
  std::array<std::uint8_t, 3> color{200, 60, 60};
  Texture texture = Texture::kSolid;
};

struct SyntheticSpec {
  std::vector<SyntheticClass> classes;
  int image_size = 64;
  // Object bounding-box side, in pixels, drawn uniformly per sample.
  int min_object = 18;
  int max_object = 28;
  // Std-dev of the Gaussian pixel noise, in [0,1] intensity units.
  double noise = 0.08;
  std::uint64_t seed = 7;
  int train_per_class = 100;
  int val_per_class = 30;
  int test_per_class = 30;
  // Split each object into head/thorax/abdomen thirds (left to right).
  bool part_masks = true;

  void validate() const;
  // Inclusive bounds on the number of object pixels any sample can have.
  std::pair<std::size_t, std::size_t> mask_pixel_bounds() const;
};

// Three visually distinct classes: red disc, green striped square, blue
// checkered triangle.
SyntheticSpec DeskSyntheticSpec(std::uint64_t seed = 7);

struct SyntheticSample {
  Image8 image;
  SegMask mask;
  std::string class_name;
  std::string split;
};

// Deterministic in spec.seed; sample i depends only on (seed, i).
std::vector<SyntheticSample> GenerateSynthetic(const SyntheticSpec& spec);

// Writes images/ and masks/ PNGs plus manifest.json under `out_dir` and
// returns the (indexed) manifest.
RunManifest MaterializeSynthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

std::string SyntheticSpecToJson(const SyntheticSpec& spec);
SyntheticSpec SyntheticSpecFromJson(const std::string& text);

}  // namespace xaib
