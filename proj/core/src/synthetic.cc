#include "xaib/synthetic.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "json.hpp"
#include "xaib/error.h"
#include "xaib/raster_io.h"
#include "xaib/rng.h"

namespace xaib {

using nlohmann::json;

namespace {

const char* ShapeName(ShapeKind k) {
  switch (k) {
    case ShapeKind::kDisc: return "disc";
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kTriangle: return "triangle";
    case ShapeKind::kDiamond: return "diamond";
  }
  return "?";
}

ShapeKind ParseShape(const std::string& s) {
  if (s == "disc") return ShapeKind::kDisc;
  if (s == "square") return ShapeKind::kSquare;
  if (s == "triangle") return ShapeKind::kTriangle;
  if (s == "diamond") return ShapeKind::kDiamond;
  throw IoError("unknown shape kind '" + s + "'");
}

const char* TextureName(Texture t) {
  switch (t) {
    case Texture::kSolid: return "solid";
    case Texture::kStripes: return "stripes";
    case Texture::kChecker: return "checker";
  }
  return "?";
}

Texture ParseTexture(const std::string& s) {
  if (s == "solid") return Texture::kSolid;
  if (s == "stripes") return Texture::kStripes;
  if (s == "checker") return Texture::kChecker;
  throw IoError("unknown texture '" + s + "'");
}

// Whether pixel (x, y) of an s×s box belongs to the shape (pixel centres).
bool Inside(ShapeKind kind, int x, int y, int s) {
  const double half = s / 2.0;
  const double dx = x + 0.5 - half;
  const double dy = y + 0.5 - half;
  switch (kind) {
    case ShapeKind::kDisc: return dx * dx + dy * dy <= half * half;
    case ShapeKind::kSquare: return true;
    case ShapeKind::kTriangle: return std::abs(dx) <= 0.5 * (y + 0.5);  // apex up, base at the bottom
    case ShapeKind::kDiamond: return std::abs(dx) + std::abs(dy) <= half;
  }
  return false;
}

double TextureGain(Texture t, int x, int y) {
  switch (t) {
    case Texture::kSolid: return 1.0;
    case Texture::kStripes: return (x / 3) % 2 == 0 ? 1.0 : 0.55;
    case Texture::kChecker: return ((x / 4) + (y / 4)) % 2 == 0 ? 1.0 : 0.55;
  }
  return 1.0;
}

std::uint8_t ToByte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

SyntheticSample Render(const SyntheticSpec& spec, const SyntheticClass& cls, RngStream rng) {
  const int size = spec.image_size;
  const int s = spec.min_object + static_cast<int>(rng.next_below(
                                      static_cast<std::uint64_t>(spec.max_object - spec.min_object + 1)));
  const int x0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(size - s + 1)));
  const int y0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(size - s + 1)));

  SyntheticSample out;
  out.image = Image8(size, size, 3);
  out.mask = SegMask(size, size);
  out.class_name = cls.name;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const int lx = x - x0, ly = y - y0;
      const bool obj = lx >= 0 && ly >= 0 && lx < s && ly < s && Inside(cls.shape, lx, ly, s);
      auto* px = out.image.at(y, x);
      for (int c = 0; c < 3; ++c) {
        const double base = obj ? cls.color[c] / 255.0 * TextureGain(cls.texture, lx, ly) : 0.5;
        px[c] = ToByte(base + spec.noise * rng.next_normal());
      }
      if (obj) {
        Part part = Part::kThorax;
        if (spec.part_masks) {
          part = 3 * lx < s ? Part::kHead : (3 * lx < 2 * s ? Part::kThorax : Part::kAbdomen);
        }
        out.mask.parts[static_cast<std::size_t>(y) * size + x] = part;
      }
    }
  }
  const auto count = out.mask.union_mask().count();
  const auto [lo, hi] = spec.mask_pixel_bounds();
  if (count < lo || count > hi) {
    throw Error("synthetic object of " + std::to_string(count) + " pixels outside bounds");
  }
  return out;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (classes.size() < 2) throw Error("synthetic spec needs at least 2 classes");
  std::set<std::string> names;
  for (const auto& c : classes) {
    if (c.name.empty() || !names.insert(c.name).second) {
      throw Error("synthetic spec: class names must be unique and non-empty");
    }
  }
  if (min_object < 3 || max_object < min_object) {
    throw Error("synthetic spec: need 3 <= min_object <= max_object");
  }
  if (max_object > image_size) {
    throw Error("synthetic spec: object size " + std::to_string(max_object) + " does not fit a " +
                std::to_string(image_size) + "px frame");
  }
  if (noise < 0.0) throw Error("synthetic spec: noise must be >= 0");
  if (train_per_class < 0 || val_per_class < 0 || test_per_class < 0) {
    throw Error("synthetic spec: negative sample count");
  }
}

std::pair<std::size_t, std::size_t> SyntheticSpec::mask_pixel_bounds() const {
  // Smallest shape (triangle/diamond) covers about half its box.
  const auto lo = static_cast<std::size_t>(std::floor(0.4 * min_object * min_object));
  const auto hi = static_cast<std::size_t>(max_object) * max_object;
  return {lo, hi};
}

SyntheticSpec DeskSyntheticSpec(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.seed = seed;
  spec.classes = {
      {"disc_red", ShapeKind::kDisc, {210, 50, 50}, Texture::kSolid},
      {"square_green", ShapeKind::kSquare, {50, 190, 60}, Texture::kStripes},
      {"triangle_blue", ShapeKind::kTriangle, {50, 70, 210}, Texture::kChecker},
  };
  return spec;
}

std::vector<SyntheticSample> GenerateSynthetic(const SyntheticSpec& spec) {
  spec.validate();
  const RngStream root(spec.seed);
  std::vector<SyntheticSample> samples;
  std::uint64_t index = 0;
  for (const auto& cls : spec.classes) {
    const std::pair<const char*, int> splits[] = {
        {"train", spec.train_per_class}, {"val", spec.val_per_class}, {"test", spec.test_per_class}};
    for (const auto& [split, count] : splits) {
      for (int i = 0; i < count; ++i) {
        auto sample = Render(spec, cls, root.derive(index++));
        sample.split = split;
        samples.push_back(std::move(sample));
      }
    }
  }
  return samples;
}

RunManifest MaterializeSynthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  const auto samples = GenerateSynthetic(spec);
  RunManifest m;
  m.root = out_dir;
  m.height = m.width = spec.image_size;
  m.channels = 3;
  m.normalization.mean = {0.5f, 0.5f, 0.5f};
  m.normalization.std = {0.25f, 0.25f, 0.25f};
  char name[32];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "%05zu.png", i);
    ManifestRecord r;
    r.image = std::string("images/") + name;
    r.mask = std::string("masks/") + name;
    r.class_name = samples[i].class_name;
    r.split = samples[i].split;
    WritePng(out_dir / r.image, samples[i].image);
    WritePng(out_dir / *r.mask, EncodeMask(samples[i].mask));
    m.records.push_back(std::move(r));
  }
  IndexManifest(m);
  SaveManifest(m, out_dir / "manifest.json");
  WriteFileAtomic(out_dir / "synthetic_spec.json", SyntheticSpecToJson(spec) + "\n");
  return m;
}

std::string SyntheticSpecToJson(const SyntheticSpec& spec) {
  json classes = json::array();
  for (const auto& c : spec.classes) {
    classes.push_back({{"name", c.name},
                       {"shape", ShapeName(c.shape)},
                       {"color", c.color},
                       {"texture", TextureName(c.texture)}});
  }
  json doc = {{"classes", classes},
              {"image_size", spec.image_size},
              {"min_object", spec.min_object},
              {"max_object", spec.max_object},
              {"noise", spec.noise},
              {"seed", spec.seed},
              {"train_per_class", spec.train_per_class},
              {"val_per_class", spec.val_per_class},
              {"test_per_class", spec.test_per_class},
              {"part_masks", spec.part_masks}};
  return doc.dump(1);
}

SyntheticSpec SyntheticSpecFromJson(const std::string& text) {
  SyntheticSpec spec;
  try {
    const json doc = json::parse(text);
    for (const auto& [key, value] : doc.items()) {
      if (key == "classes") {
        for (const auto& c : value) {
          spec.classes.push_back({c.at("name").get<std::string>(), ParseShape(c.at("shape").get<std::string>()),
                                  c.at("color").get<std::array<std::uint8_t, 3>>(),
                                  ParseTexture(c.value("texture", std::string("solid")))});
        }
      } else if (key == "image_size") {
        spec.image_size = value.get<int>();
      } else if (key == "min_object") {
        spec.min_object = value.get<int>();
      } else if (key == "max_object") {
        spec.max_object = value.get<int>();
      } else if (key == "noise") {
        spec.noise = value.get<double>();
      } else if (key == "seed") {
        spec.seed = value.get<std::uint64_t>();
      } else if (key == "train_per_class") {
        spec.train_per_class = value.get<int>();
      } else if (key == "val_per_class") {
        spec.val_per_class = value.get<int>();
      } else if (key == "test_per_class") {
        spec.test_per_class = value.get<int>();
      } else if (key == "part_masks") {
        spec.part_masks = value.get<bool>();
      } else {
        throw IoError("synthetic spec: unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("synthetic spec: ") + e.what());
  }
  if (spec.classes.empty()) spec.classes = DeskSyntheticSpec().classes;
  spec.validate();
  return spec;
}

}  // namespace xaib
