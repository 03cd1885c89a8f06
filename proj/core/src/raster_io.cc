#include "xaib/raster_io.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "xaib/error.h"

namespace xaib {

using nlohmann::json;

void WriteFileAtomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

void WriteFileAtomic(const std::filesystem::path& path, std::string_view text) {
  WriteFileAtomic(path, std::span<const std::uint8_t>(
                            reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> ReadFileBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string ReadFileText(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void AppendU32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void AppendU64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void AppendFloats(std::vector<std::uint8_t>& out, std::span<const float> values) {
  const std::size_t base = out.size();
  out.resize(base + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) out[base + i * 4 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
}

std::uint32_t ReadU32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (offset + 4 > bytes.size()) throw IoError("truncated file (u32 at offset " + std::to_string(offset) + ")");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::uint64_t ReadU64(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (offset + 8 > bytes.size()) throw IoError("truncated file (u64 at offset " + std::to_string(offset) + ")");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
  return v;
}

void ReadFloats(std::span<const std::uint8_t> bytes, std::size_t offset, std::span<float> out) {
  if (offset + out.size() * 4 > bytes.size()) throw IoError("truncated float payload");
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[offset + i * 4 + b]) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
}

std::vector<std::uint8_t> EncodeRaster(const Shape& shape, std::span<const float> values,
                                       const std::string& extra_json) {
  if (static_cast<std::size_t>(NumElements(shape)) != values.size()) {
    throw Error("raster: shape " + ShapeToString(shape) + " does not match " +
                std::to_string(values.size()) + " values");
  }
  json header = json::parse(extra_json);
  if (!header.is_object()) throw Error("raster: extra header must be a JSON object");
  header["shape"] = shape;
  header["dtype"] = "float32-le";
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kRasterMagic.begin(), kRasterMagic.end());
  AppendU32(out, kRasterVersion);
  AppendU32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  AppendFloats(out, values);
  return out;
}

Raster DecodeRaster(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kRasterMagic.size() + 8 ||
      !std::equal(kRasterMagic.begin(), kRasterMagic.end(), bytes.begin())) {
    throw IoError("not a float raster (bad magic)");
  }
  const auto version = ReadU32(bytes, 8);
  if (version != kRasterVersion) throw IoError("unsupported raster version " + std::to_string(version));
  const auto header_len = ReadU32(bytes, 12);
  if (16 + static_cast<std::size_t>(header_len) > bytes.size()) throw IoError("truncated raster header");
  Raster r;
  r.header_json.assign(reinterpret_cast<const char*>(bytes.data()) + 16, header_len);
  json header;
  try {
    header = json::parse(r.header_json);
    r.shape = header.at("shape").get<Shape>();
    if (header.at("dtype") != "float32-le") throw IoError("unsupported raster dtype");
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed raster header: ") + e.what());
  }
  const auto n = static_cast<std::size_t>(NumElements(r.shape));
  const std::size_t payload = 16 + header_len;
  if (bytes.size() != payload + n * 4) throw IoError("raster payload size does not match shape");
  r.values.resize(n);
  ReadFloats(bytes, payload, r.values);
  return r;
}

void WriteRaster(const std::filesystem::path& path, const Shape& shape,
                 std::span<const float> values, const std::string& extra_json) {
  WriteFileAtomic(path, EncodeRaster(shape, values, extra_json));
}

Raster ReadRaster(const std::filesystem::path& path) { return DecodeRaster(ReadFileBytes(path)); }

Image8 Heatmap(std::span<const float> values, int height, int width) {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw Error("heatmap: " + std::to_string(values.size()) + " values for " +
                std::to_string(height) + "x" + std::to_string(width));
  }
  Image8 img(height, width, 3);
  if (values.empty()) return img;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double t = hi > lo ? (values[i] - lo) / (hi - lo) : 0.5;
    // Diverging ramp: blue (0) -> white (0.5) -> red (1).
    double r, g, b;
    if (t < 0.5) {
      r = g = 2.0 * t;
      b = 1.0;
    } else {
      r = 1.0;
      g = b = 2.0 * (1.0 - t);
    }
    auto* px = img.pixels.data() + i * 3;
    px[0] = static_cast<std::uint8_t>(std::lround(r * 255.0));
    px[1] = static_cast<std::uint8_t>(std::lround(g * 255.0));
    px[2] = static_cast<std::uint8_t>(std::lround(b * 255.0));
  }
  return img;
}

}  // namespace xaib
