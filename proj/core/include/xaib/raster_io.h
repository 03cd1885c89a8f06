#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xaib/image_io.h"
#include "xaib/tensor.h"

namespace xaib {

// Writes to a sibling temp file then renames it over `path`, creating parent
// directories as needed.
void WriteFileAtomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void WriteFileAtomic(const std::filesystem::path& path, std::string_view text);
std::vector<std::uint8_t> ReadFileBytes(const std::filesystem::path& path);
std::string ReadFileText(const std::filesystem::path& path);

// Float raster layout:
//   8 bytes   magic "XAIBRAST"
//   u32 LE    format version (1)
//   u32 LE    header length L
//   L bytes   JSON header {"shape": [...], "dtype": "float32-le", ...extra}
//   payload   prod(shape) little-endian float32 values, row-major
inline constexpr std::string_view kRasterMagic = "XAIBRAST";
inline constexpr std::uint32_t kRasterVersion = 1;

struct Raster {
  Shape shape;
  std::vector<float> values;
  std::string header_json;  // full header as stored
};

// `extra_json` must be a JSON object whose keys are merged into the header.
std::vector<std::uint8_t> EncodeRaster(const Shape& shape, std::span<const float> values,
                                       const std::string& extra_json = "{}");
Raster DecodeRaster(std::span<const std::uint8_t> bytes);
void WriteRaster(const std::filesystem::path& path, const Shape& shape,
                 std::span<const float> values, const std::string& extra_json = "{}");
Raster ReadRaster(const std::filesystem::path& path);

// Min-max normalized 8-bit heatmap (blue -> white -> red ramp). A constant
// raster maps to mid-scale.
Image8 Heatmap(std::span<const float> values, int height, int width);

// Little-endian helpers shared with the checkpoint format.
void AppendU32(std::vector<std::uint8_t>& out, std::uint32_t v);
void AppendU64(std::vector<std::uint8_t>& out, std::uint64_t v);
void AppendFloats(std::vector<std::uint8_t>& out, std::span<const float> values);
std::uint32_t ReadU32(std::span<const std::uint8_t> bytes, std::size_t offset);
std::uint64_t ReadU64(std::span<const std::uint8_t> bytes, std::size_t offset);
void ReadFloats(std::span<const std::uint8_t> bytes, std::size_t offset, std::span<float> out);

}  // namespace xaib
