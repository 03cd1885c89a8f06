#include "xaib/image_io.h"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "xaib/error.h"
#include "xaib/raster_io.h"

namespace xaib {

Image8 ReadImage(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw IoError("cannot decode image: " + path.string());
  if (raw.depth() != CV_8U) {
    cv::Mat converted;
    const double scale = raw.depth() == CV_16U ? 1.0 / 257.0 : 1.0;
    raw.convertTo(converted, CV_8U, scale);
    raw = converted;
  }
  cv::Mat rgb;
  switch (raw.channels()) {
    case 1:
      cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB);
      break;
    case 3:
      cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
      break;
    case 4:
      cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGBA);
      break;
    default:
      throw IoError("unsupported channel count " + std::to_string(raw.channels()) + ": " +
                    path.string());
  }
  Image8 out(rgb.rows, rgb.cols, rgb.channels());
  for (int y = 0; y < rgb.rows; ++y) {
    std::copy_n(rgb.ptr<std::uint8_t>(y), static_cast<std::size_t>(rgb.cols) * rgb.channels(),
                out.at(y, 0));
  }
  return out;
}

std::vector<std::uint8_t> EncodePng(const Image8& image) {
  if (image.channels != 1 && image.channels != 3 && image.channels != 4) {
    throw Error("EncodePng: unsupported channel count " + std::to_string(image.channels));
  }
  const int type = CV_8UC(image.channels);
  cv::Mat view(image.height, image.width, type, const_cast<std::uint8_t*>(image.pixels.data()));
  cv::Mat bgr;
  if (image.channels == 3) {
    cv::cvtColor(view, bgr, cv::COLOR_RGB2BGR);
  } else if (image.channels == 4) {
    cv::cvtColor(view, bgr, cv::COLOR_RGBA2BGRA);
  } else {
    bgr = view;
  }
  std::vector<std::uint8_t> bytes;
  if (!cv::imencode(".png", bgr, bytes)) throw Error("PNG encoding failed");
  return bytes;
}

void WritePng(const std::filesystem::path& path, const Image8& image) {
  WriteFileAtomic(path, EncodePng(image));
}

Tensor ImageToTensor(const Image8& image, int height, int width, const Normalization& norm) {
  const int channels = std::min(image.channels, 3);
  if (static_cast<int>(norm.mean.size()) < channels || static_cast<int>(norm.std.size()) < channels) {
    throw Error("normalization constants cover fewer channels than the image has");
  }
  cv::Mat src(image.height, image.width, CV_32FC(channels));
  for (int y = 0; y < image.height; ++y) {
    auto* row = src.ptr<float>(y);
    for (int x = 0; x < image.width; ++x) {
      const auto* px = image.at(y, x);
      for (int c = 0; c < channels; ++c) row[x * channels + c] = px[c] / 255.0f;
    }
  }
  cv::Mat resized = src;
  if (image.height != height || image.width != width) {
    cv::resize(src, resized, cv::Size(width, height), 0.0, 0.0, cv::INTER_LINEAR);
  }
  Tensor out({channels, height, width});
  auto dst = out.data();
  for (int c = 0; c < channels; ++c) {
    const float mean = norm.mean[c];
    const float inv_std = 1.0f / norm.std[c];
    for (int y = 0; y < height; ++y) {
      const auto* row = resized.ptr<float>(y);
      for (int x = 0; x < width; ++x) {
        dst[(static_cast<std::size_t>(c) * height + y) * width + x] =
            (row[x * channels + c] - mean) * inv_std;
      }
    }
  }
  return out;
}

Tensor LoadImage(const std::filesystem::path& path, int height, int width,
                 const Normalization& norm) {
  return ImageToTensor(ReadImage(path), height, width, norm);
}

}  // namespace xaib
