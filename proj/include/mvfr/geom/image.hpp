#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

namespace mvfr::geom {

// Float image in [0,1], row-major [height][width][channels].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.f)
      : width(w), height(h), channels(c), data(size_t(w) * h * c, fill) {}

  bool empty() const { return data.empty(); }
  float& at(int x, int y, int c) {
    return data[(size_t(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c) const {
    return data[(size_t(y) * width + x) * channels + c];
  }
  bool contains(double x, double y) const {
    return x >= 0.0 && y >= 0.0 && x <= double(width - 1) && y <= double(height - 1);
  }

  // bilinear sample at continuous pixel coordinates (integer = pixel center),
  // taps clamped to the image border
  Eigen::Vector3d sample_bilinear(double x, double y) const;
};

// PNG I/O. Reading accepts 8- or 16-bit gray/RGB/RGBA and scales to [0,1];
// writing emits 8-bit (1 or 3 channel) files.
Image load_png(const std::string& path);
void save_png(const std::string& path, const Image& img);

}  // namespace mvfr::geom
