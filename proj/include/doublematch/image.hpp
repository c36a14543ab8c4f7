#pragma once

#include <cassert>
#include <vector>

namespace dm {

// Interleaved H x W x channels image with values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float value = 0.0f)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, value) {}

  float& at(int y, int x, int c) {
    assert(y >= 0 && y < height && x >= 0 && x < width && c >= 0 && c < channels);
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    assert(y >= 0 && y < height && x >= 0 && x < width && c >= 0 && c < channels);
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  bool operator==(const Image&) const = default;
};

}  // namespace dm
