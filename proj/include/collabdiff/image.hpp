#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace collabdiff::img {

/**
 * Row-major float image, values in [0, 1], interleaved channels (1 = gray,
 * 3 = RGB). The float representation is exact for 8-bit sources (v/255), so
 * a read -> identity-transform -> write round trip is byte-identical.
 */
struct Image {
  int height = 0, width = 0, channels = 0;
  std::vector<float> data;  // height * width * channels

  Image() = default;
  Image(int height, int width, int channels);

  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// PNG reader (8-bit; gray/RGB; alpha stripped, 16-bit narrowed).
Image read_png(const std::string& path);
/// PNG writer (8-bit gray or RGB, values clamped to [0, 1] and rounded).
void write_png(const std::string& path, const Image& image);

}  // namespace collabdiff::img
