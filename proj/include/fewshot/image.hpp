#pragma once
// Decoded images and the pixel-level transforms used by the data pipeline.
// Pixels are stored channel-major (CHW) as floats in [0,1].

#include <cstddef>
#include <filesystem>
#include <vector>

namespace fewshot {

struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  bool operator==(const Image&) const = default;
};

// PNG or JPEG, recognised by signature. Throws DataError on anything else.
Image read_image(const std::filesystem::path& path);
// 8-bit PNG with 1 or 3 channels; values are clamped to [0,1].
void write_png(const std::filesystem::path& path, const Image& image);

// Gray <-> RGB (luma weights 0.299/0.587/0.114 when reducing).
Image convert_channels(const Image& image, std::size_t channels);
// Area-averaging when shrinking, bilinear when enlarging.
Image resize(const Image& image, std::size_t height, std::size_t width);

// Counter-clockwise quarter turns of a square image.
Image rotate90(const Image& image, int quarter_turns);
Image flip_horizontal(const Image& image);
// Rotation by an arbitrary angle about the centre, bilinear, edges clamped.
Image rotate_degrees(const Image& image, double degrees);

}  // namespace fewshot
