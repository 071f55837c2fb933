#include "fewshot/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

// jpeglib.h needs stdio declarations first
#include <jpeglib.h>

#include "fewshot/error.hpp"

namespace fewshot {

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image from_interleaved(const unsigned char* data, std::size_t channels, std::size_t h, std::size_t w) {
  Image img(channels, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        img.at(c, y, x) = static_cast<float>(data[(y * w + x) * channels + c]) / 255.0f;
  return img;
}

Image decode_png(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DataError("undecodable PNG " + path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("undecodable PNG " + path.string() + ": " + image.message);
  }
  return from_interleaved(buffer.data(), color ? 3 : 1, image.height, image.width);
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr info) {
  auto* err = reinterpret_cast<JpegErrorManager*>(info->err);
  (*info->err->format_message)(info, err->message);
  std::longjmp(err->jump, 1);
}

Image decode_jpeg(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  jpeg_decompress_struct info;
  JpegErrorManager err;
  info.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  // Everything touched after setjmp lives outside this frame or is volatile.
  std::vector<unsigned char> buffer;
  std::size_t h = 0, w = 0, c = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&info);
    throw DataError("undecodable JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&info);
  jpeg_mem_src(&info, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&info, TRUE);
  info.out_color_space = info.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&info);
  h = info.output_height;
  w = info.output_width;
  c = static_cast<std::size_t>(info.output_components);
  buffer.resize(h * w * c);
  while (info.output_scanline < info.output_height) {
    unsigned char* row = buffer.data() + static_cast<std::size_t>(info.output_scanline) * w * c;
    jpeg_read_scanlines(&info, &row, 1);
  }
  jpeg_finish_decompress(&info);
  jpeg_destroy_decompress(&info);
  return from_interleaved(buffer.data(), c, h, w);
}

float sample_bilinear(const Image& img, std::size_t c, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const std::size_t y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double top = img.at(c, y0, x0) * (1 - fx) + img.at(c, y0, x1) * fx;
  const double bottom = img.at(c, y1, x0) * (1 - fx) + img.at(c, y1, x1) * fx;
  return static_cast<float>(top * (1 - fy) + bottom * fy);
}

// Area average along one axis, `in` and `out` sample counts.
std::vector<std::array<double, 3>> area_weights(std::size_t in, std::size_t out) {
  // entries: (source index, destination index, weight)
  std::vector<std::array<double, 3>> w;
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double lo = static_cast<double>(o) * scale;
    const double hi = lo + scale;
    for (std::size_t i = static_cast<std::size_t>(std::floor(lo)); i < in && static_cast<double>(i) < hi; ++i) {
      const double overlap = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
      if (overlap > 0) w.push_back({static_cast<double>(i), static_cast<double>(o), overlap / scale});
    }
  }
  return w;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  static constexpr unsigned char kPng[] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::equal(kPng, kPng + 4, bytes.begin())) return decode_png(bytes, path);
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return decode_jpeg(bytes, path);
  throw DataError("not a PNG or JPEG image: " + path.string());
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw DataError("PNG output needs 1 or 3 channels");
  std::vector<unsigned char> buffer(image.pixels.size());
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < image.channels; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        buffer[(y * image.width + x) * image.channels + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  png_image out;
  std::memset(&out, 0, sizeof out);
  out.version = PNG_IMAGE_VERSION;
  out.width = static_cast<png_uint_32>(image.width);
  out.height = static_cast<png_uint_32>(image.height);
  out.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&out, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + out.message);
  }
}

Image convert_channels(const Image& image, std::size_t channels) {
  if (channels == image.channels) return image;
  Image out(channels, image.height, image.width);
  if (image.channels == 1 && channels == 3) {
    for (std::size_t c = 0; c < 3; ++c)
      std::copy(image.pixels.begin(), image.pixels.end(), out.pixels.begin() + static_cast<std::ptrdiff_t>(c * image.pixels.size()));
    return out;
  }
  if (image.channels == 3 && channels == 1) {
    for (std::size_t y = 0; y < image.height; ++y)
      for (std::size_t x = 0; x < image.width; ++x)
        out.at(0, y, x) = 0.299f * image.at(0, y, x) + 0.587f * image.at(1, y, x) + 0.114f * image.at(2, y, x);
    return out;
  }
  throw DataError("cannot convert " + std::to_string(image.channels) + " channels to " + std::to_string(channels));
}

Image resize(const Image& image, std::size_t height, std::size_t width) {
  if (image.height == height && image.width == width) return image;
  Image out(image.channels, height, width);
  if (height <= image.height && width <= image.width) {
    const auto wy = area_weights(image.height, height);
    const auto wx = area_weights(image.width, width);
    std::vector<double> acc(out.pixels.size(), 0.0);
    for (std::size_t c = 0; c < image.channels; ++c)
      for (const auto& [iy, oy, fy] : wy)
        for (const auto& [ix, ox, fx] : wx) {
          acc[(c * height + static_cast<std::size_t>(oy)) * width + static_cast<std::size_t>(ox)] +=
              fy * fx * image.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
        }
    for (std::size_t i = 0; i < acc.size(); ++i) out.pixels[i] = static_cast<float>(acc[i]);
    return out;
  }
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        out.at(c, y, x) = sample_bilinear(image, c, (static_cast<double>(y) + 0.5) * sy - 0.5,
                                          (static_cast<double>(x) + 0.5) * sx - 0.5);
  return out;
}

Image rotate90(const Image& image, int quarter_turns) {
  if (image.height != image.width) throw DataError("quarter-turn rotation needs a square image");
  const int turns = ((quarter_turns % 4) + 4) % 4;
  Image current = image;
  const std::size_t n = image.height;
  for (int t = 0; t < turns; ++t) {
    Image next(current.channels, n, n);
    // counter-clockwise: out(r, c) = in(c, n-1-r)
    for (std::size_t ch = 0; ch < current.channels; ++ch)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) next.at(ch, r, c) = current.at(ch, c, n - 1 - r);
    current = std::move(next);
  }
  return current;
}

Image flip_horizontal(const Image& image) {
  Image out = image;
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t y = 0; y < image.height; ++y)
      for (std::size_t x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
  return out;
}

Image rotate_degrees(const Image& image, double degrees) {
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(image.height) - 1) / 2;
  const double cx = (static_cast<double>(image.width) - 1) / 2;
  Image out(image.channels, image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      // inverse map of a counter-clockwise rotation
      const double sx = cs * dx - sn * dy + cx;
      const double sy = sn * dx + cs * dy + cy;
      for (std::size_t c = 0; c < image.channels; ++c) out.at(c, y, x) = sample_bilinear(image, c, sy, sx);
    }
  return out;
}

}  // namespace fewshot
