#include "spinesim/service/slices.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <png.h>

namespace spinesim::service {

SliceAxis slice_axis_from_string(const std::string& s) {
  if (s == "x" || s == "sagittal") return SliceAxis::X;
  if (s == "y" || s == "coronal") return SliceAxis::Y;
  if (s == "z" || s == "axial") return SliceAxis::Z;
  throw FormatError("unknown slice axis '" + s + "'");
}

RgbImage render_slice(const Volume& v, SliceAxis axis, int index, const LabelMap* overlay, const Palette& palette,
                      double alpha) {
  const Dims& d = v.geometry().dims();
  const int a = axis == SliceAxis::X ? 0 : axis == SliceAxis::Y ? 1 : 2;
  if (index < 0 || index >= d[a])
    throw GeometryError("slice index " + std::to_string(index) + " outside [0, " + std::to_string(d[a]) + ")");
  if (overlay) require_same_geometry(v.geometry(), overlay->geometry(), "slice image and overlay");

  const auto [lo, hi] = std::minmax_element(v.data().begin(), v.data().end());
  const double vmin = *lo, range = static_cast<double>(*hi) - *lo;

  RgbImage img;
  img.width = a == 0 ? d[1] : d[0];
  img.height = a == 2 ? d[1] : d[2];
  img.rgb.resize(3 * static_cast<std::size_t>(img.width) * img.height);
  for (int w = 0; w < img.height; ++w)
    for (int u = 0; u < img.width; ++u) {
      const int x = a == 0 ? index : u;
      const int y = a == 0 ? u : a == 1 ? index : w;
      const int z = a == 2 ? index : w;
      const double grey = range > 0 ? 255.0 * (v(x, y, z) - vmin) / range : 0.0;
      double c[3] = {grey, grey, grey};
      if (overlay) {
        if (const Label l = (*overlay)(x, y, z)) {
          const Rgba col = palette_color(palette, l);
          const double rgb[3] = {col.r * 255.0, col.g * 255.0, col.b * 255.0};
          for (int i = 0; i < 3; ++i) c[i] = (1.0 - alpha) * c[i] + alpha * rgb[i];
        }
      }
      const std::size_t o = 3 * (static_cast<std::size_t>(w) * img.width + u);
      for (int i = 0; i < 3; ++i) img.rgb[o + i] = static_cast<std::uint8_t>(std::clamp(std::lround(c[i]), 0L, 255L));
    }
  return img;
}

std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, img.rgb.data(), 0, nullptr))
    throw Error(std::string("png encode: ") + pi.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.rgb.data(), 0, nullptr))
    throw Error(std::string("png encode: ") + pi.message);
  out.resize(size);
  return out;
}

RgbImage decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size()))
    throw FormatError(std::string("png decode: ") + pi.message);
  pi.format = PNG_FORMAT_RGB;
  RgbImage img;
  img.width = static_cast<int>(pi.width);
  img.height = static_cast<int>(pi.height);
  img.rgb.resize(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, img.rgb.data(), 0, nullptr))
    throw FormatError(std::string("png decode: ") + pi.message);
  return img;
}

}  // namespace spinesim::service
