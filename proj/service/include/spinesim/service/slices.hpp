#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spinesim/mesh.hpp"
#include "spinesim/volume.hpp"

namespace spinesim::service {

enum class SliceAxis { X, Y, Z };

/// "x", "y", "z" or "sagittal", "coronal", "axial". Throws FormatError.
SliceAxis slice_axis_from_string(const std::string& s);

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  std::array<std::uint8_t, 3> at(int x, int y) const {
    const std::size_t o = 3 * (static_cast<std::size_t>(y) * width + x);
    return {rgb[o], rgb[o + 1], rgb[o + 2]};
  }
};

inline constexpr double kOverlayAlpha = 0.4;

/// Grey plane of `v` windowed to the volume's intensity range. Pixel (u, w)
/// maps to voxel (u, w, index) for Z, (u, index, w) for Y and (index, u, w) for X.
/// Labelled overlay voxels are blended with their palette colour at `alpha`.
/// Throws GeometryError when the index is out of range or the overlay
/// lattice differs from the volume's.
RgbImage render_slice(const Volume& v, SliceAxis axis, int index, const LabelMap* overlay = nullptr,
                      const Palette& palette = default_palette(), double alpha = kOverlayAlpha);

std::vector<std::uint8_t> encode_png(const RgbImage& img);
RgbImage decode_png(const std::vector<std::uint8_t>& bytes);

}  // namespace spinesim::service
