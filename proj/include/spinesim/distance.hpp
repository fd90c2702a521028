#pragma once

#include <cstdint>
#include <vector>

#include "spinesim/volume.hpp"

namespace spinesim {

/// Exact Euclidean distance (mm) from every voxel center to the nearest site
/// voxel center, honouring anisotropic spacing. `nearest` holds the linear
/// index of that site, or -1 when there are no sites.
struct DistanceField {
  Grid<double> distance_mm;
  std::vector<std::int64_t> nearest;
};

/// Separable lower-envelope-of-parabolas transform along x, y, then z.
/// The geometry's index_to_world is assumed to be a scaled rotation of the
/// lattice (spacing along the voxel axes); shear is not supported.
DistanceField distance_transform(const Grid<std::uint8_t>& sites);

}  // namespace spinesim
