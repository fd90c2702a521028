#include "spinesim/distance.hpp"

#include <cmath>
#include <limits>

namespace spinesim {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// One pass of the squared-distance transform over a line of n samples with
// the given spacing. f and feat are read from and written back to the line.
void edt_line(std::vector<double>& f, std::vector<std::int64_t>& feat, double spacing,
              std::vector<int>& v, std::vector<double>& z, std::vector<double>& out,
              std::vector<std::int64_t>& out_feat) {
  const int n = static_cast<int>(f.size());
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const double pq = q * spacing;
    while (k >= 0) {
      const double pv = v[k] * spacing;
      const double s = ((f[q] + pq * pq) - (f[v[k]] + pv * pv)) / (2.0 * (pq - pv));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    if (k == 0) {
      z[k] = -kInf;
    } else {
      const double pv = v[k - 1] * spacing;
      z[k] = ((f[q] + pq * pq) - (f[v[k - 1]] + pv * pv)) / (2.0 * (pq - pv));
    }
    z[k + 1] = kInf;
  }
  if (k < 0) return;  // no sites on this line
  int j = 0;
  for (int q = 0; q < n; ++q) {
    const double pq = q * spacing;
    while (z[j + 1] < pq) ++j;
    const double d = pq - v[j] * spacing;
    out[q] = d * d + f[v[j]];
    out_feat[q] = feat[v[j]];
  }
  for (int q = 0; q < n; ++q) {
    f[q] = out[q];
    feat[q] = out_feat[q];
  }
}

}  // namespace

DistanceField distance_transform(const Grid<std::uint8_t>& sites) {
  const Geometry& g = sites.geometry();
  const Dims& d = g.dims();
  const std::size_t total = g.voxel_count();
  std::vector<double> sq(total, kInf);
  std::vector<std::int64_t> feat(total, -1);
  for (std::size_t i = 0; i < total; ++i)
    if (sites[i]) {
      sq[i] = 0.0;
      feat[i] = static_cast<std::int64_t>(i);
    }

  const int longest = std::max({d[0], d[1], d[2]});
  std::vector<double> f(longest), z(longest + 1), out(longest);
  std::vector<std::int64_t> lf(longest), out_feat(longest);
  std::vector<int> v(longest);
  const std::size_t stride[3] = {1, static_cast<std::size_t>(d[0]),
                                 static_cast<std::size_t>(d[0]) * d[1]};
  for (int axis = 0; axis < 3; ++axis) {
    const int n = d[axis];
    const int a = (axis + 1) % 3, b = (axis + 2) % 3;
    f.resize(n);
    lf.resize(n);
    out.resize(n);
    out_feat.resize(n);
    for (int jb = 0; jb < d[b]; ++jb)
      for (int ja = 0; ja < d[a]; ++ja) {
        const std::size_t base = ja * stride[a] + jb * stride[b];
        for (int q = 0; q < n; ++q) {
          f[q] = sq[base + q * stride[axis]];
          lf[q] = feat[base + q * stride[axis]];
        }
        edt_line(f, lf, g.spacing()[axis], v, z, out, out_feat);
        for (int q = 0; q < n; ++q) {
          sq[base + q * stride[axis]] = f[q];
          feat[base + q * stride[axis]] = lf[q];
        }
      }
  }

  DistanceField out_field{Grid<double>(g, kInf), std::move(feat)};
  for (std::size_t i = 0; i < total; ++i) out_field.distance_mm[i] = std::sqrt(sq[i]);
  return out_field;
}

}  // namespace spinesim
