#include "spinesim/deformable.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <fmt/format.h>

#include "spinesim/nifti_io.hpp"

namespace spinesim {
namespace {

// Linear interpolation weights along one axis with clamp-to-edge. `live` is
// false when the coordinate was clamped, which zeroes the derivative.
struct Axis {
  int i0;
  int i1;
  double t;
  bool live;
};

inline Axis axis_of(double x, int n) {
  if (n == 1) return {0, 0, 0.0, false};
  bool live = true;
  if (x < 0.0) {
    x = 0.0;
    live = false;
  } else if (x > n - 1) {
    x = n - 1;
    live = false;
  }
  int i0 = static_cast<int>(x);
  if (i0 > n - 2) i0 = n - 2;
  return {i0, i0 + 1, x - i0, live};
}

// Trilinear sample of all descriptor channels plus their spatial gradients.
struct ChannelSample {
  std::array<double, DescriptorField::kChannels> value;
  std::array<Vec3, DescriptorField::kChannels> grad;
};

inline void sample_channels(const DescriptorField& f, const Vec3& p, ChannelSample& out,
                            bool with_grad) {
  constexpr int C = DescriptorField::kChannels;
  const Geometry& g = f.geometry();
  const auto& d = g.dims();
  const Axis ax = axis_of(p.x(), d[0]);
  const Axis ay = axis_of(p.y(), d[1]);
  const Axis az = axis_of(p.z(), d[2]);
  const double* base = f.data().data();
  const double* f000 = base + g.linear(ax.i0, ay.i0, az.i0) * C;
  const double* f100 = base + g.linear(ax.i1, ay.i0, az.i0) * C;
  const double* f010 = base + g.linear(ax.i0, ay.i1, az.i0) * C;
  const double* f110 = base + g.linear(ax.i1, ay.i1, az.i0) * C;
  const double* f001 = base + g.linear(ax.i0, ay.i0, az.i1) * C;
  const double* f101 = base + g.linear(ax.i1, ay.i0, az.i1) * C;
  const double* f011 = base + g.linear(ax.i0, ay.i1, az.i1) * C;
  const double* f111 = base + g.linear(ax.i1, ay.i1, az.i1) * C;
  const double tx = ax.t, ty = ay.t, tz = az.t;
  // (1 - t) a + t b is exact at both t = 0 and t = 1, so sampling on the
  // lattice (including the far edge) returns stored values bit for bit.
  auto lerp = [](double a, double b, double t) { return (1.0 - t) * a + t * b; };
  for (int c = 0; c < C; ++c) {
    const double c00 = lerp(f000[c], f100[c], tx);
    const double c10 = lerp(f010[c], f110[c], tx);
    const double c01 = lerp(f001[c], f101[c], tx);
    const double c11 = lerp(f011[c], f111[c], tx);
    const double c0 = lerp(c00, c10, ty);
    const double c1 = lerp(c01, c11, ty);
    out.value[c] = lerp(c0, c1, tz);
    if (!with_grad) continue;
    double gx = 0.0, gy = 0.0, gz = 0.0;
    if (ax.live) {
      const double d00 = f100[c] - f000[c];
      const double d10 = f110[c] - f010[c];
      const double d01 = f101[c] - f001[c];
      const double d11 = f111[c] - f011[c];
      const double d0 = d00 + (d10 - d00) * ty;
      const double d1 = d01 + (d11 - d01) * ty;
      gx = d0 + (d1 - d0) * tz;
    }
    if (ay.live) gy = (c10 - c00) + ((c11 - c01) - (c10 - c00)) * tz;
    if (az.live) gz = c1 - c0;
    out.grad[c] = Vec3(gx, gy, gz);
  }
}

// Per-axis upsampling weights from integer fixed voxels to control nodes.
struct UpsampleAxis {
  std::vector<int> i0;
  std::vector<double> t;
};

UpsampleAxis upsample_axis(const DisplacementField& d, int axis) {
  const int n = d.fixed_geometry().dims()[axis];
  const int nodes = d.control_dims()[axis];
  UpsampleAxis out;
  out.i0.resize(n);
  out.t.resize(n);
  for (int x = 0; x < n; ++x) {
    double c = d.control_coord(axis, x);
    int i0 = static_cast<int>(std::floor(c));
    i0 = std::clamp(i0, 0, nodes - 2);
    out.i0[x] = i0;
    out.t[x] = c - i0;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

DescriptorField::DescriptorField(Geometry geometry, std::vector<double> data)
    : geometry_(std::move(geometry)), data_(std::move(data)) {
  if (data_.size() != geometry_.voxel_count() * kChannels)
    throw GeometryError("descriptor data length does not match geometry");
}

DescriptorField mind_descriptors(const Volume& v, const MindParams& p) {
  if (!(p.patch_sigma > 0.0)) throw std::invalid_argument("patch_sigma must be > 0");
  constexpr int C = DescriptorField::kChannels;
  const Geometry& g = v.geometry();
  const auto& d = g.dims();
  const std::size_t n = g.voxel_count();
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(v[i])) {
      const auto [x, y, z] = g.unlinear(i);
      throw NumericError(fmt::format("non-finite intensity at voxel ({}, {}, {})", x, y, z));
    }

  std::vector<std::vector<double>> patch(C, std::vector<double>(n));
  for (int r = 0; r < C; ++r) {
    const auto& off = kMindOffsets[r];
    auto& buf = patch[r];
    for (int k = 0; k < d[2]; ++k)
      for (int j = 0; j < d[1]; ++j)
        for (int i = 0; i < d[0]; ++i) {
          const double diff = static_cast<double>(v(i, j, k)) -
                              static_cast<double>(v.clamped(i + off[0], j + off[1], k + off[2]));
          buf[g.linear(i, j, k)] = diff * diff;
        }
    gaussian_smooth_buffer(buf, d, p.patch_sigma);
  }

  std::vector<double> variance(n);
  double mean_variance = 0.0;
  for (std::size_t x = 0; x < n; ++x) {
    double s = 0.0;
    for (int r = 0; r < C; ++r) s += patch[r][x];
    variance[x] = s / C;
    mean_variance += variance[x];
  }
  mean_variance /= static_cast<double>(n);

  std::vector<double> out(n * C, 1.0);
  if (!(mean_variance > 0.0)) return DescriptorField(g, std::move(out));

  const double lo = p.clamp_low * mean_variance;
  const double hi = p.clamp_high * mean_variance;
  for (std::size_t x = 0; x < n; ++x) {
    const double var = std::clamp(variance[x], lo, hi);
    double* ch = out.data() + x * C;
    double peak = 0.0;
    for (int r = 0; r < C; ++r) {
      ch[r] = std::exp(-std::min(patch[r][x] / var, 700.0));
      peak = std::max(peak, ch[r]);
    }
    for (int r = 0; r < C; ++r) ch[r] /= peak;
  }
  return DescriptorField(g, std::move(out));
}

double similarity_S(const DescriptorField& fixed, const DescriptorField& moving) {
  require_same_geometry(fixed.geometry(), moving.geometry(), "similarity_S");
  const auto a = fixed.data();
  const auto b = moving.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    sum += diff * diff;
  }
  return sum / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------

namespace {
Dims default_control_dims(const Geometry& g, int stride) {
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  Dims c;
  for (int a = 0; a < 3; ++a) c[a] = std::max(2, (g.dims()[a] + stride - 1) / stride);
  return c;
}
}  // namespace

DisplacementField::DisplacementField(Geometry fixed, int stride)
    : DisplacementField(fixed, default_control_dims(fixed, stride), stride) {}

DisplacementField::DisplacementField(Geometry fixed, Dims control_dims, int stride)
    : fixed_(std::move(fixed)), control_(control_dims), stride_(stride) {
  for (int c : control_)
    if (c < 2) throw std::invalid_argument("control grid needs at least 2 nodes per axis");
  values_.assign(node_count() * 3, 0.0);
}

Vec3 DisplacementField::node(int i, int j, int k) const {
  const std::size_t n = node_index(i, j, k) * 3;
  return Vec3(values_[n], values_[n + 1], values_[n + 2]);
}

void DisplacementField::set_node(int i, int j, int k, const Vec3& d) {
  const std::size_t n = node_index(i, j, k) * 3;
  values_[n] = d.x();
  values_[n + 1] = d.y();
  values_[n + 2] = d.z();
}

double DisplacementField::control_coord(int axis, double voxel) const {
  const int dim = fixed_.dims()[axis];
  if (dim == 1) return 0.0;
  return voxel * (control_[axis] - 1) / static_cast<double>(dim - 1);
}

Vec3 DisplacementField::upsampled(const Vec3& fixed_voxel) const {
  int i0[3];
  double t[3];
  for (int a = 0; a < 3; ++a) {
    const double c = std::clamp(control_coord(a, fixed_voxel[a]), 0.0, control_[a] - 1.0);
    i0[a] = std::min(static_cast<int>(std::floor(c)), control_[a] - 2);
    t[a] = c - i0[a];
  }
  Vec3 out = Vec3::Zero();
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double w = (dx ? t[0] : 1 - t[0]) * (dy ? t[1] : 1 - t[1]) * (dz ? t[2] : 1 - t[2]);
        out += w * node(i0[0] + dx, i0[1] + dy, i0[2] + dz);
      }
  return out;
}

std::vector<double> DisplacementField::upsample_dense() const {
  const auto& d = fixed_.dims();
  const UpsampleAxis ux = upsample_axis(*this, 0);
  const UpsampleAxis uy = upsample_axis(*this, 1);
  const UpsampleAxis uz = upsample_axis(*this, 2);
  std::vector<double> out(fixed_.voxel_count() * 3);
  const std::size_t sx = 3, sy = 3 * static_cast<std::size_t>(control_[0]),
                    sz = sy * static_cast<std::size_t>(control_[1]);
  std::size_t idx = 0;
  for (int k = 0; k < d[2]; ++k) {
    const double tz = uz.t[k];
    for (int j = 0; j < d[1]; ++j) {
      const double ty = uy.t[j];
      for (int i = 0; i < d[0]; ++i, ++idx) {
        const double tx = ux.t[i];
        const double* n000 = values_.data() + ux.i0[i] * sx + uy.i0[j] * sy + uz.i0[k] * sz;
        const double w[8] = {(1 - tx) * (1 - ty) * (1 - tz), tx * (1 - ty) * (1 - tz),
                             (1 - tx) * ty * (1 - tz),       tx * ty * (1 - tz),
                             (1 - tx) * (1 - ty) * tz,       tx * (1 - ty) * tz,
                             (1 - tx) * ty * tz,             tx * ty * tz};
        const std::size_t off[8] = {0, sx, sy, sx + sy, sz, sx + sz, sy + sz, sx + sy + sz};
        double acc[3] = {0, 0, 0};
        for (int c = 0; c < 8; ++c)
          for (int a = 0; a < 3; ++a) acc[a] += w[c] * n000[off[c] + a];
        out[idx * 3] = acc[0];
        out[idx * 3 + 1] = acc[1];
        out[idx * 3 + 2] = acc[2];
      }
    }
  }
  return out;
}

double DisplacementField::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

double regularizer_R_with_gradient(const DisplacementField& d, double eps, double lambda,
                                   std::span<double> grad) {
  const Dims& c = d.control_dims();
  const auto vals = d.values();
  const double inv_nodes = 1.0 / static_cast<double>(d.node_count());
  const bool want_grad = !grad.empty();
  double sum = 0.0;
  for (int k = 0; k < c[2]; ++k)
    for (int j = 0; j < c[1]; ++j)
      for (int i = 0; i < c[0]; ++i) {
        const int idx[3] = {i, j, k};
        std::size_t hi[3], lo[3];
        double g[3][3];  // [axis][component]
        double sq = eps * eps;
        for (int a = 0; a < 3; ++a) {
          int up[3] = {i, j, k}, dn[3] = {i, j, k};
          up[a] = std::min(idx[a] + 1, c[a] - 1);
          dn[a] = std::max(idx[a] - 1, 0);
          hi[a] = d.node_index(up[0], up[1], up[2]) * 3;
          lo[a] = d.node_index(dn[0], dn[1], dn[2]) * 3;
          for (int comp = 0; comp < 3; ++comp) {
            g[a][comp] = 0.5 * (vals[hi[a] + comp] - vals[lo[a] + comp]);
            sq += g[a][comp] * g[a][comp];
          }
        }
        const double mag = std::sqrt(sq);
        sum += mag - eps;
        if (!want_grad) continue;
        const double scale = lambda * inv_nodes / mag;
        for (int a = 0; a < 3; ++a)
          for (int comp = 0; comp < 3; ++comp) {
            const double w = 0.5 * scale * g[a][comp];
            grad[hi[a] + comp] += w;
            grad[lo[a] + comp] -= w;
          }
      }
  return sum * inv_nodes;
}

double regularizer_R(const DisplacementField& d, double eps) {
  return regularizer_R_with_gradient(d, eps, 0.0, {});
}

// ---------------------------------------------------------------------------

double pwd_learning_rate(int s) {
  if (s < 0 || s > 250) throw std::out_of_range("pwd_learning_rate: s must be in [0, 250]");
  if (s < 70) return 15.0;
  if (s < 180) return 7.0 * std::cos(2.0 * std::numbers::pi / 200.0 * (s - 70)) + 8.0;
  return -1.209 / 70.0 * (s - 180) + 1.343;
}

std::vector<double> adam_step(AdamState& st, std::span<const double> grad, double lr) {
  if (st.m.size() != grad.size()) {
    if (st.step != 0) throw std::invalid_argument("adam_step: gradient size changed");
    st.m.assign(grad.size(), 0.0);
    st.v.assign(grad.size(), 0.0);
  }
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw NumericError(fmt::format("non-finite gradient component {} (value {}) at ADAM step {}", i,
                                     grad[i], st.step));
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  std::vector<double> update(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
    const double m_hat = st.m[i] / bc1;
    const double v_hat = st.v[i] / bc2;
    update[i] = -lr * m_hat / (std::sqrt(v_hat) + st.eps);
  }
  return update;
}

// ---------------------------------------------------------------------------

WarpMap::WarpMap(const Geometry& fixed, const Geometry& moving, const SimilarityTransform& a) {
  const Mat3 lf = fixed.index_to_world().topLeftCorner<3, 3>();
  const Vec3 of = fixed.index_to_world().block<3, 1>(0, 3);
  const Mat3 lm = moving.world_to_index().topLeftCorner<3, 3>();
  const Vec3 om = moving.world_to_index().block<3, 1>(0, 3);
  const Mat3 rinv = a.rotation.transpose() / a.scale;
  linear_ = lm * rinv * lf;
  offset_ = lm * (rinv * (of - a.translation)) + om;
}

Volume warp(const Volume& moving, const SimilarityTransform& a, const DisplacementField& d,
            Interp mode) {
  const Geometry& fg = d.fixed_geometry();
  const WarpMap map(fg, moving.geometry(), a);
  const std::vector<double> dense = d.upsample_dense();
  Volume out(fg);
  const auto& dims = fg.dims();
  std::size_t idx = 0;
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i, ++idx) {
        const Vec3 u(i + dense[idx * 3], j + dense[idx * 3 + 1], k + dense[idx * 3 + 2]);
        out[idx] = static_cast<float>(sample(moving, map.moving_voxel(u), mode));
      }
  return out;
}

DescriptorField warp(const DescriptorField& moving, const SimilarityTransform& a,
                     const DisplacementField& d) {
  constexpr int C = DescriptorField::kChannels;
  const Geometry& fg = d.fixed_geometry();
  const WarpMap map(fg, moving.geometry(), a);
  const std::vector<double> dense = d.upsample_dense();
  std::vector<double> out(fg.voxel_count() * C);
  const auto& dims = fg.dims();
  ChannelSample cs;
  std::size_t idx = 0;
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i, ++idx) {
        const Vec3 u(i + dense[idx * 3], j + dense[idx * 3 + 1], k + dense[idx * 3 + 2]);
        sample_channels(moving, map.moving_voxel(u), cs, false);
        std::copy(cs.value.begin(), cs.value.end(), out.begin() + idx * C);
      }
  return DescriptorField(fg, std::move(out));
}

LabelMap warp(const LabelMap& moving, const SimilarityTransform& a, const DisplacementField& d) {
  const Geometry& fg = d.fixed_geometry();
  const WarpMap map(fg, moving.geometry(), a);
  const std::vector<double> dense = d.upsample_dense();
  LabelMap out(fg, moving.table());
  const auto& dims = fg.dims();
  const Geometry& mg = moving.geometry();
  std::size_t idx = 0;
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i, ++idx) {
        const Vec3 u(i + dense[idx * 3], j + dense[idx * 3 + 1], k + dense[idx * 3 + 2]);
        const Vec3 v = map.moving_voxel(u);
        const int x = static_cast<int>(std::round(v.x()));
        const int y = static_cast<int>(std::round(v.y()));
        const int z = static_cast<int>(std::round(v.z()));
        out[idx] = mg.contains(x, y, z) ? moving(x, y, z) : Label{0};
      }
  return out;
}

Vec3 total_transform_point(const SimilarityTransform& a, const DisplacementField& d,
                           const Vec3& fixed_world) {
  const Geometry& fg = d.fixed_geometry();
  const Vec3 voxel = fg.to_voxel(fixed_world);
  if (!fg.contains_point(voxel))
    throw GeometryError(fmt::format("point ({:.3f}, {:.3f}, {:.3f}) mm lies outside the fixed domain",
                                    fixed_world.x(), fixed_world.y(), fixed_world.z()));
  return a.inverse_apply(fg.to_world(voxel + d.upsampled(voxel)));
}

// ---------------------------------------------------------------------------

RegistrationObjective::RegistrationObjective(const DescriptorField& fixed,
                                             const DescriptorField& moving,
                                             const SimilarityTransform& a, double lambda,
                                             double eps_r)
    : fixed_(fixed), moving_(moving), map_(fixed.geometry(), moving.geometry(), a),
      lambda_(lambda), eps_r_(eps_r) {
  if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
}

LossTerms RegistrationObjective::evaluate(const DisplacementField& d, std::span<double> grad) const {
  constexpr int C = DescriptorField::kChannels;
  require_same_geometry(d.fixed_geometry(), fixed_.geometry(), "RegistrationObjective");
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != d.values().size())
    throw std::invalid_argument("gradient buffer has the wrong size");
  if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);

  const Geometry& fg = fixed_.geometry();
  const auto& dims = fg.dims();
  const std::size_t n = fg.voxel_count();
  const double norm = 1.0 / (static_cast<double>(n) * C);
  const std::vector<double> dense = d.upsample_dense();
  std::vector<double> dense_grad(want_grad ? n * 3 : 0);
  const Mat3 jt = map_.jacobian().transpose();

  ChannelSample cs;
  double sum = 0.0;
  std::size_t idx = 0;
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i, ++idx) {
        const Vec3 u(i + dense[idx * 3], j + dense[idx * 3 + 1], k + dense[idx * 3 + 2]);
        sample_channels(moving_, map_.moving_voxel(u), cs, want_grad);
        const auto ff = fixed_.voxel(idx);
        Vec3 gv = Vec3::Zero();
        for (int c = 0; c < C; ++c) {
          const double diff = cs.value[c] - ff[c];
          sum += diff * diff;
          if (want_grad) gv += (2.0 * diff) * cs.grad[c];
        }
        if (want_grad) {
          const Vec3 gu = norm * (jt * gv);
          dense_grad[idx * 3] = gu.x();
          dense_grad[idx * 3 + 1] = gu.y();
          dense_grad[idx * 3 + 2] = gu.z();
        }
      }

  LossTerms terms;
  terms.S = sum * norm;

  if (want_grad) {
    // Transpose of the trilinear upsampling.
    const UpsampleAxis ux = upsample_axis(d, 0);
    const UpsampleAxis uy = upsample_axis(d, 1);
    const UpsampleAxis uz = upsample_axis(d, 2);
    const Dims& cd = d.control_dims();
    const std::size_t sx = 3, sy = 3 * static_cast<std::size_t>(cd[0]),
                      sz = sy * static_cast<std::size_t>(cd[1]);
    idx = 0;
    for (int k = 0; k < dims[2]; ++k) {
      const double tz = uz.t[k];
      for (int j = 0; j < dims[1]; ++j) {
        const double ty = uy.t[j];
        for (int i = 0; i < dims[0]; ++i, ++idx) {
          const double tx = ux.t[i];
          double* n000 = grad.data() + ux.i0[i] * sx + uy.i0[j] * sy + uz.i0[k] * sz;
          const double w[8] = {(1 - tx) * (1 - ty) * (1 - tz), tx * (1 - ty) * (1 - tz),
                               (1 - tx) * ty * (1 - tz),       tx * ty * (1 - tz),
                               (1 - tx) * (1 - ty) * tz,       tx * (1 - ty) * tz,
                               (1 - tx) * ty * tz,             tx * ty * tz};
          const std::size_t off[8] = {0, sx, sy, sx + sy, sz, sx + sz, sy + sz, sx + sy + sz};
          for (int c = 0; c < 8; ++c)
            for (int a = 0; a < 3; ++a) n000[off[c] + a] += w[c] * dense_grad[idx * 3 + a];
        }
      }
    }
  }

  terms.R = regularizer_R_with_gradient(d, eps_r_, lambda_, grad);
  terms.L = terms.S + lambda_ * terms.R;
  return terms;
}

// ---------------------------------------------------------------------------

RegistrationResult register_deformable(const Volume& fixed, const Volume& moving,
                                       const SimilarityTransform& a, const RegConfig& cfg,
                                       const RunControl& control) {
  if (cfg.iterations < 1 || cfg.iterations > 251)
    throw std::invalid_argument("iterations must be in [1, 251]");
  if (cfg.lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  if (!(cfg.eta_scale > 0.0)) throw std::invalid_argument("eta_scale must be > 0");
  a.validate();

  const DescriptorField ff = mind_descriptors(fixed, cfg.mind);
  const DescriptorField fm = mind_descriptors(moving, cfg.mind);
  const RegistrationObjective objective(ff, fm, a, cfg.lambda, cfg.eps_r);

  DisplacementField field(fixed.geometry(), cfg.stride);
  AdamState adam(field.values().size());
  std::vector<double> grad(field.values().size());
  std::vector<TraceEntry> trace;
  trace.reserve(cfg.iterations);

  for (int s = 0; s < cfg.iterations; ++s) {
    if (control.cancel && control.cancel->load()) throw Cancelled();
    const LossTerms t = objective.evaluate(field, grad);
    const double eta = pwd_learning_rate(s);
    const TraceEntry entry{s, eta, t.S, t.R, t.L};
    trace.push_back(entry);
    if (!std::isfinite(t.L))
      throw NumericError(fmt::format("non-finite loss at iteration {} (S={}, R={})", s, t.S, t.R));
    if (control.on_iteration) control.on_iteration(entry);
    const std::vector<double> update = adam_step(adam, grad, eta * cfg.eta_scale);
    auto vals = field.values();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] += update[i];
  }
  const LossTerms final_terms = objective.evaluate(field, {});
  return RegistrationResult{std::move(field), std::move(trace), final_terms};
}

// ---------------------------------------------------------------------------

std::filesystem::path field_metadata_path(const std::filesystem::path& nifti_path) {
  std::string name = nifti_path.filename().string();
  for (const std::string ext : {".nii.gz", ".nii"})
    if (name.size() > ext.size() && name.compare(name.size() - ext.size(), ext.size(), ext) == 0) {
      name.resize(name.size() - ext.size());
      break;
    }
  return nifti_path.parent_path() / (name + ".json");
}

void save_displacement_field(const DisplacementField& d, const RegConfig& cfg,
                             const std::filesystem::path& nifti_path) {
  const Geometry& g = d.fixed_geometry();
  const std::size_t n = g.voxel_count();
  const std::vector<double> dense = d.upsample_dense();
  VectorVolume vv{g, 3, std::vector<float>(3 * n)};
  for (std::size_t i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a) vv.data[a * n + i] = static_cast<float>(dense[i * 3 + a]);
  save_vector_volume(vv, nifti_path);

  nlohmann::json meta = {
      {"stride", d.stride()},
      {"lambda", cfg.lambda},
      {"iterations", cfg.iterations},
      {"units", "voxel"},
      {"control_dims", {d.control_dims()[0], d.control_dims()[1], d.control_dims()[2]}},
      {"control_values", std::vector<double>(d.values().begin(), d.values().end())},
  };
  std::ofstream out(field_metadata_path(nifti_path));
  out << meta.dump() << "\n";
  if (!out) throw IoError("cannot write field metadata for " + nifti_path.string());
}

DisplacementField load_displacement_field(const std::filesystem::path& nifti_path) {
  const VectorVolume vv = load_vector_volume(nifti_path);
  if (vv.components != 3) throw FormatError("displacement field must have 3 components");
  std::ifstream in(field_metadata_path(nifti_path));
  if (!in) throw IoError("missing field metadata " + field_metadata_path(nifti_path).string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw FormatError(std::string("malformed field metadata: ") + e.what());
  }
  const auto cd = meta.at("control_dims").get<std::array<int, 3>>();
  DisplacementField d(vv.geometry, Dims{cd[0], cd[1], cd[2]}, meta.at("stride").get<int>());
  const auto values = meta.at("control_values").get<std::vector<double>>();
  if (values.size() != d.values().size()) throw FormatError("control_values length mismatch");
  for (double v : values)
    if (!std::isfinite(v)) throw FormatError("displacement field contains non-finite values");
  std::copy(values.begin(), values.end(), d.values().begin());
  return d;
}

void write_trace_csv(const std::vector<TraceEntry>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "s,eta,S,R,L\n";
  for (const auto& t : trace) out << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", t.s, t.eta, t.S, t.R, t.L);
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace spinesim
