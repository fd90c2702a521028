#include "spinesim/nifti_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>
#include <zlib.h>

namespace spinesim {
namespace {

#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope, scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration, toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348);

enum DataType : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
  kUInt32 = 768,
  kInt64 = 1024,
  kUInt64 = 1280,
};

int bytes_per_voxel(std::int16_t dt) {
  switch (dt) {
    case kUInt8: case kInt8: return 1;
    case kInt16: case kUInt16: return 2;
    case kInt32: case kUInt32: case kFloat32: return 4;
    case kFloat64: case kInt64: case kUInt64: return 8;
    default: return 0;
  }
}

template <typename T>
void swap_bytes(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  std::reverse(p, p + sizeof(T));
}

void swap_header(Nifti1Header& h) {
  swap_bytes(h.sizeof_hdr);
  swap_bytes(h.extents);
  swap_bytes(h.session_error);
  for (auto& d : h.dim) swap_bytes(d);
  swap_bytes(h.intent_p1);
  swap_bytes(h.intent_p2);
  swap_bytes(h.intent_p3);
  swap_bytes(h.intent_code);
  swap_bytes(h.datatype);
  swap_bytes(h.bitpix);
  swap_bytes(h.slice_start);
  for (auto& p : h.pixdim) swap_bytes(p);
  swap_bytes(h.vox_offset);
  swap_bytes(h.scl_slope);
  swap_bytes(h.scl_inter);
  swap_bytes(h.slice_end);
  swap_bytes(h.cal_max);
  swap_bytes(h.cal_min);
  swap_bytes(h.slice_duration);
  swap_bytes(h.toffset);
  swap_bytes(h.glmax);
  swap_bytes(h.glmin);
  swap_bytes(h.qform_code);
  swap_bytes(h.sform_code);
  for (float* f : {&h.quatern_b, &h.quatern_c, &h.quatern_d, &h.qoffset_x, &h.qoffset_y,
                   &h.qoffset_z})
    swap_bytes(*f);
  for (int i = 0; i < 4; ++i) {
    swap_bytes(h.srow_x[i]);
    swap_bytes(h.srow_y[i]);
    swap_bytes(h.srow_z[i]);
  }
}

bool is_gz(const std::filesystem::path& p) { return p.extension() == ".gz"; }

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> buf;
  unsigned char chunk[1 << 16];
  int n = 0;
  while ((n = gzread(f, chunk, sizeof chunk)) > 0) buf.insert(buf.end(), chunk, chunk + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw FormatError("corrupt compressed stream in " + path.string());
  return buf;
}

void write_all(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  if (is_gz(path)) {
    gzFile f = gzopen(path.string().c_str(), "wb6");
    if (!f) throw IoError("cannot write " + path.string());
    const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    const int rc = gzclose(f);
    if (n != static_cast<int>(bytes.size()) || rc != Z_OK)
      throw IoError("write failed for " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

struct Decoded {
  Nifti1Header hdr;
  Geometry geometry;
  int components;
  std::vector<double> values;  // scaled, [component][voxel]
};

Mat4 affine_from_header(const Nifti1Header& h) {
  Mat4 m = Mat4::Identity();
  if (h.sform_code > 0) {
    for (int c = 0; c < 4; ++c) {
      m(0, c) = h.srow_x[c];
      m(1, c) = h.srow_y[c];
      m(2, c) = h.srow_z[c];
    }
    return m;
  }
  if (h.qform_code > 0) {
    double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    double a = 1.0 - (b * b + c * c + d * d);
    if (a < 1e-7) {
      const double n = std::sqrt(b * b + c * c + d * d);
      b /= n;
      c /= n;
      d /= n;
      a = 0.0;
    } else {
      a = std::sqrt(a);
    }
    Mat3 r;
    r << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
        2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),
        2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b;
    const double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
    const Vec3 s(h.pixdim[1] > 0 ? h.pixdim[1] : 1.0, h.pixdim[2] > 0 ? h.pixdim[2] : 1.0,
                 (h.pixdim[3] > 0 ? h.pixdim[3] : 1.0) * qfac);
    m.topLeftCorner<3, 3>() = r * s.asDiagonal();
    m.block<3, 1>(0, 3) = Vec3(h.qoffset_x, h.qoffset_y, h.qoffset_z);
    return m;
  }
  for (int a = 0; a < 3; ++a) m(a, a) = h.pixdim[a + 1] > 0 ? h.pixdim[a + 1] : 1.0;
  return m;
}

template <typename T>
void convert(const unsigned char* src, std::size_t n, bool swap, double slope, double inter,
             std::vector<double>& out) {
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, src + i * sizeof(T), sizeof(T));
    if (swap) swap_bytes(v);
    out[i] = static_cast<double>(v) * slope + inter;
  }
}

Decoded decode(const std::filesystem::path& path, bool allow_vector) {
  const std::vector<unsigned char> bytes = read_all(path);
  if (bytes.size() < sizeof(Nifti1Header)) throw FormatError("corrupt header: " + path.string());
  Nifti1Header h;
  std::memcpy(&h, bytes.data(), sizeof h);
  bool swap = false;
  if (h.sizeof_hdr != 348) {
    swap_header(h);
    swap = true;
    if (h.sizeof_hdr != 348) throw FormatError("corrupt header: bad sizeof_hdr in " + path.string());
  }
  if (std::memcmp(h.magic, "n+1", 4) != 0 && std::memcmp(h.magic, "ni1", 4) != 0)
    throw FormatError("corrupt header: missing NIfTI-1 magic in " + path.string());
  if (std::memcmp(h.magic, "ni1", 4) == 0)
    throw FormatError("two-file (.hdr/.img) NIfTI is not supported");
  if (h.dim[0] < 1 || h.dim[0] > 7) throw FormatError("corrupt header: dim[0] out of range");
  Dims dims{1, 1, 1};
  for (int a = 0; a < 3; ++a) {
    const int d = a < h.dim[0] ? h.dim[a + 1] : 1;
    if (d <= 0) throw FormatError("corrupt header: non-positive dimension");
    dims[a] = d;
  }
  int components = 1;
  for (int a = 4; a <= h.dim[0]; ++a) {
    if (h.dim[a] <= 0) throw FormatError("corrupt header: non-positive dimension");
    if (a == 5 && allow_vector) {
      components = h.dim[a];
    } else if (h.dim[a] != 1) {
      throw FormatError("only 3-D volumes are supported");
    }
  }
  const int bpv = bytes_per_voxel(h.datatype);
  if (bpv == 0) throw FormatError("unsupported NIfTI datatype " + std::to_string(h.datatype));
  const std::size_t offset = static_cast<std::size_t>(h.vox_offset < 348 ? 352 : h.vox_offset);
  const std::size_t nvox = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2] * components;
  if (bytes.size() < offset + nvox * bpv)
    throw FormatError("corrupt data: file shorter than header implies: " + path.string());

  double slope = h.scl_slope, inter = h.scl_inter;
  if (slope == 0.0 || !std::isfinite(slope)) {
    slope = 1.0;
    inter = 0.0;
  }
  if (!std::isfinite(inter)) inter = 0.0;

  std::vector<double> values;
  const unsigned char* src = bytes.data() + offset;
  switch (h.datatype) {
    case kUInt8: convert<std::uint8_t>(src, nvox, swap, slope, inter, values); break;
    case kInt8: convert<std::int8_t>(src, nvox, swap, slope, inter, values); break;
    case kInt16: convert<std::int16_t>(src, nvox, swap, slope, inter, values); break;
    case kUInt16: convert<std::uint16_t>(src, nvox, swap, slope, inter, values); break;
    case kInt32: convert<std::int32_t>(src, nvox, swap, slope, inter, values); break;
    case kUInt32: convert<std::uint32_t>(src, nvox, swap, slope, inter, values); break;
    case kInt64: convert<std::int64_t>(src, nvox, swap, slope, inter, values); break;
    case kUInt64: convert<std::uint64_t>(src, nvox, swap, slope, inter, values); break;
    case kFloat32: convert<float>(src, nvox, swap, slope, inter, values); break;
    case kFloat64: convert<double>(src, nvox, swap, slope, inter, values); break;
  }

  Mat4 affine = affine_from_header(h);
  Vec3 spacing;
  for (int a = 0; a < 3; ++a) {
    const double pd = std::abs(h.pixdim[a + 1]);
    spacing[a] = pd > 0 ? pd : affine.block<3, 1>(0, a).norm();
  }
  try {
    return Decoded{h, Geometry(dims, spacing, affine), components, std::move(values)};
  } catch (const GeometryError& e) {
    throw FormatError(std::string("invalid geometry in ") + path.string() + ": " + e.what());
  }
}

void quaternion_from_affine(const Mat4& affine, const Vec3& spacing, Nifti1Header& h) {
  Mat3 r = affine.topLeftCorner<3, 3>();
  for (int c = 0; c < 3; ++c) r.col(c) /= spacing[c];
  double qfac = 1.0;
  if (r.determinant() < 0) {
    r.col(2) = -r.col(2);
    qfac = -1.0;
  }
  const bool orthonormal = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-4;
  if (!orthonormal) {
    h.qform_code = 0;
    h.pixdim[0] = 1.0f;
    return;
  }
  Eigen::Quaterniond q(r);
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  h.qform_code = 1;
  h.quatern_b = static_cast<float>(q.x());
  h.quatern_c = static_cast<float>(q.y());
  h.quatern_d = static_cast<float>(q.z());
  h.qoffset_x = static_cast<float>(affine(0, 3));
  h.qoffset_y = static_cast<float>(affine(1, 3));
  h.qoffset_z = static_cast<float>(affine(2, 3));
  h.pixdim[0] = static_cast<float>(qfac);
}

Nifti1Header make_header(const Geometry& g, std::int16_t datatype, int components) {
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = components > 1 ? 5 : 3;
  for (int a = 0; a < 3; ++a) h.dim[a + 1] = static_cast<std::int16_t>(g.dims()[a]);
  for (int a = 4; a < 8; ++a) h.dim[a] = 1;
  if (components > 1) {
    h.dim[5] = static_cast<std::int16_t>(components);
    h.intent_code = 1007;  // NIFTI_INTENT_VECTOR
  }
  h.datatype = datatype;
  h.bitpix = static_cast<std::int16_t>(8 * bytes_per_voxel(datatype));
  for (int a = 0; a < 3; ++a) h.pixdim[a + 1] = static_cast<float>(g.spacing()[a]);
  for (int a = 4; a < 8; ++a) h.pixdim[a] = 1.0f;
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2;  // mm
  const Mat4& m = g.index_to_world();
  h.sform_code = 2;
  for (int c = 0; c < 4; ++c) {
    h.srow_x[c] = static_cast<float>(m(0, c));
    h.srow_y[c] = static_cast<float>(m(1, c));
    h.srow_z[c] = static_cast<float>(m(2, c));
  }
  quaternion_from_affine(m, g.spacing(), h);
  std::memcpy(h.magic, "n+1", 4);
  return h;
}

template <typename T>
std::vector<unsigned char> encode(const Nifti1Header& h, std::span<const T> data) {
  std::vector<unsigned char> out(352 + data.size() * sizeof(T), 0);
  std::memcpy(out.data(), &h, sizeof h);
  std::memcpy(out.data() + 352, data.data(), data.size() * sizeof(T));
  return out;
}

}  // namespace

std::filesystem::path label_sidecar_path(const std::filesystem::path& nifti_path) {
  std::string name = nifti_path.filename().string();
  for (const char* ext : {".nii.gz", ".nii"}) {
    const std::string e(ext);
    if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0) {
      name.resize(name.size() - e.size());
      break;
    }
  }
  return nifti_path.parent_path() / (name + ".labels.json");
}

Volume load_volume(const std::filesystem::path& path) {
  Decoded d = decode(path, false);
  std::vector<float> data(d.values.size());
  std::transform(d.values.begin(), d.values.end(), data.begin(),
                 [](double v) { return static_cast<float>(v); });
  return Volume(d.geometry, std::move(data));
}

LabelMap load_labels(const std::filesystem::path& path) {
  Decoded d = decode(path, false);
  std::vector<Label> data(d.values.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double v = d.values[i];
    if (!(v >= 0.0 && v <= std::numeric_limits<Label>::max()) || v != std::floor(v))
      throw FormatError("label map contains non-integer or out-of-range value: " + path.string());
    data[i] = static_cast<Label>(v);
  }
  LabelTable table;
  const auto sidecar = label_sidecar_path(path);
  if (std::filesystem::exists(sidecar)) {
    std::ifstream in(sidecar);
    try {
      const auto j = nlohmann::json::parse(in);
      for (const auto& [key, value] : j.at("labels").items())
        table[static_cast<Label>(std::stoi(key))] = value.get<std::string>();
    } catch (const std::exception& e) {
      throw FormatError("malformed label sidecar " + sidecar.string() + ": " + e.what());
    }
  }
  LabelMap lm(d.geometry, std::move(data), std::move(table));
  lm.complete_table();
  return lm;
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  write_all(path, encode<float>(make_header(v.geometry(), kFloat32, 1), v.data()));
}

void save_labels(const LabelMap& lm, const std::filesystem::path& path) {
  write_all(path, encode<Label>(make_header(lm.geometry(), kUInt16, 1), lm.data()));
  nlohmann::json labels = nlohmann::json::object();
  for (const auto& [label, name] : lm.table()) labels[std::to_string(label)] = name;
  std::ofstream out(label_sidecar_path(path));
  out << nlohmann::json{{"labels", labels}}.dump(2) << "\n";
  if (!out) throw IoError("cannot write label sidecar for " + path.string());
}

void save_vector_volume(const VectorVolume& v, const std::filesystem::path& path) {
  if (v.data.size() != v.geometry.voxel_count() * static_cast<std::size_t>(v.components))
    throw std::invalid_argument("vector volume size mismatch");
  write_all(path, encode<float>(make_header(v.geometry, kFloat32, v.components),
                                std::span<const float>(v.data)));
}

VectorVolume load_vector_volume(const std::filesystem::path& path) {
  Decoded d = decode(path, true);
  std::vector<float> data(d.values.size());
  std::transform(d.values.begin(), d.values.end(), data.begin(),
                 [](double v) { return static_cast<float>(v); });
  return VectorVolume{d.geometry, d.components, std::move(data)};
}

}  // namespace spinesim
