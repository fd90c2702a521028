#include "spinesim/mesh.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <unordered_map>

#include <spdlog/spdlog.h>

namespace spinesim {
namespace {

// Cube corner c sits at (c & 1, (c >> 1) & 1, (c >> 2) & 1).
Vec3 corner_pos(int c) { return Vec3(c & 1, (c >> 1) & 1, (c >> 2) & 1); }

struct CubeEdge {
  int corner;  // lower corner
  int axis;
};

const std::array<CubeEdge, 12>& cube_edges() {
  static const std::array<CubeEdge, 12> edges = [] {
    std::array<CubeEdge, 12> out{};
    int n = 0;
    for (int axis = 0; axis < 3; ++axis)
      for (int c = 0; c < 8; ++c)
        if (!(c & (1 << axis))) out[n++] = {c, axis};
    return out;
  }();
  return edges;
}

int edge_between(int a, int b) {
  const int lo = std::min(a, b);
  const int axis = std::countr_zero(static_cast<unsigned>(a ^ b));
  const auto& edges = cube_edges();
  for (int e = 0; e < 12; ++e)
    if (edges[e].corner == lo && edges[e].axis == axis) return e;
  throw std::logic_error("corners are not adjacent");
}

Vec3 edge_mid(int e) {
  const auto& ce = cube_edges()[e];
  Vec3 p = corner_pos(ce.corner);
  p[ce.axis] += 0.5;
  return p;
}

using Loop = std::vector<int>;  // cube edge indices, counter-clockwise from outside

bool share_face(int ea, int eb) {
  const auto& a = cube_edges()[ea];
  const auto& b = cube_edges()[eb];
  // A face is fixed by one axis and a side; both edges must lie in it.
  for (int axis = 0; axis < 3; ++axis) {
    if (a.axis == axis || b.axis == axis) continue;
    if (((a.corner >> axis) & 1) == ((b.corner >> axis) & 1)) return true;
  }
  return false;
}

// Fan diagonals lying in a cube face could be produced again by the
// neighbouring cube, giving edges shared by four triangles.
Loop rotate_for_fan(Loop loop) {
  const std::size_t n = loop.size();
  for (std::size_t start = 0; start < n; ++start) {
    bool ok = true;
    for (std::size_t i = 2; i + 1 < n && ok; ++i)
      ok = !share_face(loop[start], loop[(start + i) % n]);
    if (ok) {
      std::rotate(loop.begin(), loop.begin() + static_cast<std::ptrdiff_t>(start), loop.end());
      return loop;
    }
  }
  throw std::logic_error("marching cubes table: no in-cube fan");
}

// Face segments are decided from the four face corners alone, with diagonal
// (ambiguous) faces always separating the inside corners. Neighbouring cubes
// therefore agree on every shared face, which keeps the surface closed.
std::vector<Loop> build_case(int mask) {
  std::map<int, int> next;  // directed segment start edge -> end edge
  for (int axis = 0; axis < 3; ++axis) {
    const int b = (axis + 1) % 3, c = (axis + 2) % 3;
    for (int side = 0; side < 2; ++side) {
      int q[4];
      const int uv[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
      for (int i = 0; i < 4; ++i)
        q[i] = (side << axis) | (uv[i][0] << b) | (uv[i][1] << c);
      Vec3 normal = Vec3::Zero();
      normal[axis] = side ? 1.0 : -1.0;
      bool in[4];
      for (int i = 0; i < 4; ++i) in[i] = (mask >> q[i]) & 1;

      std::vector<std::pair<int, int>> segs;  // pairs of face-edge slots
      std::vector<Vec3> cut_inside;           // inside reference per segment
      std::vector<int> crossing;
      for (int i = 0; i < 4; ++i)
        if (in[i] != in[(i + 1) % 4]) crossing.push_back(i);
      if (crossing.size() == 2) {
        Vec3 centroid = Vec3::Zero();
        int count = 0;
        for (int i = 0; i < 4; ++i)
          if (in[i]) {
            centroid += corner_pos(q[i]);
            ++count;
          }
        segs.push_back({crossing[0], crossing[1]});
        cut_inside.push_back(centroid / count);
      } else if (crossing.size() == 4) {
        for (int i = 0; i < 4; ++i)
          if (in[i]) {
            segs.push_back({(i + 3) % 4, i});
            cut_inside.push_back(corner_pos(q[i]));
          }
      }
      for (std::size_t s = 0; s < segs.size(); ++s) {
        int ea = edge_between(q[segs[s].first], q[(segs[s].first + 1) % 4]);
        int eb = edge_between(q[segs[s].second], q[(segs[s].second + 1) % 4]);
        const Vec3 pa = edge_mid(ea), pb = edge_mid(eb);
        const Vec3 toward_outside = 0.5 * (pa + pb) - cut_inside[s];
        const Vec3 dir = toward_outside.cross(normal);
        if ((pb - pa).dot(dir) < 0) std::swap(ea, eb);
        if (!next.emplace(ea, eb).second) throw std::logic_error("marching cubes table: branching loop");
      }
    }
  }
  std::vector<Loop> loops;
  while (!next.empty()) {
    Loop loop;
    int start = next.begin()->first;
    int cur = start;
    do {
      loop.push_back(cur);
      auto it = next.find(cur);
      if (it == next.end()) throw std::logic_error("marching cubes table: open loop");
      cur = it->second;
      next.erase(it);
    } while (cur != start);
    loops.push_back(rotate_for_fan(std::move(loop)));
  }
  return loops;
}

const std::array<std::vector<Loop>, 256>& case_table() {
  static const std::array<std::vector<Loop>, 256> table = [] {
    std::array<std::vector<Loop>, 256> t;
    for (int m = 0; m < 256; ++m) t[m] = build_case(m);
    return t;
  }();
  return table;
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

}  // namespace

TriangleMesh marching_cubes_region(const Grid<Label>& grid, Label label, const Dims& cube_lo,
                                   const Dims& cube_hi) {
  const Geometry& g = grid.geometry();
  const auto& d = g.dims();
  const auto& table = case_table();
  const auto& edges = cube_edges();
  auto inside = [&](int x, int y, int z) {
    return g.contains(x, y, z) && grid(x, y, z) == label;
  };
  const std::uint64_t px = d[0] + 2, py = d[1] + 2;
  auto edge_id = [&](int x, int y, int z, int axis) {
    return ((static_cast<std::uint64_t>(z + 1) * py + (y + 1)) * px + (x + 1)) * 3 + axis;
  };

  TriangleMesh mesh;
  mesh.structure = label;
  std::unordered_map<std::uint64_t, std::uint32_t> vertex_of;
  int lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max(cube_lo[a], -1);
    hi[a] = std::min(cube_hi[a], d[a]);
  }
  for (int z = lo[2]; z < hi[2]; ++z)
    for (int y = lo[1]; y < hi[1]; ++y)
      for (int x = lo[0]; x < hi[0]; ++x) {
        int mask = 0;
        for (int c = 0; c < 8; ++c)
          if (inside(x + (c & 1), y + ((c >> 1) & 1), z + ((c >> 2) & 1))) mask |= 1 << c;
        if (mask == 0 || mask == 255) continue;
        for (const Loop& loop : table[mask]) {
          std::uint32_t ids[12];
          for (std::size_t i = 0; i < loop.size(); ++i) {
            const auto& ce = edges[loop[i]];
            const int cx = x + (ce.corner & 1), cy = y + ((ce.corner >> 1) & 1),
                      cz = z + ((ce.corner >> 2) & 1);
            const auto key = edge_id(cx, cy, cz, ce.axis);
            auto [it, fresh] = vertex_of.emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
            if (fresh) {
              Vec3 v(cx, cy, cz);
              v[ce.axis] += 0.5;
              mesh.vertices.push_back(g.to_world(v));
            }
            ids[i] = it->second;
          }
          for (std::size_t i = 1; i + 1 < loop.size(); ++i) mesh.triangles.push_back({ids[0], ids[i], ids[i + 1]});
        }
      }
  return mesh;
}

TriangleMesh marching_cubes(const LabelMap& lm, Label label) {
  const auto& d = lm.dims();
  return marching_cubes_region(lm, label, Dims{-1, -1, -1}, Dims{d[0], d[1], d[2]});
}

MeshTopology topology(const TriangleMesh& mesh) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> undirected;
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
  std::set<std::uint32_t> used;
  for (const auto& t : mesh.triangles)
    for (int i = 0; i < 3; ++i) {
      const std::uint32_t a = t[i], b = t[(i + 1) % 3];
      ++undirected[{std::min(a, b), std::max(a, b)}];
      ++directed[{a, b}];
      used.insert(a);
    }
  MeshTopology topo;
  topo.vertices = used.size();
  topo.faces = mesh.triangles.size();
  topo.edges = undirected.size();
  for (const auto& [e, n] : undirected) {
    if (n == 1) ++topo.boundary_edges;
    if (n > 2) ++topo.nonmanifold_edges;
  }
  for (const auto& [e, n] : directed)
    if (n > 1) ++topo.misoriented_edges;
  return topo;
}

double enclosed_volume(const TriangleMesh& mesh) {
  double v = 0.0;
  for (const auto& t : mesh.triangles)
    v += mesh.vertices[t[0]].dot(mesh.vertices[t[1]].cross(mesh.vertices[t[2]]));
  return v / 6.0;
}

TriangleMesh smooth(const TriangleMesh& mesh, int iterations, double step) {
  if (iterations <= 0 || mesh.triangles.empty()) return mesh;
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> edge_use;
  for (const auto& t : mesh.triangles)
    for (int i = 0; i < 3; ++i) {
      const std::uint32_t a = t[i], b = t[(i + 1) % 3];
      ++edge_use[{std::min(a, b), std::max(a, b)}];
    }
  std::vector<bool> fixed(mesh.vertices.size(), false);
  std::vector<std::vector<std::uint32_t>> neighbours(mesh.vertices.size());
  for (const auto& [e, n] : edge_use) {
    if (n > 2) {
      spdlog::warn("smooth: non-manifold mesh for structure {}; left unchanged", display_name(mesh.structure));
      return mesh;
    }
    if (n == 1) fixed[e.first] = fixed[e.second] = true;
    neighbours[e.first].push_back(e.second);
    neighbours[e.second].push_back(e.first);
  }
  TriangleMesh out = mesh;
  std::vector<Vec3> next(out.vertices.size());
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t v = 0; v < out.vertices.size(); ++v) {
      if (fixed[v] || neighbours[v].empty()) {
        next[v] = out.vertices[v];
        continue;
      }
      Vec3 mean = Vec3::Zero();
      for (std::uint32_t n : neighbours[v]) mean += out.vertices[n];
      mean /= static_cast<double>(neighbours[v].size());
      next[v] = out.vertices[v] + step * (mean - out.vertices[v]);
    }
    out.vertices.swap(next);
  }
  return out;
}

void remove_degenerate(TriangleMesh& mesh) {
  std::vector<Triangle> kept;
  kept.reserve(mesh.triangles.size());
  for (const auto& t : mesh.triangles)
    if (t[0] != t[1] && t[1] != t[2] && t[0] != t[2] &&
        triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]) > 1e-12)
      kept.push_back(t);
  std::vector<std::int64_t> remap(mesh.vertices.size(), -1);
  std::vector<Vec3> verts;
  for (auto& t : kept)
    for (auto& idx : t) {
      if (remap[idx] < 0) {
        remap[idx] = static_cast<std::int64_t>(verts.size());
        verts.push_back(mesh.vertices[idx]);
      }
      idx = static_cast<std::uint32_t>(remap[idx]);
    }
  mesh.triangles = std::move(kept);
  mesh.vertices = std::move(verts);
}

// ---------------------------------------------------------------------------

const Palette& default_palette() {
  static const Palette palette = [] {
    Palette p;
    for (Label l : canonical_labels()) {
      switch (class_of(l)) {
        case StructureClass::Vertebra: p[l] = {0.89f, 0.85f, 0.76f, 1.0f}; break;
        case StructureClass::Disc: p[l] = {0.36f, 0.56f, 0.86f, 1.0f}; break;
        case StructureClass::SpinalCord: p[l] = {0.98f, 0.84f, 0.25f, 1.0f}; break;
        case StructureClass::Csf: p[l] = {0.55f, 0.85f, 0.95f, 0.5f}; break;
        case StructureClass::NerveRoots: p[l] = {0.98f, 0.62f, 0.18f, 1.0f}; break;
        case StructureClass::LigamentumFlavum: p[l] = {0.42f, 0.76f, 0.40f, 1.0f}; break;
        case StructureClass::Other: break;
      }
    }
    return p;
  }();
  return palette;
}

Rgba palette_color(const Palette& palette, Label l) {
  auto it = palette.find(l);
  return it == palette.end() ? Rgba{} : it->second;
}

nlohmann::json palette_to_json(const Palette& p) {
  nlohmann::json entries = nlohmann::json::object();
  auto q = [](float f) { return std::round(static_cast<double>(f) * 1e4) / 1e4; };
  for (const auto& [label, c] : p) entries[display_name(label)] = {q(c.r), q(c.g), q(c.b), q(c.a)};
  return {{"palette", entries}};
}

Palette palette_from_json(const nlohmann::json& j) {
  Palette p;
  for (const auto& [name, rgba] : j.at("palette").items()) {
    const auto label = structure_from_name(name);
    if (!label) throw FormatError("palette: unknown structure '" + name + "'");
    p[*label] = {rgba.at(0).get<float>(), rgba.at(1).get<float>(), rgba.at(2).get<float>(),
                 rgba.at(3).get<float>()};
  }
  return p;
}

Palette load_palette(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return palette_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed palette: ") + e.what());
  }
}

ModelScene build_scene(const LabelMap& lm, const Palette& palette, int smooth_iterations) {
  ModelScene scene;
  for (Label l : lm.present_labels()) {
    TriangleMesh m = smooth(marching_cubes(lm, l), smooth_iterations);
    remove_degenerate(m);
    m.color = palette_color(palette, l);
    scene.visible[l] = true;
    scene.meshes.push_back(std::move(m));
  }
  return scene;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kGlbMagic = 0x46546C67;
constexpr std::uint32_t kChunkJson = 0x4E4F534A;
constexpr std::uint32_t kChunkBin = 0x004E4942;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
  if (at + 4 > in.size()) throw FormatError("glb: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}

template <typename T>
void append_raw(std::vector<std::uint8_t>& out, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

}  // namespace

std::vector<std::uint8_t> encode_glb(const ModelScene& scene) {
  std::vector<std::uint8_t> bin;
  nlohmann::json nodes = nlohmann::json::array(), meshes = nlohmann::json::array(),
                 materials = nlohmann::json::array(), accessors = nlohmann::json::array(),
                 views = nlohmann::json::array(), scene_nodes = nlohmann::json::array();
  for (const auto& m : scene.meshes) {
    if (m.empty()) continue;
    const std::size_t pos_offset = bin.size();
    std::array<float, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::numeric_limits<float>::max();
      hi[a] = std::numeric_limits<float>::lowest();
    }
    for (const auto& v : m.vertices)
      for (int a = 0; a < 3; ++a) {
        const float f = static_cast<float>(v[a]);
        append_raw(bin, f);
        lo[a] = std::min(lo[a], f);
        hi[a] = std::max(hi[a], f);
      }
    const std::size_t pos_len = bin.size() - pos_offset;
    const std::size_t idx_offset = bin.size();
    for (const auto& t : m.triangles)
      for (std::uint32_t i : t) append_raw(bin, i);
    const std::size_t idx_len = bin.size() - idx_offset;

    const std::size_t view0 = views.size();
    views.push_back({{"buffer", 0}, {"byteOffset", pos_offset}, {"byteLength", pos_len}, {"target", 34962}});
    views.push_back({{"buffer", 0}, {"byteOffset", idx_offset}, {"byteLength", idx_len}, {"target", 34963}});
    const std::size_t acc0 = accessors.size();
    accessors.push_back({{"bufferView", view0}, {"componentType", 5126}, {"count", m.vertices.size()},
                         {"type", "VEC3"}, {"min", lo}, {"max", hi}});
    accessors.push_back({{"bufferView", view0 + 1}, {"componentType", 5125},
                         {"count", m.triangles.size() * 3}, {"type", "SCALAR"}});
    const std::string name = display_name(m.structure);
    const std::size_t material = materials.size();
    materials.push_back({{"name", name},
                         {"pbrMetallicRoughness",
                          {{"baseColorFactor", {m.color.r, m.color.g, m.color.b, m.color.a}},
                           {"metallicFactor", 0.0},
                           {"roughnessFactor", 0.8}}},
                         {"alphaMode", m.color.a < 1.0f ? "BLEND" : "OPAQUE"}});
    const std::size_t mesh_index = meshes.size();
    meshes.push_back({{"name", name},
                      {"primitives",
                       {{{"attributes", {{"POSITION", acc0}}}, {"indices", acc0 + 1},
                         {"material", material}, {"mode", 4}}}}});
    bool visible = true;
    if (auto it = scene.visible.find(m.structure); it != scene.visible.end()) visible = it->second;
    scene_nodes.push_back(nodes.size());
    nodes.push_back({{"name", name},
                     {"mesh", mesh_index},
                     {"extras", {{"label", m.structure}, {"visible", visible}}}});
  }
  if (nodes.empty()) throw Error("nothing to export: scene has no non-empty meshes");

  const nlohmann::json doc = {
      {"asset", {{"version", "2.0"}, {"generator", "spinesim"}}},
      {"scene", 0},
      {"scenes", {{{"nodes", scene_nodes}}}},
      {"nodes", nodes},
      {"meshes", meshes},
      {"materials", materials},
      {"accessors", accessors},
      {"bufferViews", views},
      {"buffers", {{{"byteLength", bin.size()}}}},
  };
  std::string json = doc.dump();
  while (json.size() % 4) json.push_back(' ');
  while (bin.size() % 4) bin.push_back(0);

  std::vector<std::uint8_t> out;
  put_u32(out, kGlbMagic);
  put_u32(out, 2);
  put_u32(out, static_cast<std::uint32_t>(12 + 8 + json.size() + 8 + bin.size()));
  put_u32(out, static_cast<std::uint32_t>(json.size()));
  put_u32(out, kChunkJson);
  out.insert(out.end(), json.begin(), json.end());
  put_u32(out, static_cast<std::uint32_t>(bin.size()));
  put_u32(out, kChunkBin);
  out.insert(out.end(), bin.begin(), bin.end());
  return out;
}

void export_gltf(const ModelScene& scene, const std::filesystem::path& path) {
  const auto bytes = encode_glb(scene);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

nlohmann::json glb_json_chunk(const std::vector<std::uint8_t>& bytes) {
  if (get_u32(bytes, 0) != kGlbMagic) throw FormatError("glb: bad magic");
  if (get_u32(bytes, 4) != 2) throw FormatError("glb: unsupported version");
  if (get_u32(bytes, 8) != bytes.size()) throw FormatError("glb: length mismatch");
  const std::uint32_t json_len = get_u32(bytes, 12);
  if (get_u32(bytes, 16) != kChunkJson) throw FormatError("glb: first chunk is not JSON");
  if (20 + static_cast<std::size_t>(json_len) > bytes.size() || json_len % 4)
    throw FormatError("glb: bad JSON chunk length");
  try {
    return nlohmann::json::parse(bytes.begin() + 20, bytes.begin() + 20 + json_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("glb: JSON chunk does not parse: ") + e.what());
  }
}

std::vector<GlbNodeSummary> inspect_glb(const std::vector<std::uint8_t>& bytes) {
  const nlohmann::json doc = glb_json_chunk(bytes);
  const std::size_t bin_at = 20 + get_u32(bytes, 12);
  const std::uint32_t bin_len = get_u32(bytes, bin_at);
  if (get_u32(bytes, bin_at + 4) != kChunkBin) throw FormatError("glb: second chunk is not BIN");
  if (bin_at + 8 + static_cast<std::size_t>(bin_len) != bytes.size() || bin_len % 4)
    throw FormatError("glb: bad BIN chunk length");
  const std::uint8_t* bin = bytes.data() + bin_at + 8;

  std::vector<GlbNodeSummary> out;
  try {
    if (doc.at("asset").at("version") != "2.0") throw FormatError("glb: asset.version must be 2.0");
    if (doc.at("buffers").at(0).at("byteLength").get<std::size_t>() > bin_len)
      throw FormatError("glb: buffer larger than BIN chunk");
    const auto& accessors = doc.at("accessors");
    const auto& views = doc.at("bufferViews");
    auto view_range = [&](const nlohmann::json& acc, std::size_t elem) {
      const auto& v = views.at(acc.at("bufferView").get<std::size_t>());
      const std::size_t off = v.value("byteOffset", 0);
      const std::size_t len = v.at("byteLength").get<std::size_t>();
      if (off + len > bin_len) throw FormatError("glb: bufferView exceeds buffer");
      if (acc.at("count").get<std::size_t>() * elem > len) throw FormatError("glb: accessor exceeds bufferView");
      return off;
    };
    for (const auto& node : doc.at("nodes")) {
      const auto& mesh = doc.at("meshes").at(node.at("mesh").get<std::size_t>());
      GlbNodeSummary s{node.value("name", ""), 0, 0};
      for (const auto& prim : mesh.at("primitives")) {
        if (prim.value("mode", 4) != 4) throw FormatError("glb: only triangle lists are supported");
        const auto& pos = accessors.at(prim.at("attributes").at("POSITION").get<std::size_t>());
        if (pos.at("componentType") != 5126 || pos.at("type") != "VEC3")
          throw FormatError("glb: POSITION must be float VEC3");
        if (!pos.contains("min") || !pos.contains("max")) throw FormatError("glb: POSITION needs min/max");
        view_range(pos, 12);
        const std::size_t nverts = pos.at("count").get<std::size_t>();
        const auto& idx = accessors.at(prim.at("indices").get<std::size_t>());
        if (idx.at("componentType") != 5125 || idx.at("type") != "SCALAR")
          throw FormatError("glb: indices must be uint32 SCALAR");
        const std::size_t off = view_range(idx, 4);
        const std::size_t nidx = idx.at("count").get<std::size_t>();
        if (nidx % 3) throw FormatError("glb: index count is not a multiple of 3");
        for (std::size_t i = 0; i < nidx; ++i) {
          std::uint32_t v;
          std::memcpy(&v, bin + off + 4 * i, 4);
          if (v >= nverts) throw FormatError("glb: index out of range");
        }
        s.vertex_count += nverts;
        s.index_count += nidx;
      }
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("glb: invalid document: ") + e.what());
  }
  return out;
}

}  // namespace spinesim
