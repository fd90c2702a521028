#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include <json.hpp>

#include "spinesim/volume.hpp"

namespace spinesim {

struct Rgba {
  float r = 0.7f, g = 0.7f, b = 0.7f, a = 1.0f;
  bool operator==(const Rgba&) const = default;
};

using Triangle = std::array<std::uint32_t, 3>;

/// World-space (mm) triangle mesh, counter-clockwise when seen from outside.
struct TriangleMesh {
  Label structure = 0;
  Rgba color;
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;

  bool empty() const { return triangles.empty(); }
};

/// Isosurface at 0.5 of the indicator (voxel == label) with virtual zero
/// padding around the grid, so every output mesh is closed.
TriangleMesh marching_cubes(const LabelMap& lm, Label label);

/// Same surface restricted to the cubes whose lower corner lies in
/// [cube_lo, cube_hi) (corner coordinates run from -1 to dim-1).
TriangleMesh marching_cubes_region(const Grid<Label>& grid, Label label, const Dims& cube_lo,
                                   const Dims& cube_hi);

struct MeshTopology {
  std::size_t vertices = 0;
  std::size_t edges = 0;
  std::size_t faces = 0;
  std::size_t boundary_edges = 0;     // used by one triangle
  std::size_t nonmanifold_edges = 0;  // used by three or more
  std::size_t misoriented_edges = 0;  // traversed twice in the same direction
  long euler() const {
    return static_cast<long>(vertices) - static_cast<long>(edges) + static_cast<long>(faces);
  }
  bool watertight() const { return boundary_edges == 0 && nonmanifold_edges == 0; }
};

MeshTopology topology(const TriangleMesh& mesh);
/// Signed-tetrahedron volume (mm^3); positive for outward-facing closed meshes.
double enclosed_volume(const TriangleMesh& mesh);

/// Uniform Laplacian smoothing; boundary vertices stay fixed. Non-manifold
/// input is returned unchanged with a warning.
TriangleMesh smooth(const TriangleMesh& mesh, int iterations = 10, double step = 0.5);

/// Drops zero-area triangles and unreferenced vertices.
void remove_degenerate(TriangleMesh& mesh);

// ---------------------------------------------------------------------------

using Palette = std::map<Label, Rgba>;

/// Built-in structure colours; identical to data/palette.json.
const Palette& default_palette();
Rgba palette_color(const Palette& palette, Label l);
nlohmann::json palette_to_json(const Palette& p);
Palette palette_from_json(const nlohmann::json& j);
Palette load_palette(const std::filesystem::path& path);

struct ModelScene {
  std::vector<TriangleMesh> meshes;  // ascending structure label
  std::map<Label, bool> visible;
};

ModelScene build_scene(const LabelMap& lm, const Palette& palette = default_palette(),
                       int smooth_iterations = 10);

/// Binary glTF 2.0: one node and mesh per structure, named after the
/// structure, base colour from the palette, positions in mm.
std::vector<std::uint8_t> encode_glb(const ModelScene& scene);
void export_gltf(const ModelScene& scene, const std::filesystem::path& path);

struct GlbNodeSummary {
  std::string name;
  std::size_t vertex_count;
  std::size_t index_count;
};

/// Parses a .glb produced by encode_glb (or any triangle-list glb) and
/// validates chunk layout and accessor bounds. Throws FormatError.
std::vector<GlbNodeSummary> inspect_glb(const std::vector<std::uint8_t>& bytes);
nlohmann::json glb_json_chunk(const std::vector<std::uint8_t>& bytes);

}  // namespace spinesim
