#pragma once

#include <Eigen/Core>
#include <array>
#include <string>
#include <vector>

namespace mvfr::geom {

// Triangle mesh in millimeters with optional per-vertex UVs and normals.
struct Mesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<Eigen::Vector2d> uvs;       // empty or one per vertex, in [0,1]^2
  std::vector<Eigen::Vector3d> normals;   // empty or one per vertex

  bool has_uvs() const { return uvs.size() == vertices.size() && !uvs.empty(); }
  void validate() const;
};

double triangle_area(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                     const Eigen::Vector3d& c);
double surface_area(const Mesh& mesh);

// OBJ subset: v / vt / vn statements and triangular f with v, v/vt, v//vn or
// v/vt/vn indexing (1-based). Zero-area faces are dropped at load time.
Mesh load_obj(const std::string& path);
void save_obj(const std::string& path, const Mesh& mesh);

// OBJ with per-vertex colors appended to each v line (common viewer extension).
void save_obj_vertex_colors(const std::string& path, const Mesh& mesh,
                            const std::vector<Eigen::Vector3d>& colors);

struct NormalsReport {
  int isolated_vertices = 0;
};

// Area-weighted vertex normals followed by `iterations` rounds of uniform
// one-ring averaging, renormalized each round. Isolated vertices fall back to
// (0,0,1) and are counted in the report.
std::vector<Eigen::Vector3d> compute_smoothed_normals(const Mesh& mesh, int iterations,
                                                      NormalsReport* report = nullptr);

}  // namespace mvfr::geom
