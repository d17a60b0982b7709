#include "mvfr/geom/mesh.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mvfr/common.hpp"

namespace mvfr::geom {

void Mesh::validate() const {
  for (size_t f = 0; f < faces.size(); ++f)
    for (int k = 0; k < 3; ++k)
      MVFR_CHECK(faces[f][k] >= 0 && size_t(faces[f][k]) < vertices.size(),
                 "mesh: face " << f << " references vertex " << faces[f][k]
                               << " out of range (n=" << vertices.size() << ")");
  MVFR_CHECK(uvs.empty() || uvs.size() == vertices.size(),
             "mesh: uv count " << uvs.size() << " != vertex count " << vertices.size());
  MVFR_CHECK(normals.empty() || normals.size() == vertices.size(),
             "mesh: normal count " << normals.size() << " != vertex count "
                                   << vertices.size());
}

double triangle_area(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                     const Eigen::Vector3d& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

double surface_area(const Mesh& mesh) {
  double area = 0.0;
  for (const auto& f : mesh.faces)
    area += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
  return area;
}

namespace {

// parses one "a", "a/b", "a//c" or "a/b/c" face corner
void parse_corner(const std::string& token, int line_no, int& v, int& vt, int& vn) {
  v = vt = vn = 0;
  int field = 0;
  int value = 0;
  bool any = false, neg = false;
  auto commit = [&]() {
    const int signed_value = neg ? -value : value;
    if (field == 0) v = signed_value;
    else if (field == 1) vt = signed_value;
    else vn = signed_value;
    value = 0;
    any = false;
    neg = false;
  };
  for (char ch : token) {
    if (ch == '/') {
      commit();
      ++field;
      MVFR_CHECK_IO(field <= 2, "obj: malformed face corner '" << token << "' at line " << line_no);
    } else if (ch == '-') {
      neg = true;
    } else {
      MVFR_CHECK_IO(ch >= '0' && ch <= '9',
                    "obj: malformed face corner '" << token << "' at line " << line_no);
      value = value * 10 + (ch - '0');
      any = true;
    }
  }
  commit();
  (void)any;
}

int resolve_index(int idx, size_t count, int line_no, const char* what) {
  MVFR_CHECK_IO(idx != 0, "obj: " << what << " index 0 at line " << line_no
                                  << " (OBJ indices are 1-based)");
  const int resolved = idx > 0 ? idx - 1 : int(count) + idx;
  MVFR_CHECK_IO(resolved >= 0 && size_t(resolved) < count,
                "obj: " << what << " index " << idx << " out of range at line " << line_no);
  return resolved;
}

}  // namespace

Mesh load_obj(const std::string& path) {
  std::ifstream is(path);
  MVFR_CHECK_IO(is.is_open(), "obj: cannot open '" << path << "'");

  Mesh mesh;
  std::vector<Eigen::Vector2d> vt_pool;
  std::vector<Eigen::Vector3d> vn_pool;
  std::vector<int> uv_of_vertex, vn_of_vertex;

  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag.empty() || tag[0] == '#') continue;
    if (tag == "v") {
      Eigen::Vector3d p;
      MVFR_CHECK_IO(bool(ls >> p.x() >> p.y() >> p.z()),
                    "obj: malformed vertex at line " << line_no);
      mesh.vertices.push_back(p);
    } else if (tag == "vt") {
      Eigen::Vector2d uv;
      MVFR_CHECK_IO(bool(ls >> uv.x() >> uv.y()),
                    "obj: malformed texture coordinate at line " << line_no);
      vt_pool.push_back(uv);
    } else if (tag == "vn") {
      Eigen::Vector3d n;
      MVFR_CHECK_IO(bool(ls >> n.x() >> n.y() >> n.z()),
                    "obj: malformed normal at line " << line_no);
      vn_pool.push_back(n);
    } else if (tag == "f") {
      std::array<int, 3> vi{};
      std::string token;
      for (int k = 0; k < 3; ++k) {
        MVFR_CHECK_IO(bool(ls >> token), "obj: face with fewer than 3 corners at line " << line_no);
        int v, t, n;
        parse_corner(token, line_no, v, t, n);
        vi[k] = resolve_index(v, mesh.vertices.size(), line_no, "vertex");
        if (t != 0) {
          const int ti = resolve_index(t, vt_pool.size(), line_no, "texture");
          uv_of_vertex.resize(mesh.vertices.size(), -1);
          uv_of_vertex[vi[k]] = ti;
        }
        if (n != 0) {
          const int ni = resolve_index(n, vn_pool.size(), line_no, "normal");
          vn_of_vertex.resize(mesh.vertices.size(), -1);
          vn_of_vertex[vi[k]] = ni;
        }
      }
      std::string extra;
      MVFR_CHECK_IO(!(ls >> extra), "obj: non-triangular face at line " << line_no);
      mesh.faces.push_back(vi);
    }
    // other tags (o, g, s, mtllib, usemtl) are ignored
  }

  if (!uv_of_vertex.empty()) {
    uv_of_vertex.resize(mesh.vertices.size(), -1);
    mesh.uvs.assign(mesh.vertices.size(), Eigen::Vector2d::Zero());
    for (size_t i = 0; i < mesh.vertices.size(); ++i)
      if (uv_of_vertex[i] >= 0) mesh.uvs[i] = vt_pool[uv_of_vertex[i]];
  }
  if (!vn_of_vertex.empty()) {
    vn_of_vertex.resize(mesh.vertices.size(), -1);
    mesh.normals.assign(mesh.vertices.size(), Eigen::Vector3d::UnitZ());
    for (size_t i = 0; i < mesh.vertices.size(); ++i)
      if (vn_of_vertex[i] >= 0) mesh.normals[i] = vn_pool[vn_of_vertex[i]];
  }

  // drop degenerate faces (repeated indices or zero area)
  std::vector<std::array<int, 3>> kept;
  kept.reserve(mesh.faces.size());
  for (const auto& f : mesh.faces) {
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
    if (triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]) < 1e-12)
      continue;
    kept.push_back(f);
  }
  mesh.faces = std::move(kept);
  mesh.validate();
  return mesh;
}

namespace {

void write_vertices(std::FILE* f, const Mesh& mesh,
                    const std::vector<Eigen::Vector3d>* colors) {
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& p = mesh.vertices[i];
    if (colors) {
      const auto& c = (*colors)[i];
      std::fprintf(f, "v %.6f %.6f %.6f %.4f %.4f %.4f\n", p.x(), p.y(), p.z(), c.x(),
                   c.y(), c.z());
    } else {
      std::fprintf(f, "v %.6f %.6f %.6f\n", p.x(), p.y(), p.z());
    }
  }
  for (const auto& uv : mesh.uvs) std::fprintf(f, "vt %.8f %.8f\n", uv.x(), uv.y());
  for (const auto& n : mesh.normals)
    std::fprintf(f, "vn %.8f %.8f %.8f\n", n.x(), n.y(), n.z());
  const bool has_uv = !mesh.uvs.empty(), has_n = !mesh.normals.empty();
  for (const auto& face : mesh.faces) {
    if (has_uv && has_n)
      std::fprintf(f, "f %d/%d/%d %d/%d/%d %d/%d/%d\n", face[0] + 1, face[0] + 1,
                   face[0] + 1, face[1] + 1, face[1] + 1, face[1] + 1, face[2] + 1,
                   face[2] + 1, face[2] + 1);
    else if (has_uv)
      std::fprintf(f, "f %d/%d %d/%d %d/%d\n", face[0] + 1, face[0] + 1, face[1] + 1,
                   face[1] + 1, face[2] + 1, face[2] + 1);
    else if (has_n)
      std::fprintf(f, "f %d//%d %d//%d %d//%d\n", face[0] + 1, face[0] + 1, face[1] + 1,
                   face[1] + 1, face[2] + 1, face[2] + 1);
    else
      std::fprintf(f, "f %d %d %d\n", face[0] + 1, face[1] + 1, face[2] + 1);
  }
}

}  // namespace

void save_obj(const std::string& path, const Mesh& mesh) {
  mesh.validate();
  std::FILE* f = std::fopen(path.c_str(), "wb");
  MVFR_CHECK_IO(f != nullptr, "obj: cannot write '" << path << "'");
  write_vertices(f, mesh, nullptr);
  std::fclose(f);
}

void save_obj_vertex_colors(const std::string& path, const Mesh& mesh,
                            const std::vector<Eigen::Vector3d>& colors) {
  mesh.validate();
  MVFR_CHECK(colors.size() == mesh.vertices.size(), "obj: color count mismatch");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  MVFR_CHECK_IO(f != nullptr, "obj: cannot write '" << path << "'");
  write_vertices(f, mesh, &colors);
  std::fclose(f);
}

std::vector<Eigen::Vector3d> compute_smoothed_normals(const Mesh& mesh, int iterations,
                                                      NormalsReport* report) {
  mesh.validate();
  const size_t n = mesh.vertices.size();
  std::vector<Eigen::Vector3d> normals(n, Eigen::Vector3d::Zero());

  // area-weighted accumulation: the cross product already carries the area
  for (const auto& f : mesh.faces) {
    const Eigen::Vector3d& a = mesh.vertices[f[0]];
    const Eigen::Vector3d cr = (mesh.vertices[f[1]] - a).cross(mesh.vertices[f[2]] - a);
    for (int k = 0; k < 3; ++k) normals[f[k]] += cr;
  }

  int isolated = 0;
  for (auto& nv : normals) {
    const double len = nv.norm();
    if (len < 1e-14) {
      nv = Eigen::Vector3d::UnitZ();
      ++isolated;
    } else {
      nv /= len;
    }
  }
  if (report) report->isolated_vertices = isolated;

  if (iterations > 0) {
    std::vector<std::vector<int>> ring(n);
    for (const auto& f : mesh.faces)
      for (int k = 0; k < 3; ++k) {
        ring[f[k]].push_back(f[(k + 1) % 3]);
        ring[f[k]].push_back(f[(k + 2) % 3]);
      }
    std::vector<Eigen::Vector3d> next(n);
    for (int it = 0; it < iterations; ++it) {
      for (size_t i = 0; i < n; ++i) {
        Eigen::Vector3d acc = normals[i];
        for (int j : ring[i]) acc += normals[j];
        const double len = acc.norm();
        next[i] = len < 1e-14 ? normals[i] : Eigen::Vector3d(acc / len);
      }
      normals.swap(next);
    }
  }
  return normals;
}

}  // namespace mvfr::geom
