#pragma once

// shared fixtures for the test suites

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "mvfr/geom/camera.hpp"
#include "mvfr/geom/mesh.hpp"

namespace mvfr_test {

inline std::vector<mvfr::geom::CameraView> camera_ring(int n, double radius_mm) {
  using namespace mvfr::geom;
  std::vector<CameraView> cams;
  const double fx = 600.0, fy = 600.0, cx = 79.5, cy = 119.5;
  for (int i = 0; i < n; ++i) {
    const double az = (-40.0 + 80.0 * double(i) / std::max(1, n - 1)) * M_PI / 180.0;
    const double el = 12.0 * std::sin(2.3 * i) * M_PI / 180.0;
    const Eigen::Vector3d pos(radius_mm * std::sin(az) * std::cos(el),
                              radius_mm * std::sin(el),
                              -radius_mm * std::cos(az) * std::cos(el));
    CameraView cam = make_lookat_camera(pos, Eigen::Vector3d::Zero(),
                                        Eigen::Vector3d::UnitY(), fx, fy, cx, cy);
    cam.index = i;
    cams.push_back(cam);
  }
  return cams;
}

// regular grid over [-extent/2, extent/2]^2 with z = h(x,y) and UVs spanning
// the unit square
inline mvfr::geom::Mesh grid_heightfield(int n, double extent,
                                         const std::function<double(double, double)>& h) {
  mvfr::geom::Mesh m;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const double x = extent * (double(i) / (n - 1) - 0.5);
      const double y = extent * (double(j) / (n - 1) - 0.5);
      m.vertices.emplace_back(x, y, h(x, y));
      m.uvs.emplace_back(double(i) / (n - 1), double(j) / (n - 1));
    }
  for (int j = 0; j + 1 < n; ++j)
    for (int i = 0; i + 1 < n; ++i) {
      const int a = j * n + i, b = j * n + i + 1, c = (j + 1) * n + i,
                d = (j + 1) * n + i + 1;
      m.faces.push_back({a, b, d});
      m.faces.push_back({a, d, c});
    }
  return m;
}

// icosphere: subdivided icosahedron projected onto the unit sphere
inline mvfr::geom::Mesh unit_sphere_mesh(int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  mvfr::geom::Mesh m;
  m.vertices = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
                {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
                {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : m.vertices) v.normalize();
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
             {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
             {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
             {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
      const int idx = int(m.vertices.size()) - 1;
      midpoint[key] = idx;
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    for (const auto& f : m.faces) {
      const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    m.faces = std::move(next);
  }
  return m;
}

inline double angular_variance(const std::vector<Eigen::Vector3d>& normals) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& n : normals) mean += n;
  mean.normalize();
  double acc = 0.0;
  for (const auto& n : normals) {
    const double a = std::acos(std::clamp(n.dot(mean), -1.0, 1.0));
    acc += a * a;
  }
  return acc / double(normals.size());
}

}  // namespace mvfr_test
