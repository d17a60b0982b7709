#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "mvfr/geom/camera.hpp"

namespace mvfr::geom {

// Per-view 2D landmark observations; nullopt marks an invalid detection.
struct LandmarkSet2D {
  std::vector<std::vector<std::optional<Eigen::Vector2d>>> views;  // [view][j]

  size_t landmark_count() const { return views.empty() ? 0 : views[0].size(); }
  void validate() const;
};

struct LandmarkSet3D {
  std::vector<Eigen::Vector3d> points;
  std::vector<uint8_t> valid;  // empty means all valid

  bool is_valid(size_t j) const { return valid.empty() || valid[j]; }
  size_t valid_count() const;
};

// Landmark file: {"views":[[[x,y]|null, ...] x M]}.
LandmarkSet2D load_landmarks(const std::string& path);
void save_landmarks(const std::string& path, const LandmarkSet2D& lm);

struct TriangulationResult {
  Eigen::Vector3d point;
  double rms_px = 0.0;
};

// Minimizes the summed squared reprojection error of one landmark over the
// given views: DLT linear least squares followed by at most 10 Gauss-Newton
// steps on the true reprojection objective.
TriangulationResult triangulate_landmark(
    const std::vector<CameraView>& cameras,
    const std::vector<std::optional<Eigen::Vector2d>>& observations);

}  // namespace mvfr::geom
