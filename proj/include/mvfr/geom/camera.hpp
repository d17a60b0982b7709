#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "mvfr/geom/image.hpp"

namespace mvfr::geom {

// Pinhole camera: x_cam = R * p + t (world -> camera), pixel = K * x_cam / z.
// Units are millimeters; continuous pixel coordinates with integer values at
// pixel centers.
struct CameraView {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  Image image;
  int index = 0;

  void validate() const;
  Eigen::Vector3d camera_center() const { return -R.transpose() * t; }
};

constexpr double kMinCameraDepth = 1e-6;

// Returns false when the point is at or behind the camera plane.
bool try_project(const CameraView& cam, const Eigen::Vector3d& p, Eigen::Vector2d& pixel);

// Throwing form of the projection contract.
Eigen::Vector2d project(const CameraView& cam, const Eigen::Vector3d& p);

// Inverse of project at a given camera-space depth.
Eigen::Vector3d backproject(const CameraView& cam, const Eigen::Vector2d& pixel, double depth);

// Camera at `position` looking toward `target`.
CameraView make_lookat_camera(const Eigen::Vector3d& position, const Eigen::Vector3d& target,
                              const Eigen::Vector3d& up, double fx, double fy, double cx,
                              double cy);

// Calibration file: {"views":[{"K":[[..]],"R":[[..]],"t":[..],"image":"path"}]}.
// Image paths are relative to the calibration file's directory; images are
// loaded when load_images is set and the referenced file exists.
std::vector<CameraView> load_calibration(const std::string& path, bool load_images = true);
void save_calibration(const std::string& path, const std::vector<CameraView>& views,
                      const std::vector<std::string>& image_paths);

}  // namespace mvfr::geom
