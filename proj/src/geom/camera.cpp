#include "mvfr/geom/camera.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mvfr/common.hpp"

namespace mvfr::geom {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void CameraView::validate() const {
  const Eigen::Matrix3d gram = R.transpose() * R;
  MVFR_CHECK((gram - Eigen::Matrix3d::Identity()).norm() < 1e-8,
             "camera " << index << ": rotation is not orthonormal");
  MVFR_CHECK(R.determinant() > 0.0, "camera " << index << ": rotation has negative determinant");
  MVFR_CHECK(std::abs(K(2, 2) - 1.0) < 1e-12, "camera " << index << ": K[2][2] must be 1");
  MVFR_CHECK(K(0, 0) > 0.0 && K(1, 1) > 0.0, "camera " << index << ": focal lengths must be positive");
}

bool try_project(const CameraView& cam, const Eigen::Vector3d& p, Eigen::Vector2d& pixel) {
  const Eigen::Vector3d pc = cam.R * p + cam.t;
  if (pc.z() <= kMinCameraDepth) return false;
  const double inv_z = 1.0 / pc.z();
  pixel.x() = cam.K(0, 0) * pc.x() * inv_z + cam.K(0, 2);
  pixel.y() = cam.K(1, 1) * pc.y() * inv_z + cam.K(1, 2);
  return true;
}

Eigen::Vector2d project(const CameraView& cam, const Eigen::Vector3d& p) {
  Eigen::Vector2d pixel;
  MVFR_CHECK_NUMERIC(try_project(cam, p, pixel),
                     "project: point (" << p.transpose() << ") is behind camera " << cam.index);
  return pixel;
}

Eigen::Vector3d backproject(const CameraView& cam, const Eigen::Vector2d& pixel, double depth) {
  Eigen::Vector3d ray((pixel.x() - cam.K(0, 2)) / cam.K(0, 0),
                      (pixel.y() - cam.K(1, 2)) / cam.K(1, 1), 1.0);
  return cam.R.transpose() * (ray * depth - cam.t);
}

CameraView make_lookat_camera(const Eigen::Vector3d& position, const Eigen::Vector3d& target,
                              const Eigen::Vector3d& up, double fx, double fy, double cx,
                              double cy) {
  CameraView cam;
  const Eigen::Vector3d fwd = (target - position).normalized();  // camera +z
  Eigen::Vector3d right = fwd.cross(up).normalized();            // camera +x
  const Eigen::Vector3d down = fwd.cross(right);                 // camera +y (image down)
  cam.R.row(0) = right;
  cam.R.row(1) = down;
  cam.R.row(2) = fwd;
  cam.t = -cam.R * position;
  cam.K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return cam;
}

namespace {

ordered_json mat3_to_json(const Eigen::Matrix3d& m) {
  ordered_json rows = ordered_json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return rows;
}

Eigen::Matrix3d mat3_from_json(const ordered_json& j) {
  Eigen::Matrix3d m;
  MVFR_CHECK_IO(j.is_array() && j.size() == 3, "calibration: expected a 3x3 matrix");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j.at(size_t(r)).at(size_t(c)).get<double>();
  return m;
}

}  // namespace

std::vector<CameraView> load_calibration(const std::string& path, bool load_images) {
  std::ifstream is(path);
  MVFR_CHECK_IO(is.is_open(), "calibration: cannot open '" << path << "'");
  ordered_json doc;
  try {
    is >> doc;
  } catch (const std::exception& e) {
    throw IoError("calibration: failed to parse '" + path + "': " + e.what());
  }
  MVFR_CHECK_IO(doc.contains("views"), "calibration: '" << path << "' has no 'views' array");
  const fs::path dir = fs::path(path).parent_path();

  std::vector<CameraView> views;
  int index = 0;
  for (const auto& jv : doc["views"]) {
    CameraView cam;
    cam.index = index++;
    cam.K = mat3_from_json(jv.at("K"));
    cam.R = mat3_from_json(jv.at("R"));
    for (int i = 0; i < 3; ++i) cam.t[i] = jv.at("t").at(size_t(i)).get<double>();
    cam.validate();
    if (load_images && jv.contains("image")) {
      const fs::path img_path = dir / jv["image"].get<std::string>();
      if (fs::exists(img_path)) cam.image = load_png(img_path.string());
    }
    views.push_back(std::move(cam));
  }
  return views;
}

void save_calibration(const std::string& path, const std::vector<CameraView>& views,
                      const std::vector<std::string>& image_paths) {
  MVFR_CHECK(image_paths.empty() || image_paths.size() == views.size(),
             "calibration: image path count mismatch");
  ordered_json doc;
  doc["views"] = ordered_json::array();
  for (size_t i = 0; i < views.size(); ++i) {
    ordered_json jv;
    jv["K"] = mat3_to_json(views[i].K);
    jv["R"] = mat3_to_json(views[i].R);
    jv["t"] = {views[i].t[0], views[i].t[1], views[i].t[2]};
    if (!image_paths.empty()) jv["image"] = image_paths[i];
    doc["views"].push_back(std::move(jv));
  }
  std::ofstream os(path);
  MVFR_CHECK_IO(os.is_open(), "calibration: cannot write '" << path << "'");
  os << doc.dump(2) << "\n";
}

}  // namespace mvfr::geom
