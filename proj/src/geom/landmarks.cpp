#include "mvfr/geom/landmarks.hpp"

#include <Eigen/Dense>
#include <fstream>

#include <json.hpp>

#include "mvfr/common.hpp"

namespace mvfr::geom {

using ordered_json = nlohmann::ordered_json;

void LandmarkSet2D::validate() const {
  if (views.empty()) return;
  const size_t m = views[0].size();
  for (size_t v = 1; v < views.size(); ++v)
    MVFR_CHECK(views[v].size() == m, "landmarks: view " << v << " has " << views[v].size()
                                                        << " entries, expected " << m);
}

size_t LandmarkSet3D::valid_count() const {
  if (valid.empty()) return points.size();
  size_t n = 0;
  for (uint8_t f : valid) n += f ? 1 : 0;
  return n;
}

LandmarkSet2D load_landmarks(const std::string& path) {
  std::ifstream is(path);
  MVFR_CHECK_IO(is.is_open(), "landmarks: cannot open '" << path << "'");
  ordered_json doc;
  try {
    is >> doc;
  } catch (const std::exception& e) {
    throw IoError("landmarks: failed to parse '" + path + "': " + e.what());
  }
  MVFR_CHECK_IO(doc.contains("views"), "landmarks: '" << path << "' has no 'views' array");
  LandmarkSet2D lm;
  for (const auto& jv : doc["views"]) {
    std::vector<std::optional<Eigen::Vector2d>> pts;
    for (const auto& jp : jv) {
      if (jp.is_null()) {
        pts.push_back(std::nullopt);
      } else {
        pts.push_back(Eigen::Vector2d(jp.at(0).get<double>(), jp.at(1).get<double>()));
      }
    }
    lm.views.push_back(std::move(pts));
  }
  lm.validate();
  return lm;
}

void save_landmarks(const std::string& path, const LandmarkSet2D& lm) {
  lm.validate();
  ordered_json doc;
  doc["views"] = ordered_json::array();
  for (const auto& view : lm.views) {
    ordered_json jv = ordered_json::array();
    for (const auto& p : view) {
      if (p) jv.push_back({p->x(), p->y()});
      else jv.push_back(nullptr);
    }
    doc["views"].push_back(std::move(jv));
  }
  std::ofstream os(path);
  MVFR_CHECK_IO(os.is_open(), "landmarks: cannot write '" << path << "'");
  os << doc.dump() << "\n";
}

TriangulationResult triangulate_landmark(
    const std::vector<CameraView>& cameras,
    const std::vector<std::optional<Eigen::Vector2d>>& observations) {
  MVFR_CHECK(cameras.size() == observations.size(),
             "triangulate: " << cameras.size() << " cameras vs " << observations.size()
                             << " observations");
  std::vector<size_t> used;
  for (size_t i = 0; i < observations.size(); ++i)
    if (observations[i]) used.push_back(i);
  MVFR_CHECK(used.size() >= 2,
             "triangulate: need at least 2 valid observations, got " << used.size());

  // DLT rows from P = K[R|t]: (P0 - u*P2) X = u*p2_t - p0_t and likewise for v
  Eigen::MatrixXd A(2 * used.size(), 3);
  Eigen::VectorXd rhs(2 * used.size());
  for (size_t k = 0; k < used.size(); ++k) {
    const CameraView& cam = cameras[used[k]];
    const Eigen::Vector2d& uv = *observations[used[k]];
    const Eigen::Matrix3d KR = cam.K * cam.R;
    const Eigen::Vector3d Kt = cam.K * cam.t;
    A.row(2 * k) = KR.row(0) - uv.x() * KR.row(2);
    rhs(2 * k) = uv.x() * Kt.z() - Kt.x();
    A.row(2 * k + 1) = KR.row(1) - uv.y() * KR.row(2);
    rhs(2 * k + 1) = uv.y() * Kt.z() - Kt.y();
  }
  const Eigen::Matrix3d AtA = A.transpose() * A;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(AtA);
  const double lmin = eig.eigenvalues()(0), lmax = eig.eigenvalues()(2);
  MVFR_CHECK_NUMERIC(lmin > 0.0 && lmax / lmin < 1e8,
                     "triangulate: degenerate geometry (near-parallel rays), normal matrix "
                     "condition number "
                         << (lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity()));
  Eigen::Vector3d x = AtA.ldlt().solve(A.transpose() * rhs);

  // Gauss-Newton polish on the true reprojection objective
  auto objective = [&](const Eigen::Vector3d& p, Eigen::VectorXd* residuals,
                       Eigen::MatrixXd* jac) {
    double cost = 0.0;
    for (size_t k = 0; k < used.size(); ++k) {
      const CameraView& cam = cameras[used[k]];
      const Eigen::Vector2d& uv = *observations[used[k]];
      const Eigen::Vector3d pc = cam.R * p + cam.t;
      const double z = std::max(pc.z(), kMinCameraDepth);
      const double fx = cam.K(0, 0), fy = cam.K(1, 1);
      const Eigen::Vector2d proj(fx * pc.x() / z + cam.K(0, 2), fy * pc.y() / z + cam.K(1, 2));
      const Eigen::Vector2d r = proj - uv;
      cost += r.squaredNorm();
      if (residuals) residuals->segment<2>(2 * long(k)) = r;
      if (jac) {
        const Eigen::RowVector3d dz = cam.R.row(2);
        jac->row(2 * long(k)) = fx * (cam.R.row(0) * z - pc.x() * dz) / (z * z);
        jac->row(2 * long(k) + 1) = fy * (cam.R.row(1) * z - pc.y() * dz) / (z * z);
      }
    }
    return cost;
  };

  Eigen::VectorXd r(2 * used.size());
  Eigen::MatrixXd J(2 * used.size(), 3);
  double cost = objective(x, &r, &J);
  for (int iter = 0; iter < 10; ++iter) {
    const Eigen::Matrix3d H = J.transpose() * J;
    const Eigen::Vector3d g = J.transpose() * r;
    Eigen::Vector3d step = H.ldlt().solve(g);
    if (!step.allFinite()) break;
    // backtrack if the full step increases the cost
    double scale = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 4; ++bt) {
      const Eigen::Vector3d cand = x - scale * step;
      const double cand_cost = objective(cand, nullptr, nullptr);
      if (cand_cost <= cost) {
        x = cand;
        cost = objective(x, &r, &J);
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted || step.norm() < 1e-12) break;
  }

  TriangulationResult result;
  result.point = x;
  result.rms_px = std::sqrt(cost / double(used.size()));
  return result;
}

}  // namespace mvfr::geom
