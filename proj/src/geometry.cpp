#include "collabdiff/geometry.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

namespace collabdiff::geometry {

namespace {

constexpr double kCoincidentTol = 1e-9;
constexpr double kSignScanTol = 1e-12;
constexpr double kRankRatioTol = 1e-7;
// Degeneracy is judged relative to ||F||_F * ||x_h||: for the unit-norm
// stored F this collapses to 1e-12 * hypot(x, y, 1).
constexpr double kDegenerateTol = 1e-12;

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

}  // namespace

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

Eigen::Matrix3d CameraIntrinsics::inverse_matrix() const {
  Eigen::Matrix3d k;
  k << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
  return k;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy))
    throw std::invalid_argument("CameraIntrinsics: focal lengths must be positive finite");
  if (!std::isfinite(cx) || !std::isfinite(cy))
    throw std::invalid_argument("CameraIntrinsics: principal point must be finite");
  if (width < 1 || height < 1)
    throw std::invalid_argument("CameraIntrinsics: resolution must be at least 1x1");
}

void CameraPose::validate() const {
  intrinsics.validate();
  if (!rotation.allFinite() || !translation.allFinite())
    throw std::invalid_argument("CameraPose: non-finite pose entries");
  const Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9)
    throw std::invalid_argument("CameraPose: rotation is not orthonormal (1e-9)");
  if (rotation.determinant() < 0.0)
    throw std::invalid_argument("CameraPose: rotation must be proper (det +1)");
}

Eigen::Vector2d CameraPose::project(const Eigen::Vector3d& world_point) const {
  const Eigen::Vector3d cam = rotation * world_point + translation;
  if (std::abs(cam.z()) < 1e-12)
    throw std::domain_error("CameraPose::project: point lies on the camera plane");
  return {intrinsics.fx * cam.x() / cam.z() + intrinsics.cx,
          intrinsics.fy * cam.y() / cam.z() + intrinsics.cy};
}

void Trajectory::validate() const {
  if (poses.empty()) throw std::invalid_argument("Trajectory: no poses");
  const int w = poses.front().intrinsics.width;
  const int h = poses.front().intrinsics.height;
  for (const CameraPose& p : poses) {
    p.validate();
    if (p.intrinsics.width != w || p.intrinsics.height != h)
      throw std::invalid_argument("Trajectory: poses disagree on resolution");
  }
}

RelativePose relative_pose(const CameraPose& a, const CameraPose& b) {
  RelativePose rel;
  rel.rotation = b.rotation * a.rotation.transpose();
  rel.translation = b.translation - rel.rotation * a.translation;
  return rel;
}

FundamentalMatrix FundamentalMatrix::from_matrix(const Eigen::Matrix3d& m) {
  if (!m.allFinite())
    throw std::invalid_argument("FundamentalMatrix: non-finite entries");
  const double norm = m.norm();
  if (norm < 1e-300)
    throw std::invalid_argument("FundamentalMatrix: zero matrix");
  Eigen::Matrix3d n = m / norm;

  // Canonical sign: first entry of the row-major scan that is clearly
  // nonzero decides.
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (std::abs(n(r, c)) > kSignScanTol) {
        if (n(r, c) < 0.0) n = -n;
        r = 3;
        break;
      }
    }
  }

  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(n);
  const auto& sv = svd.singularValues();
  if (!(sv(2) < kRankRatioTol * sv(0))) {
    std::ostringstream msg;
    msg << "FundamentalMatrix: matrix is not rank-deficient (sigma_min/sigma_max = "
        << sv(2) / sv(0) << ")";
    throw std::invalid_argument(msg.str());
  }

  FundamentalMatrix f;
  f.m_ = n;
  return f;
}

FundamentalMatrix fundamental_matrix(const CameraPose& a, const CameraPose& b) {
  a.validate();
  b.validate();
  const RelativePose rel = relative_pose(a, b);
  if (rel.translation.norm() <= kCoincidentTol)
    throw CoincidentCamerasError(
        "fundamental_matrix: camera centers coincide; epipolar geometry undefined");
  const Eigen::Matrix3d raw = b.intrinsics.inverse_matrix().transpose() *
                              skew(rel.translation) * rel.rotation *
                              a.intrinsics.inverse_matrix();
  return FundamentalMatrix::from_matrix(raw);
}

EpipolarLine epipolar_line(const FundamentalMatrix& f, double x, double y) {
  // Extended precision so the canonical 1/||F|| scale cancels exactly under
  // normalization whenever the unscaled line has representable coefficients
  // (e.g. axis-aligned lines at half-integer pixel centers stay exact).
  const Eigen::Matrix3d& m = f.matrix();
  long double l1 = 0.0L, l2 = 0.0L, l3 = 0.0L;
  const long double q[3] = {static_cast<long double>(x), static_cast<long double>(y), 1.0L};
  for (int c = 0; c < 3; ++c) {
    l1 += static_cast<long double>(m(0, c)) * q[c];
    l2 += static_cast<long double>(m(1, c)) * q[c];
    l3 += static_cast<long double>(m(2, c)) * q[c];
  }
  const long double h = std::sqrt(l1 * l1 + l2 * l2);
  if (static_cast<double>(h) <= kDegenerateTol * std::hypot(x, y, 1.0))
    throw DegenerateLineError("epipolar_line: query is an epipole (no line direction)");
  return {static_cast<double>(l1 / h), static_cast<double>(l2 / h),
          static_cast<double>(l3 / h)};
}

EpipolarMask::EpipolarMask(GridSize query_res, GridSize key_res, double tau)
    : query_res_(query_res), key_res_(key_res), tau_(tau) {
  if (query_res.height < 1 || query_res.width < 1 || key_res.height < 1 ||
      key_res.width < 1)
    throw std::invalid_argument("EpipolarMask: resolutions must be at least 1x1");
  if (!(tau > 0.0))
    throw std::invalid_argument("EpipolarMask: tau must be positive");
  bits_.assign(static_cast<std::size_t>(query_res.count()) * key_res.count(), false);
}

std::size_t EpipolarMask::index(int q, int k) const {
  if (q < 0 || q >= num_queries() || k < 0 || k >= num_keys())
    throw std::out_of_range("EpipolarMask: bit index out of range");
  return static_cast<std::size_t>(q) * num_keys() + k;
}

std::size_t EpipolarMask::count_set() const {
  std::size_t n = 0;
  for (bool b : bits_) n += b ? 1 : 0;
  return n;
}

void EpipolarMask::write_pgm(std::ostream& out) const {
  out << "P5\n" << num_keys() << ' ' << num_queries() << "\n255\n";
  for (bool b : bits_) out.put(b ? static_cast<char>(255) : static_cast<char>(0));
}

void EpipolarMask::write_csv(std::ostream& out) const {
  out << "q_index,k_index\n";
  for (int q = 0; q < num_queries(); ++q)
    for (int k = 0; k < num_keys(); ++k)
      if (bit(q, k)) out << q << ',' << k << '\n';
}

EpipolarMask epipolar_mask(const FundamentalMatrix& f, GridSize query_res,
                           GridSize key_res, GridSize image_res, double tau) {
  if (image_res.height < 1 || image_res.width < 1)
    throw std::invalid_argument("epipolar_mask: image resolution must be at least 1x1");
  EpipolarMask mask(query_res, key_res, tau);
  for (int qr = 0; qr < query_res.height; ++qr) {
    for (int qc = 0; qc < query_res.width; ++qc) {
      const int q = qr * query_res.width + qc;
      const double qx = (qc + 0.5) * image_res.width / query_res.width;
      const double qy = (qr + 0.5) * image_res.height / query_res.height;
      EpipolarLine line;
      try {
        line = epipolar_line(f, qx, qy);
      } catch (const DegenerateLineError&) {
        continue;  // epipole: row stays all-zero
      }
      for (int kr = 0; kr < key_res.height; ++kr) {
        for (int kc = 0; kc < key_res.width; ++kc) {
          const double kx = (kc + 0.5) * image_res.width / key_res.width;
          const double ky = (kr + 0.5) * image_res.height / key_res.height;
          if (line.distance_to(kx, ky) < tau)
            mask.set_bit(q, kr * key_res.width + kc);
        }
      }
    }
  }
  return mask;
}

EpipolarMask pseudo_epipolar_mask_from_angles(GridSize res, double tau,
                                              const std::vector<double>& angles) {
  if (static_cast<int>(angles.size()) != res.count())
    throw std::invalid_argument("pseudo_epipolar_mask: need one angle per query cell");
  EpipolarMask mask(res, res, tau);
  for (int qr = 0; qr < res.height; ++qr) {
    for (int qc = 0; qc < res.width; ++qc) {
      const int q = qr * res.width + qc;
      const double theta = angles[q];
      const double x0 = qc + 0.5;
      const double y0 = qr + 0.5;
      const double a = -std::sin(theta);
      const double b = std::cos(theta);
      const double c = std::sin(theta) * x0 - std::cos(theta) * y0;
      for (int kr = 0; kr < res.height; ++kr) {
        for (int kc = 0; kc < res.width; ++kc) {
          const double d = std::abs(a * (kc + 0.5) + b * (kr + 0.5) + c);
          if (d < tau) mask.set_bit(q, kr * res.width + kc);
        }
      }
    }
  }
  return mask;
}

EpipolarMask pseudo_epipolar_mask(GridSize res, double tau, Rng& rng) {
  constexpr double kPi = 3.14159265358979323846;
  std::vector<double> angles(static_cast<std::size_t>(res.count()));
  for (double& a : angles) a = rng.uniform(0.0, kPi);
  return pseudo_epipolar_mask_from_angles(res, tau, angles);
}

}  // namespace collabdiff::geometry
