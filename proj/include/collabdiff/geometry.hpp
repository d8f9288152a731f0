#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "collabdiff/rng.hpp"

namespace collabdiff::geometry {

/// Thrown when a fundamental matrix is requested for two cameras whose
/// centers coincide (relative translation ~ 0): the epipolar geometry is
/// undefined and the pseudo-epipolar fallback must be used instead.
struct CoincidentCamerasError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when the epipolar line of a query degenerates (the query is an
/// epipole, so F.(x,y,1) has no direction part).
struct DegenerateLineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CameraIntrinsics {
  double fx = 1.0, fy = 1.0;  // focal lengths, pixels
  double cx = 0.0, cy = 0.0;  // principal point, pixels
  int width = 1, height = 1;  // image resolution the intrinsics are valid at

  Eigen::Matrix3d matrix() const;
  /// Closed-form inverse of the calibration matrix (upper triangular).
  Eigen::Matrix3d inverse_matrix() const;
  void validate() const;
};

/// World-to-camera pose: x_cam = R x_world + t.
struct CameraPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  CameraIntrinsics intrinsics;

  void validate() const;  // rotation orthonormal (1e-9), det +1, intrinsics valid
  Eigen::Vector3d camera_center() const { return -rotation.transpose() * translation; }
  /// Pinhole projection to pixel coordinates; throws std::domain_error when
  /// the point lies on the camera plane (depth ~ 0).
  Eigen::Vector2d project(const Eigen::Vector3d& world_point) const;
};

struct Trajectory {
  std::vector<CameraPose> poses;
  void validate() const;  // nonempty, each pose valid, shared resolution
};

struct RelativePose {
  Eigen::Matrix3d rotation;
  Eigen::Vector3d translation;
};

/// Pose of camera b expressed in camera a's frame:
/// R_rel = R_b R_a^T, t_rel = t_b - R_rel t_a.
RelativePose relative_pose(const CameraPose& a, const CameraPose& b);

/**
 * Two-view fundamental matrix, stored canonically: unit Frobenius norm with
 * the first nonzero entry (row-major scan) positive. Rank deficiency
 * (smallest singular value < 1e-7 x largest) is enforced at construction.
 */
class FundamentalMatrix {
 public:
  static FundamentalMatrix from_matrix(const Eigen::Matrix3d& m);

  const Eigen::Matrix3d& matrix() const { return m_; }
  FundamentalMatrix transposed() const { return from_matrix(m_.transpose()); }

 private:
  FundamentalMatrix() = default;
  Eigen::Matrix3d m_;
};

/// F = K_b^{-T} [t_rel]_x R_rel K_a^{-1}, canonically normalized.
/// Throws CoincidentCamerasError when |t_rel| <= 1e-9.
FundamentalMatrix fundamental_matrix(const CameraPose& a, const CameraPose& b);

/// A 2D line a*u + b*v + c = 0 with unit direction part (a^2 + b^2 = 1),
/// so distance_to is the plain absolute residual.
struct EpipolarLine {
  double a = 0.0, b = 0.0, c = 0.0;
  double distance_to(double u, double v) const { return std::abs(a * u + b * v + c); }
};

/// Epipolar line of query pixel (x, y) in the other image: F.(x,y,1) scaled
/// by the positive factor 1/hypot(l1,l2). Throws DegenerateLineError at
/// epipoles.
EpipolarLine epipolar_line(const FundamentalMatrix& f, double x, double y);

struct GridSize {
  int height = 0, width = 0;
  int count() const { return height * width; }
  bool operator==(const GridSize&) const = default;
};

/**
 * Boolean attention mask between a query feature grid and a key feature
 * grid, flattened row-major: bit(q, k) says key cell k may attend to query
 * cell q. tau records the distance threshold the generating line field used
 * (image pixels for epipolar masks, grid pixels for pseudo masks).
 */
class EpipolarMask {
 public:
  EpipolarMask(GridSize query_res, GridSize key_res, double tau);

  const GridSize& query_res() const { return query_res_; }
  const GridSize& key_res() const { return key_res_; }
  double tau() const { return tau_; }
  int num_queries() const { return query_res_.count(); }
  int num_keys() const { return key_res_.count(); }

  bool bit(int q, int k) const { return bits_[index(q, k)]; }
  void set_bit(int q, int k, bool value = true) { bits_[index(q, k)] = value; }
  std::size_t count_set() const;

  bool operator==(const EpipolarMask&) const = default;

  /// PGM P5 image, one row per query, set bits white (255).
  void write_pgm(std::ostream& out) const;
  /// CSV `q_index,k_index` of set bits, row-major query order.
  void write_csv(std::ostream& out) const;

 private:
  std::size_t index(int q, int k) const;

  GridSize query_res_, key_res_;
  double tau_;
  std::vector<bool> bits_;  // query-major
};

/**
 * Mask from true epipolar geometry. Feature-grid cell centers are mapped to
 * image coordinates as ((u + 0.5) * image_w / feature_w, likewise for v) and
 * a bit is set iff the key center lies within tau image pixels of the
 * query's epipolar line. Queries that are epipoles yield all-zero rows
 * (resolved downstream by the attention module), never a failure.
 */
EpipolarMask epipolar_mask(const FundamentalMatrix& f, GridSize query_res,
                           GridSize key_res, GridSize image_res, double tau);

/**
 * Pseudo-epipolar mask for the identical-pose case: for each query cell a
 * line of random slope theta ~ Uniform[0, pi) through the cell's own center
 * (u + 0.5, v + 0.5), thresholded at tau grid pixels. The (q, q) diagonal is
 * always set (the line passes through its own center). Slopes are drawn from
 * `rng` once per query in row-major order, so a fixed seed fixes the mask.
 */
EpipolarMask pseudo_epipolar_mask(GridSize res, double tau, Rng& rng);

/// Test hook: pseudo mask with explicitly supplied per-query angles.
EpipolarMask pseudo_epipolar_mask_from_angles(GridSize res, double tau,
                                              const std::vector<double>& angles);

}  // namespace collabdiff::geometry
