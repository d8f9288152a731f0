#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "collabdiff/geometry.hpp"
#include "collabdiff/image.hpp"
#include "collabdiff/rng.hpp"

namespace collabdiff::dataprep {

/// Thrown by the pose-file parser with the 1-based offending line number.
struct MalformedLineError : std::runtime_error {
  MalformedLineError(int line_no, const std::string& reason);
  int line_no;
};

/**
 * One line of a RealEstate10K-style camera file: timestamp, normalized
 * pinhole intrinsics (fractions of width/height), two reserved zeros, and a
 * row-major 3x4 world-to-camera extrinsic.
 */
struct PoseFileRecord {
  std::int64_t timestamp_us = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;  // normalized
  Eigen::Matrix<double, 3, 4> extrinsic = Eigen::Matrix<double, 3, 4>::Zero();

  /// Denormalize against a concrete image resolution.
  geometry::CameraPose to_camera_pose(int width, int height) const;
};

/**
 * Parse a pose file: lines with 19 whitespace-separated numeric fields, in
 * file order. Header/URL lines (first token not numeric) are skipped.
 * Throws MalformedLineError on a numeric-looking line with the wrong field
 * count or non-finite values.
 */
std::vector<PoseFileRecord> parse_pose_file(std::istream& in);

/// Companion writer (17 significant digits; round-trips bit-exactly).
void write_pose_file(std::ostream& out, const std::vector<PoseFileRecord>& records);

/**
 * Fold a (2N-1)-frame sequence into two N-frame clips sharing the middle
 * frame as their common start: with 0-based source indices and mid = N-1,
 * clip_a = [mid, mid-1, ..., 0] and clip_b = [mid, mid+1, ..., 2N-2].
 * Poses fold by the same index lists.
 */
struct FoldedClipPair {
  std::vector<int> clip_a, clip_b;
};

/// frame_count must be odd and >= 3.
FoldedClipPair fold_sequence(int frame_count);

/**
 * Controls of one augmentation homography: translation t (pixels), rotation
 * theta (radians), anisotropic scale s, shear sh, perspective p (inverse
 * pixels). H = H_t * H_r * H_s * H_sh * H_p.
 */
struct HomographyControls {
  double t0 = 0, t1 = 0;
  double theta = 0;
  double s0 = 0, s1 = 0;
  double sh0 = 0, sh1 = 0;
  double p0 = 0, p1 = 0;
};

/// Exact product of the five factor matrices; throws std::invalid_argument
/// when |det H| < 1e-12.
Eigen::Matrix3d build_homography(const HomographyControls& c);

/// Frame k of N (1-based): every control scaled by (k-1)/(N-1), so k=1 is
/// the identity and k=N the full deformation. Requires N >= 2.
HomographyControls interpolate_controls(const HomographyControls& c_final, int k, int n);

struct WarpResult {
  img::Image image;
  img::Image validity;  // single channel, 1 where the source sample was in bounds
};

/**
 * Inverse warping in pixel coordinates with the origin at the top-left pixel
 * center: each output pixel is mapped through H^{-1} and bilinearly sampled
 * from the source; out-of-bounds samples give zeros with validity 0.
 */
WarpResult warp_frame(const img::Image& image, const Eigen::Matrix3d& h);

struct ControlScales {
  double t = 8.0;       // pixels
  double theta = 0.05;  // radians
  double s = 0.05;
  double sh = 0.05;
  double p = 1e-4;  // inverse pixels
};

/**
 * Draw final-frame controls component-wise from N(0, scale^2) in the fixed
 * order t0, t1, theta, s0, s1, sh0, sh1, p0, p1. A draw is rejected (up to
 * 100 tries, then std::runtime_error) when H is singular or fewer than 50%
 * of the output pixels of a (width x height) frame would map in bounds.
 */
HomographyControls sample_controls(Rng& rng, const ControlScales& scales,
                                   int width = 256, int height = 256);

/// Fraction of output pixels whose inverse-mapped sample is in bounds.
double warp_validity_fraction(const Eigen::Matrix3d& h, int width, int height);

}  // namespace collabdiff::dataprep
