#include <cmath>
#include <sstream>

#include "collabdiff/geometry.hpp"
#include "collabdiff/rng.hpp"
#include "doctest.h"

using namespace collabdiff;
using namespace collabdiff::geometry;

namespace {

CameraIntrinsics random_intrinsics(Rng& rng, int width = 640, int height = 480) {
  CameraIntrinsics k;
  k.fx = 200.0 + 600.0 * rng.uniform();
  k.fy = 200.0 + 600.0 * rng.uniform();
  k.cx = width * (0.3 + 0.4 * rng.uniform());
  k.cy = height * (0.3 + 0.4 * rng.uniform());
  k.width = width;
  k.height = height;
  return k;
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  const Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized().toRotationMatrix();
}

CameraPose random_pose(Rng& rng) {
  CameraPose p;
  p.rotation = random_rotation(rng);
  p.translation = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
  p.intrinsics = random_intrinsics(rng);
  return p;
}

/// A camera pair looking roughly down +z with a sideways baseline, so random
/// scene points in front of one camera are visible in both.
std::pair<CameraPose, CameraPose> stereo_pair(Rng& rng) {
  CameraPose a, b;
  a.intrinsics = random_intrinsics(rng);
  b.intrinsics = random_intrinsics(rng);
  a.rotation = Eigen::Matrix3d::Identity();
  a.translation.setZero();
  const Eigen::Vector3d axis =
      Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
  b.rotation =
      Eigen::AngleAxisd(0.2 * (rng.uniform() - 0.5), axis).toRotationMatrix();
  b.translation =
      Eigen::Vector3d(0.3 + rng.uniform(), 0.5 * (rng.uniform() - 0.5), 0.1 * rng.normal());
  return {a, b};
}

Eigen::Vector3d point_in_front(Rng& rng) {
  return {4.0 * (rng.uniform() - 0.5), 4.0 * (rng.uniform() - 0.5),
          4.0 + 6.0 * rng.uniform()};
}

/// The pure-x-translation pair with identity intrinsics: F is proportional
/// to [t]_x and every epipolar line is the horizontal v = v_query.
FundamentalMatrix translation_f(int res = 8) {
  CameraPose a, b;
  a.intrinsics = CameraIntrinsics{1.0, 1.0, 0.0, 0.0, res, res};
  b = a;
  b.translation = Eigen::Vector3d(1.0, 0.0, 0.0);
  return fundamental_matrix(a, b);
}

/// Independent per-pixel oracle: raw line F.(x,y,1), unnormalized distance
/// |l.p| / hypot(l1,l2), strict threshold, epipole rows zero.
EpipolarMask brute_force_mask(const Eigen::Matrix3d& f, GridSize query_res,
                              GridSize key_res, GridSize image_res, double tau) {
  EpipolarMask mask(query_res, key_res, tau);
  for (int qr = 0; qr < query_res.height; ++qr)
    for (int qc = 0; qc < query_res.width; ++qc) {
      const double qx = (qc + 0.5) * image_res.width / query_res.width;
      const double qy = (qr + 0.5) * image_res.height / query_res.height;
      const Eigen::Vector3d l = f * Eigen::Vector3d(qx, qy, 1.0);
      const double h = std::hypot(l.x(), l.y());
      if (h <= 1e-12 * std::hypot(qx, qy, 1.0)) continue;  // epipole: zero row
      for (int kr = 0; kr < key_res.height; ++kr)
        for (int kc = 0; kc < key_res.width; ++kc) {
          const double kx = (kc + 0.5) * image_res.width / key_res.width;
          const double ky = (kr + 0.5) * image_res.height / key_res.height;
          if (std::abs(l.x() * kx + l.y() * ky + l.z()) / h < tau)
            mask.set_bit(qr * query_res.width + qc, kr * key_res.width + kc);
        }
    }
  return mask;
}

}  // namespace

TEST_CASE("intrinsics matrix and closed-form inverse") {
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const CameraIntrinsics k = random_intrinsics(rng);
    const Eigen::Matrix3d prod = k.matrix() * k.inverse_matrix();
    CHECK((prod - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  }
  CameraIntrinsics bad;
  bad.fx = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CameraIntrinsics bad2;
  bad2.width = 0;
  CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);
}

TEST_CASE("pose validation and pinhole projection") {
  CameraPose p;
  p.intrinsics = CameraIntrinsics{100.0, 100.0, 32.0, 24.0, 64, 48};
  CHECK_NOTHROW(p.validate());

  const Eigen::Vector2d center = p.project(Eigen::Vector3d(0, 0, 5));
  CHECK(center.x() == doctest::Approx(32.0));
  CHECK(center.y() == doctest::Approx(24.0));
  const Eigen::Vector2d off = p.project(Eigen::Vector3d(1, 0, 5));
  CHECK(off.x() == doctest::Approx(52.0));
  CHECK_THROWS_AS(p.project(Eigen::Vector3d(1, 1, 0)), std::domain_error);

  CameraPose skewed = p;
  skewed.rotation(0, 1) = 0.5;
  CHECK_THROWS_AS(skewed.validate(), std::invalid_argument);
}

TEST_CASE("camera center and relative pose transform oracle") {
  Rng rng(202);
  for (int trial = 0; trial < 50; ++trial) {
    const CameraPose a = random_pose(rng);
    const CameraPose b = random_pose(rng);
    const Eigen::Vector3d x(rng.normal(), rng.normal(), rng.normal());
    const RelativePose rel = relative_pose(a, b);
    const Eigen::Vector3d in_a = a.rotation * x + a.translation;
    const Eigen::Vector3d in_b = b.rotation * x + b.translation;
    CHECK((rel.rotation * in_a + rel.translation - in_b).norm() < 1e-9);
    // the camera center maps to the origin of its own frame
    CHECK((a.rotation * a.camera_center() + a.translation).norm() < 1e-9);
  }
}

TEST_CASE("fundamental matrix satisfies the projection oracle") {
  Rng rng(303);
  for (int pair = 0; pair < 50; ++pair) {
    const auto [a, b] = stereo_pair(rng);
    const FundamentalMatrix f = fundamental_matrix(a, b);
    int checked = 0;
    while (checked < 20) {
      const Eigen::Vector3d x = point_in_front(rng);
      const Eigen::Vector3d in_b = b.rotation * x + b.translation;
      if (in_b.z() < 0.5) continue;
      const Eigen::Vector2d pa = a.project(x);
      const Eigen::Vector2d pb = b.project(x);
      const EpipolarLine l = epipolar_line(f, pa.x(), pa.y());
      CHECK(l.distance_to(pb.x(), pb.y()) < 1e-6);
      ++checked;
    }
  }
}

TEST_CASE("canonical normalization: unit norm, leading sign, scale invariance") {
  Rng rng(404);
  for (int trial = 0; trial < 30; ++trial) {
    const auto [a, b] = stereo_pair(rng);
    const Eigen::Matrix3d m = fundamental_matrix(a, b).matrix();
    CHECK(std::abs(m.norm() - 1.0) < 1e-14);
    // first entry above noise in row-major order is positive
    double first = 0.0;
    for (int r = 0; r < 3 && first == 0.0; ++r)
      for (int c = 0; c < 3 && first == 0.0; ++c)
        if (std::abs(m(r, c)) > 1e-12) first = m(r, c);
    CHECK(first > 0.0);
    // canonical form kills the input scale, including the sign
    const Eigen::Matrix3d rescaled = FundamentalMatrix::from_matrix(-3.25 * m).matrix();
    CHECK((rescaled - m).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("swap direction transposes the fundamental matrix") {
  Rng rng(505);
  for (int trial = 0; trial < 20; ++trial) {
    const auto [a, b] = stereo_pair(rng);
    const Eigen::Matrix3d fwd = fundamental_matrix(a, b).transposed().matrix();
    const Eigen::Matrix3d bwd = fundamental_matrix(b, a).matrix();
    CHECK((fwd - bwd).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("from_matrix rejects full-rank inputs") {
  Eigen::Matrix3d full = Eigen::Matrix3d::Identity();
  full(0, 1) = 0.25;
  CHECK_THROWS_AS(FundamentalMatrix::from_matrix(full), std::invalid_argument);
  CHECK_THROWS_AS(FundamentalMatrix::from_matrix(Eigen::Matrix3d::Zero()),
                  std::invalid_argument);
}

TEST_CASE("coincident cameras are rejected") {
  Rng rng(606);
  const CameraPose a = random_pose(rng);
  CHECK_THROWS_AS(fundamental_matrix(a, a), CoincidentCamerasError);

  // same center, different orientation: still no epipolar geometry
  CameraPose b = a;
  b.rotation = random_rotation(rng);
  b.translation = -b.rotation * a.camera_center();
  CHECK_THROWS_AS(fundamental_matrix(a, b), CoincidentCamerasError);
}

TEST_CASE("pure x translation: F form and horizontal epipolar lines") {
  const FundamentalMatrix f = translation_f();
  const Eigen::Matrix3d& m = f.matrix();
  const double s = 1.0 / std::sqrt(2.0);
  CHECK(m.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::abs(std::abs(m(1, 2)) - s) < 1e-15);
  CHECK(std::abs(std::abs(m(2, 1)) - s) < 1e-15);
  CHECK(m(1, 2) * m(2, 1) < 0.0);
  CHECK(std::abs(m(1, 1)) + std::abs(m(2, 2)) + std::abs(m(1, 0)) + std::abs(m(2, 0)) == 0.0);

  // the line of query (3,5) is v = 5: direction (0, +-1), v-intercept 5
  const EpipolarLine l = epipolar_line(f, 3.0, 5.0);
  CHECK(l.a == 0.0);
  CHECK(std::abs(l.b) == 1.0);
  CHECK(-l.c / l.b == 5.0);
  CHECK(l.distance_to(100.0, 5.0) == 0.0);
  CHECK(l.distance_to(0.0, 6.5) == doctest::Approx(1.5));
}

TEST_CASE("epipolar line passes through projected correspondences") {
  Rng rng(707);
  for (int trial = 0; trial < 40; ++trial) {
    const auto [a, b] = stereo_pair(rng);
    const FundamentalMatrix f = fundamental_matrix(a, b);
    const Eigen::Vector3d x = point_in_front(rng);
    if ((b.rotation * x + b.translation).z() < 0.5) continue;
    const Eigen::Vector2d pa = a.project(x);
    const Eigen::Vector2d pb = b.project(x);
    CHECK(epipolar_line(f, pa.x(), pa.y()).distance_to(pb.x(), pb.y()) < 1e-6);
  }
}

TEST_CASE("epipole query degenerates; epipole grid row is zeroed") {
  // F = B [e]_x has e = (3.5, 2.5, 1) as its right null vector, i.e. the
  // query (3.5, 2.5) is the epipole.
  const Eigen::Vector3d e(3.5, 2.5, 1.0);
  Eigen::Matrix3d ex;
  ex << 0, -e.z(), e.y(), e.z(), 0, -e.x(), -e.y(), e.x(), 0;
  Eigen::Matrix3d bmat;
  bmat << 1.0, 0.2, -0.1, 0.0, 1.3, 0.4, 0.2, -0.3, 1.1;
  const FundamentalMatrix f = FundamentalMatrix::from_matrix(bmat * ex);

  CHECK_THROWS_AS(epipolar_line(f, 3.5, 2.5), DegenerateLineError);

  // 8x8 grid over an 8x8 image: the cell centered at (3.5, 2.5) is query
  // row 2, column 3 -> q = 19. Its row must be all zero, without failing.
  const GridSize res{8, 8};
  const EpipolarMask mask = epipolar_mask(f, res, res, res, 3.0);
  for (int k = 0; k < mask.num_keys(); ++k) CHECK_FALSE(mask.bit(19, k));
  CHECK(mask.count_set() > 0);
}

TEST_CASE("epipolar mask is bit-identical to the brute-force oracle") {
  Rng rng(808);
  const GridSize grid{16, 16};
  const GridSize image{128, 128};
  for (int trial = 0; trial < 20; ++trial) {
    auto [a, b] = stereo_pair(rng);
    a.intrinsics.width = b.intrinsics.width = image.width;
    a.intrinsics.height = b.intrinsics.height = image.height;
    a.intrinsics.cx *= image.width / 640.0;
    b.intrinsics.cx *= image.width / 640.0;
    a.intrinsics.cy *= image.height / 480.0;
    b.intrinsics.cy *= image.height / 480.0;
    const FundamentalMatrix f = fundamental_matrix(a, b);
    const EpipolarMask mask = epipolar_mask(f, grid, grid, image, 3.0);
    CHECK(mask == brute_force_mask(f.matrix(), grid, grid, image, 3.0));
  }
}

TEST_CASE("translation F at 8x8 gives exact horizontal bands") {
  const EpipolarMask mask =
      epipolar_mask(translation_f(), {8, 8}, {8, 8}, {8, 8}, 3.0);
  for (int q = 0; q < 64; ++q)
    for (int k = 0; k < 64; ++k)
      CHECK(mask.bit(q, k) == (std::abs(q / 8 - k / 8) < 3));
}

TEST_CASE("saturating tau sets every bit") {
  const EpipolarMask mask =
      epipolar_mask(translation_f(), {8, 8}, {8, 8}, {8, 8}, 1e6);
  CHECK(mask.count_set() == 64u * 64u);
}

TEST_CASE("mask bits are monotone in tau") {
  Rng rng(909);
  const GridSize grid{12, 12};
  const GridSize image{96, 96};
  for (int trial = 0; trial < 10; ++trial) {
    const auto [a, b] = stereo_pair(rng);
    const FundamentalMatrix f = fundamental_matrix(a, b);
    const EpipolarMask narrow = epipolar_mask(f, grid, grid, image, 2.0);
    const EpipolarMask wide = epipolar_mask(f, grid, grid, image, 6.0);
    for (int q = 0; q < narrow.num_queries(); ++q)
      for (int k = 0; k < narrow.num_keys(); ++k)
        if (narrow.bit(q, k)) CHECK(wide.bit(q, k));
  }
}

TEST_CASE("mask is invariant under rescaling of the input matrix") {
  Rng rng(1010);
  const auto [a, b] = stereo_pair(rng);
  const Eigen::Matrix3d raw = fundamental_matrix(a, b).matrix();
  const GridSize grid{8, 8};
  const GridSize image{64, 64};
  const EpipolarMask base =
      epipolar_mask(FundamentalMatrix::from_matrix(raw), grid, grid, image, 3.0);
  for (double scale : {2.0, -7.5, 1e-3, 1e4}) {
    const EpipolarMask scaled = epipolar_mask(
        FundamentalMatrix::from_matrix(scale * raw), grid, grid, image, 3.0);
    CHECK(scaled == base);
  }
}

TEST_CASE("pseudo mask: diagonal always set, deterministic per seed") {
  const GridSize res{8, 8};
  for (std::uint64_t seed : {1ull, 2ull, 99ull, 12345ull}) {
    Rng rng(seed);
    const EpipolarMask mask = pseudo_epipolar_mask(res, 0.25, rng);
    for (int q = 0; q < mask.num_queries(); ++q) CHECK(mask.bit(q, q));
  }
  Rng r1(42), r2(42), r3(43);
  const EpipolarMask m1 = pseudo_epipolar_mask(res, 3.0, r1);
  const EpipolarMask m2 = pseudo_epipolar_mask(res, 3.0, r2);
  const EpipolarMask m3 = pseudo_epipolar_mask(res, 3.0, r3);
  CHECK(m1 == m2);
  CHECK(m1 != m3);
}

TEST_CASE("pseudo mask with zero slopes equals the translation-F mask") {
  for (int res : {8, 16}) {
    const GridSize g{res, res};
    const std::vector<double> zeros(static_cast<std::size_t>(res) * res, 0.0);
    const EpipolarMask pseudo = pseudo_epipolar_mask_from_angles(g, 3.0, zeros);
    const EpipolarMask epi = epipolar_mask(translation_f(res), g, g, g, 3.0);
    CHECK(pseudo == epi);
  }
}

TEST_CASE("mask PGM and CSV exports match hand-computed goldens") {
  // 2x2 grid, all slopes 0, tau 0.6: each query keeps exactly its own row.
  const EpipolarMask mask =
      pseudo_epipolar_mask_from_angles({2, 2}, 0.6, {0.0, 0.0, 0.0, 0.0});
  std::ostringstream pgm(std::ios::binary);
  mask.write_pgm(pgm);
  const char expected[] =
      "P5\n4 4\n255\n"
      "\xFF\xFF\x00\x00\xFF\xFF\x00\x00\x00\x00\xFF\xFF\x00\x00\xFF\xFF";
  CHECK(pgm.str() == std::string(expected, sizeof(expected) - 1));

  std::ostringstream csv;
  mask.write_csv(csv);
  CHECK(csv.str() ==
        "q_index,k_index\n0,0\n0,1\n1,0\n1,1\n2,2\n2,3\n3,2\n3,3\n");
}

TEST_CASE("mask accessors validate their ranges") {
  EpipolarMask mask({2, 2}, {2, 2}, 1.0);
  CHECK_THROWS_AS(mask.bit(4, 0), std::out_of_range);
  CHECK_THROWS_AS(mask.bit(0, -1), std::out_of_range);
  CHECK_THROWS_AS(EpipolarMask({0, 2}, {2, 2}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(EpipolarMask({2, 2}, {2, 2}, 0.0), std::invalid_argument);
}
