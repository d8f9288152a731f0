#include "collabdiff/data_prep.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace collabdiff::dataprep {

MalformedLineError::MalformedLineError(int line_no, const std::string& reason)
    : std::runtime_error("line " + std::to_string(line_no) + ": " + reason),
      line_no(line_no) {}

geometry::CameraPose PoseFileRecord::to_camera_pose(int width, int height) const {
  geometry::CameraPose pose;
  pose.rotation = extrinsic.leftCols<3>();
  pose.translation = extrinsic.col(3);
  pose.intrinsics.fx = fx * width;
  pose.intrinsics.fy = fy * height;
  pose.intrinsics.cx = cx * width;
  pose.intrinsics.cy = cy * height;
  pose.intrinsics.width = width;
  pose.intrinsics.height = height;
  return pose;
}

namespace {

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> tokens;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  return tokens;
}

bool parse_i64(const std::string& tok, std::int64_t& out) {
  std::size_t used = 0;
  try {
    out = std::stoll(tok, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == tok.size();
}

bool parse_f64(const std::string& tok, double& out) {
  std::size_t used = 0;
  try {
    out = std::stod(tok, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == tok.size();
}

}  // namespace

std::vector<PoseFileRecord> parse_pose_file(std::istream& in) {
  std::vector<PoseFileRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = tokenize(line);
    if (tokens.empty()) continue;

    std::int64_t timestamp = 0;
    if (!parse_i64(tokens[0], timestamp)) continue;  // header / URL line

    if (tokens.size() != 19) {
      std::ostringstream reason;
      reason << "expected 19 fields, got " << tokens.size();
      throw MalformedLineError(line_no, reason.str());
    }

    double fields[18];
    for (int i = 0; i < 18; ++i) {
      if (!parse_f64(tokens[i + 1], fields[i]))
        throw MalformedLineError(line_no, "field " + std::to_string(i + 2) +
                                              " is not numeric: '" + tokens[i + 1] + "'");
      if (!std::isfinite(fields[i]))
        throw MalformedLineError(line_no,
                                 "field " + std::to_string(i + 2) + " is not finite");
    }

    PoseFileRecord rec;
    rec.timestamp_us = timestamp;
    rec.fx = fields[0];
    rec.fy = fields[1];
    rec.cx = fields[2];
    rec.cy = fields[3];
    // fields[4], fields[5] are the format's reserved zeros.
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) rec.extrinsic(r, c) = fields[6 + 4 * r + c];

    const Eigen::Matrix3d rot = rec.extrinsic.leftCols<3>();
    if (((rot.transpose() * rot) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() >
        1e-4)
      throw MalformedLineError(line_no, "rotation part is not orthonormal (1e-4)");

    records.push_back(rec);
  }
  return records;
}

void write_pose_file(std::ostream& out, const std::vector<PoseFileRecord>& records) {
  std::ostringstream line;
  line.precision(17);
  for (const PoseFileRecord& rec : records) {
    line.str("");
    line << rec.timestamp_us << ' ' << rec.fx << ' ' << rec.fy << ' ' << rec.cx << ' '
         << rec.cy << " 0 0";
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) line << ' ' << rec.extrinsic(r, c);
    line << '\n';
    out << line.str();
  }
}

FoldedClipPair fold_sequence(int frame_count) {
  if (frame_count < 3 || frame_count % 2 == 0)
    throw std::invalid_argument("fold_sequence: frame count must be odd and >= 3");
  const int n = (frame_count + 1) / 2;
  const int mid = n - 1;
  FoldedClipPair fold;
  fold.clip_a.reserve(n);
  fold.clip_b.reserve(n);
  for (int i = mid; i >= 0; --i) fold.clip_a.push_back(i);
  for (int i = mid; i < frame_count; ++i) fold.clip_b.push_back(i);
  return fold;
}

Eigen::Matrix3d build_homography(const HomographyControls& c) {
  Eigen::Matrix3d h_t, h_r, h_s, h_sh, h_p;
  h_t << 1, 0, c.t0, 0, 1, c.t1, 0, 0, 1;
  h_r << std::cos(c.theta), -std::sin(c.theta), 0, std::sin(c.theta),
      std::cos(c.theta), 0, 0, 0, 1;
  h_s << 1.0 + c.s0, 0, 0, 0, 1.0 + c.s1, 0, 0, 0, 1;
  h_sh << 1, c.sh0, 0, c.sh1, 1, 0, 0, 0, 1;
  h_p << 1, 0, 0, 0, 1, 0, c.p0, c.p1, 1;
  const Eigen::Matrix3d h = h_t * (h_r * (h_s * (h_sh * h_p)));
  if (std::abs(h.determinant()) < 1e-12)
    throw std::invalid_argument("build_homography: singular homography");
  return h;
}

HomographyControls interpolate_controls(const HomographyControls& c_final, int k, int n) {
  if (n < 2) throw std::invalid_argument("interpolate_controls: need N >= 2");
  if (k < 1 || k > n)
    throw std::invalid_argument("interpolate_controls: frame index out of 1..N");
  const double a = static_cast<double>(k - 1) / (n - 1);
  HomographyControls c;
  c.t0 = a * c_final.t0;
  c.t1 = a * c_final.t1;
  c.theta = a * c_final.theta;
  c.s0 = a * c_final.s0;
  c.s1 = a * c_final.s1;
  c.sh0 = a * c_final.sh0;
  c.sh1 = a * c_final.sh1;
  c.p0 = a * c_final.p0;
  c.p1 = a * c_final.p1;
  return c;
}

namespace {

/// Inverse-map output pixel (x, y); false when the source sample falls
/// outside [0, w-1] x [0, h-1] (or behind the horizon line).
bool inverse_map(const Eigen::Matrix3d& h_inv, double x, double y, int width,
                 int height, double& sx, double& sy) {
  const Eigen::Vector3d src = h_inv * Eigen::Vector3d(x, y, 1.0);
  if (!(std::abs(src.z()) > 1e-12) || !src.allFinite()) return false;
  sx = src.x() / src.z();
  sy = src.y() / src.z();
  return sx >= 0.0 && sx <= width - 1.0 && sy >= 0.0 && sy <= height - 1.0;
}

}  // namespace

WarpResult warp_frame(const img::Image& image, const Eigen::Matrix3d& h) {
  if (image.height < 1 || image.width < 1)
    throw std::invalid_argument("warp_frame: empty image");
  if (std::abs(h.determinant()) < 1e-12)
    throw std::invalid_argument("warp_frame: singular homography");
  const Eigen::Matrix3d h_inv = h.inverse();

  WarpResult result{img::Image(image.height, image.width, image.channels),
                    img::Image(image.height, image.width, 1)};
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      double sx, sy;
      if (!inverse_map(h_inv, x, y, image.width, image.height, sx, sy)) continue;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const int x1 = x0 + 1 < image.width ? x0 + 1 : x0;
      const int y1 = y0 + 1 < image.height ? y0 + 1 : y0;
      const double wx = sx - x0;
      const double wy = sy - y0;
      for (int c = 0; c < image.channels; ++c) {
        const double v00 = image.at(y0, x0, c);
        const double v01 = image.at(y0, x1, c);
        const double v10 = image.at(y1, x0, c);
        const double v11 = image.at(y1, x1, c);
        const double v = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) +
                         wy * ((1.0 - wx) * v10 + wx * v11);
        result.image.at(y, x, c) = static_cast<float>(v);
      }
      result.validity.at(y, x, 0) = 1.0f;
    }
  }
  return result;
}

double warp_validity_fraction(const Eigen::Matrix3d& h, int width, int height) {
  if (width < 1 || height < 1)
    throw std::invalid_argument("warp_validity_fraction: empty frame");
  const Eigen::Matrix3d h_inv = h.inverse();
  std::size_t valid = 0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double sx, sy;
      if (inverse_map(h_inv, x, y, width, height, sx, sy)) ++valid;
    }
  }
  return static_cast<double>(valid) / (static_cast<double>(width) * height);
}

HomographyControls sample_controls(Rng& rng, const ControlScales& scales, int width,
                                   int height) {
  if (!(scales.t >= 0.0) || !(scales.theta >= 0.0) || !(scales.s >= 0.0) ||
      !(scales.sh >= 0.0) || !(scales.p >= 0.0))
    throw std::invalid_argument("sample_controls: scales must be nonnegative");
  for (int attempt = 0; attempt < 100; ++attempt) {
    HomographyControls c;
    c.t0 = scales.t * rng.normal();
    c.t1 = scales.t * rng.normal();
    c.theta = scales.theta * rng.normal();
    c.s0 = scales.s * rng.normal();
    c.s1 = scales.s * rng.normal();
    c.sh0 = scales.sh * rng.normal();
    c.sh1 = scales.sh * rng.normal();
    c.p0 = scales.p * rng.normal();
    c.p1 = scales.p * rng.normal();
    Eigen::Matrix3d h;
    try {
      h = build_homography(c);
    } catch (const std::invalid_argument&) {
      continue;
    }
    if (warp_validity_fraction(h, width, height) >= 0.5) return c;
  }
  throw std::runtime_error("sample_controls: no acceptable controls in 100 tries");
}

}  // namespace collabdiff::dataprep
