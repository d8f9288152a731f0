#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "collabdiff/data_prep.hpp"

namespace collabdiff::cli {

/// Bad flag/config values: exit code 1. Anything else thrown while a command
/// runs (IO, parse, data problems) is a runtime error: exit code 2.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/**
 * Plain structured-text config: `key=value` lines, `#` comments and blank
 * lines skipped, unknown keys ignored by loaders (manifests carry
 * informational keys too). Every command's replay manifest uses this schema,
 * so `--config <manifest>` re-runs a command; explicit flags win over file
 * values.
 */
using KeyValues = std::map<std::string, std::string>;
KeyValues read_key_values(const std::filesystem::path& file);

struct CommonOptions {
  std::filesystem::path out_dir = ".";
  bool force = false;
  std::optional<std::uint64_t> seed;
};

struct MasksOptions {
  CommonOptions common;
  std::filesystem::path poses_a, poses_b;
  int image_width = 256, image_height = 256;
  int query_h = 16, query_w = 16;
  int key_h = 16, key_w = 16;
  double tau = 3.0;

  void apply(const KeyValues& kv);
};
/// Per-frame epipolar (or pseudo, for coincident cameras) masks as PGM+CSV,
/// plus a replay manifest labeling each frame's mode.
void cmd_masks(const MasksOptions& opt);

struct ToySampleOptions {
  CommonOptions common;
  int videos = 2, dim = 4;
  double rho = 0.6;
  std::optional<std::filesystem::path> world_config;  // overrides videos/dim/rho
  std::string strategy = "exhaustive";
  int partitions = 1;
  int recurrent_steps = 1;
  int steps = 25;
  double eta = 0.0;
  int runs = 1000;
  double weight_scale = 1.0;  // weight-condition violation hook
  std::vector<double> rho_sweep;
  bool plot = false;

  void apply(const KeyValues& kv);
};
/// n collaborative runs on the Gaussian toy world: samples CSV, a report
/// with the covariance error vs the analytic target and the equal-n
/// reference numbers, the first run's full manifest, and optionally a
/// rho-sweep table/plot.
void cmd_toy_sample(const ToySampleOptions& opt);

struct EpiErrorOptions {
  CommonOptions common;
  std::filesystem::path poses_a, poses_b, correspondences;
  int image_width = 256, image_height = 256;

  void apply(const KeyValues& kv);
};
/// Symmetric epipolar distance (mean of the point-to-line distances in both
/// directions) per frame and aggregate, as CSV.
void cmd_epi_error(const EpiErrorOptions& opt);

struct FoldOptions {
  CommonOptions common;
  std::filesystem::path frames_dir;
  std::optional<std::filesystem::path> poses;

  void apply(const KeyValues& kv);
};
/// Fold a (2N-1)-frame PNG directory (lexicographic order) into two N-frame
/// clips sharing the middle frame; frames are byte-copied; poses folded
/// alongside when given.
void cmd_fold(const FoldOptions& opt);

struct HomogOptions {
  CommonOptions common;
  std::filesystem::path frames_dir;
  dataprep::ControlScales scales;

  void apply(const KeyValues& kv);
};
/// Clone a clip and warp the clone by a homography family interpolated from
/// zero (frame 1) to sampled final controls (frame N); emits the source
/// copies, warped frames, validity masks and a replay manifest.
void cmd_homog(const HomogOptions& opt);

struct ScheduleDumpOptions {
  CommonOptions common;
  int total_steps = 1000;
  std::string style = "scaled_linear";
  double beta_start = 8.5e-4;
  double beta_end = 1.2e-2;

  void apply(const KeyValues& kv);
};
/// `t,beta,alpha_bar` CSV of the configured schedule.
void cmd_schedule_dump(const ScheduleDumpOptions& opt);

}  // namespace collabdiff::cli
