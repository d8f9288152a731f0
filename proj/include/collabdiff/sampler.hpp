#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <utility>
#include <vector>

#include "collabdiff/noise_schedule.hpp"
#include "collabdiff/rng.hpp"

namespace collabdiff::sampler {

/// Thrown by aggregation when a video appears in no pair slot.
struct UncoveredVideoError : std::runtime_error {
  UncoveredVideoError(int video, const std::string& msg)
      : std::runtime_error(msg), video(video) {}
  int video;
};

enum class Strategy { kExhaustive, kPartitioning, kMultiPartitioning };

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

/**
 * One round of pair selection: an ordered list of pair slots (i, j), i < j,
 * 0-based video indices, plus the per-video slot counts c_k that define the
 * aggregation weights w_k = 1/c_k.
 */
struct PairSelection {
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> per_video_count;

  bool all_covered() const;
};

/**
 * Emit pair slots for one denoising iteration.
 *
 *  - Exhaustive: all M(M-1)/2 unordered pairs, (i<j) lexicographic; does not
 *    consume rng.
 *  - Partitioning: a uniformly random perfect matching (Fisher-Yates shuffle
 *    consumed in pairs); for odd M the leftover video is paired with a
 *    uniformly random other video, so that partner carries c_k = 2.
 *  - MultiPartitioning: `partitions` independent partitionings concatenated,
 *    duplicate slots retained.
 */
PairSelection select_pairs(Strategy strategy, int num_videos, int partitions, Rng& rng);

/**
 * Per-video noise aggregation: eps_out^k = (weight_scale / c_k) * sum of the
 * k-entries over the slots containing k, accumulated in slot order (fixed
 * floating-point result). weight_scale = 1 is the compliant sum-of-weights-1
 * setting; other values are the test hook for the weight-condition violation
 * (the output scales exactly linearly).
 */
std::vector<Eigen::VectorXd> aggregate_noise(
    const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& predictions,
    const PairSelection& selection, int num_videos, double weight_scale = 1.0);

/// Pairwise denoiser: (i, j, v_i, v_j, t) -> (eps_i, eps_j). The (i, j)
/// indices stand in for the per-pair condition (e.g. the camera pair).
using PairDenoiserFn = std::function<std::pair<Eigen::VectorXd, Eigen::VectorXd>(
    int i, int j, const Eigen::VectorXd& v_i, const Eigen::VectorXd& v_j, int t)>;

struct SamplerConfig {
  int num_videos = 2;
  int video_dim = 1;
  Strategy strategy = Strategy::kExhaustive;
  int partitions = 1;       // Q, MultiPartitioning only
  int recurrent_steps = 1;  // R
  schedule::StepPlan plan;
  std::uint64_t seed = 0;
  double weight_scale = 1.0;  // test hook, see aggregate_noise

  void validate(const schedule::NoiseSchedule& s) const;

  /// The multi-view settings the method ships with: R=4, Q=1 (Partitioning)
  /// at 4 views; R=6, Q=2 (MultiPartitioning) at 6 views; R=1 Exhaustive for
  /// a plain pair. Other M interpolate (R=M, Q=ceil(M/4), partitioning).
  static SamplerConfig recommended(int num_videos, int video_dim,
                                   const schedule::StepPlan& plan, std::uint64_t seed);
};

/// Everything needed to replay / audit one run: the selections actually used
/// at each (timestep, recurrent iteration), in execution order.
struct RunRecord {
  struct IterationRecord {
    int timestep = 0;
    int recurrent_index = 0;
    PairSelection selection;
  };
  std::vector<IterationRecord> iterations;
};

/**
 * Algorithm: start from v_T ~ N(0, I) per video (drawn from `rng`,
 * video-major), then for each plan timestep t (descending, t_prev the next
 * plan entry or 0) run R recurrent iterations: select pairs (re-selected
 * every iteration; Exhaustive consumes no rng), evaluate the denoiser on
 * every slot, aggregate per video, ddim_step every video to t_prev, and for
 * all but the last iteration renoise back to t. Returns the M videos at t=0.
 *
 * rng consumption order per iteration: selection draws, then ddim noise per
 * video in index order (only when plan.eta > 0), then renoise per video in
 * index order. Fixed (config, seed, denoiser) gives bit-identical output.
 */
std::vector<Eigen::VectorXd> run(const SamplerConfig& config,
                                 const schedule::NoiseSchedule& s,
                                 const PairDenoiserFn& denoiser, Rng& rng,
                                 RunRecord* record = nullptr);

/// Structured-text manifest of one run: the config as key=value lines, then
/// one `iteration` line per (timestep, r) listing the pair slots in order.
void write_run_manifest(std::ostream& out, const SamplerConfig& config,
                        const RunRecord& record);

}  // namespace collabdiff::sampler
