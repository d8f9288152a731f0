#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <map>
#include <utility>

#include "collabdiff/noise_schedule.hpp"
#include "collabdiff/rng.hpp"

namespace collabdiff::toy {

/**
 * Analytic Gaussian world of M coupled "videos", each a d-vector, jointly
 * N(0, Sigma) with the equicorrelated block covariance
 *   Sigma_ii = I_d,  Sigma_ij = rho I_d  (i != j).
 * Positive definite iff rho in (-1/(M-1), 1); checked by factorization at
 * construction. Every pair marginal shares one 2d x 2d covariance, and the
 * noisy marginals C_t = ab_t Sigma + (1 - ab_t) I are available in closed
 * form, so the world provides *exact* joint and pairwise noise predictions —
 * the ground-truth oracle for collaborative sampling.
 */
class GaussianToyWorld {
 public:
  GaussianToyWorld(int num_videos, int video_dim, double rho);

  int num_videos() const { return num_videos_; }
  int video_dim() const { return video_dim_; }
  int joint_dim() const { return num_videos_ * video_dim_; }
  double rho() const { return rho_; }

  const Eigen::MatrixXd& covariance() const { return sigma_; }
  /// The (identical) 2d x 2d covariance of any pair marginal.
  Eigen::MatrixXd pair_covariance() const;

  /// n exact draws from N(0, Sigma), one per row.
  Eigen::MatrixXd sample_reference(int n, Rng& rng) const;

  /**
   * Exact pairwise noise prediction for videos (i, j), 0-based:
   * with C_t = ab_t Sigma_pair + (1 - ab_t) I, the score of the noisy pair
   * marginal is -C_t^{-1} v, and eps = sqrt(1 - ab_t) C_t^{-1} v.
   * Requires ab_t < 1 (t >= 1).
   */
  Eigen::VectorXd exact_pair_noise(int i, int j, const Eigen::VectorXd& v_pair, int t,
                                   const schedule::NoiseSchedule& s) const;

  /// Exact joint noise prediction over all M videos (same formula, full Sigma).
  Eigen::VectorXd exact_joint_noise(const Eigen::VectorXd& v_joint, int t,
                                    const schedule::NoiseSchedule& s) const;

  /// Plain-text config (`videos=`, `dim=`, `rho=` lines).
  void write_config(std::ostream& out) const;
  static GaussianToyWorld read_config(std::istream& in);

 private:
  int num_videos_, video_dim_;
  double rho_;
  Eigen::MatrixXd sigma_;
  Eigen::LLT<Eigen::MatrixXd> chol_;
};

/**
 * The sampler-facing adapter: exact pairwise denoiser for one pair with the
 * C_t^{-1} factorizations precomputed for every step of a plan. Immutable
 * and safely shareable across threads after construction.
 */
class PairDenoiser {
 public:
  PairDenoiser(const GaussianToyWorld& world, int i, int j,
               const schedule::NoiseSchedule& s, const std::vector<int>& timesteps);

  int i() const { return i_; }
  int j() const { return j_; }

  /// (eps_i, eps_j) for the pair state at plan step t.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> operator()(const Eigen::VectorXd& v_i,
                                                         const Eigen::VectorXd& v_j,
                                                         int t) const;

 private:
  const GaussianToyWorld* world_;
  int i_, j_;
  std::map<int, Eigen::LLT<Eigen::MatrixXd>> factors_;  // t -> chol(C_t)
  std::map<int, double> sqrt_one_minus_ab_;
};

/**
 * Relative Frobenius error of the empirical covariance of `samples` (rows)
 * against `target`. The empirical covariance is mean-centered with 1/n
 * normalization, so duplicating the sample set leaves the statistic exactly
 * unchanged. Requires n >= 2.
 */
double covariance_error(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& target);

}  // namespace collabdiff::toy
