#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "collabdiff/rng.hpp"

namespace collabdiff::schedule {

/// Thrown when a score/noise conversion is requested at a step where
/// alpha_bar = 1 (the clean-data boundary, where the map is singular).
struct BoundaryStepError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class BetaStyle { kLinear, kScaledLinear };

/**
 * The cumulative noise schedule: per-step betas and the alpha_bar products
 * that parameterize the forward process q(v_t | v_0).
 *
 * alpha_bar is indexed 0..T with alpha_bar(0) = 1; construction enforces
 * strict monotone decrease, alpha_bar(t) in (0, 1], and a terminal value
 * alpha_bar(T) < 1e-2 so that v_T is statistically indistinguishable from
 * pure noise.
 */
class NoiseSchedule {
 public:
  NoiseSchedule(int total_steps, BetaStyle style, double beta_start, double beta_end);

  /// The scaled-linear schedule with beta in [8.5e-4, 1.2e-2] over T=1000 —
  /// the convention of the latent-diffusion model family this mirrors.
  static NoiseSchedule scaled_linear_default();

  int total_steps() const { return total_steps_; }
  BetaStyle style() const { return style_; }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }

  /// beta_t for t in [1, T].
  double beta(int t) const;
  /// alpha_bar_t for t in [0, T]; alpha_bar(0) == 1 exactly.
  double alpha_bar(int t) const;

  /// CSV dump `t,beta,alpha_bar` for rows t = 1..T (header included).
  void write_csv(std::ostream& out) const;

 private:
  int total_steps_;
  BetaStyle style_;
  double beta_start_, beta_end_;
  std::vector<double> beta_;       // beta_[t-1] = beta_t
  std::vector<double> alpha_bar_;  // alpha_bar_[t], t = 0..T
};

/**
 * The subsequence of schedule steps visited at inference, highest first,
 * plus the DDIM stochasticity knob eta in [0, 1].
 */
struct StepPlan {
  std::vector<int> timesteps;
  double eta = 0.0;

  /// `count` uniformly spaced steps {T, T-s, ..., T-(count-1)s}, s = T/count.
  static StepPlan uniform(const NoiseSchedule& s, int count, double eta = 0.0);

  void validate(const NoiseSchedule& s) const;
};

/// v_t = sqrt(alpha_bar_t) v0 + sqrt(1 - alpha_bar_t) eps, valid for t in [0, T].
Eigen::VectorXd forward_noise(const Eigen::VectorXd& v0, int t,
                              const Eigen::VectorXd& eps, const NoiseSchedule& s);

/**
 * One DDIM update from step t to step t_prev < t.
 *
 * Reconstructs v0_hat = (v_t - sqrt(1-ab_t) eps_pred) / sqrt(ab_t) and
 * re-noises it to level t_prev. With eta = 0 the update is deterministic;
 * with eta > 0 the standard DDIM variance sigma^2 is injected from `rng`
 * (one normal per coordinate; nothing is drawn when sigma == 0, e.g. on the
 * final jump to t_prev = 0).
 */
Eigen::VectorXd ddim_step(const Eigen::VectorXd& v_t, const Eigen::VectorXd& eps_pred,
                          int t, int t_prev, const NoiseSchedule& s,
                          double eta = 0.0, Rng* rng = nullptr);

/**
 * Climb from noise level t_from back up to t_to >= t_from:
 *   sqrt(ab_to/ab_from) v + sqrt(1 - ab_to/ab_from) eps',  eps' ~ N(0, I).
 * Transports the forward-process marginal at t_from exactly onto the one at
 * t_to. t_from == t_to returns v unchanged without consuming rng.
 */
Eigen::VectorXd renoise(const Eigen::VectorXd& v, int t_from, int t_to,
                        const NoiseSchedule& s, Rng& rng);

/// Adjacent-step renoise, level t-1 -> t.
Eigen::VectorXd renoise(const Eigen::VectorXd& v_prev, int t,
                        const NoiseSchedule& s, Rng& rng);

/// score = -eps / sqrt(1 - alpha_bar_t); throws BoundaryStepError at alpha_bar = 1.
Eigen::VectorXd score_from_noise(const Eigen::VectorXd& eps_pred, int t,
                                 const NoiseSchedule& s);

/// Inverse of score_from_noise.
Eigen::VectorXd noise_from_score(const Eigen::VectorXd& score, int t,
                                 const NoiseSchedule& s);

}  // namespace collabdiff::schedule
