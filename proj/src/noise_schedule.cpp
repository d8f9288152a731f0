#include "collabdiff/noise_schedule.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

namespace collabdiff::schedule {

namespace {

void require_same_size(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                       const char* what) {
  if (a.size() != b.size()) {
    std::ostringstream msg;
    msg << what << ": shape mismatch (" << a.size() << " vs " << b.size() << ")";
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace

NoiseSchedule::NoiseSchedule(int total_steps, BetaStyle style, double beta_start,
                             double beta_end)
    : total_steps_(total_steps),
      style_(style),
      beta_start_(beta_start),
      beta_end_(beta_end) {
  if (total_steps < 1) throw std::invalid_argument("NoiseSchedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || !(beta_start <= beta_end)) {
    throw std::invalid_argument("NoiseSchedule: need 0 < beta_start <= beta_end < 1");
  }

  beta_.resize(total_steps);
  alpha_bar_.resize(total_steps + 1);
  alpha_bar_[0] = 1.0;
  const double sqrt_start = std::sqrt(beta_start);
  const double sqrt_end = std::sqrt(beta_end);
  for (int t = 1; t <= total_steps; ++t) {
    const double frac =
        total_steps == 1 ? 0.0 : static_cast<double>(t - 1) / (total_steps - 1);
    double b;
    if (style == BetaStyle::kLinear) {
      b = beta_start + frac * (beta_end - beta_start);
    } else {
      const double r = sqrt_start + frac * (sqrt_end - sqrt_start);
      b = r * r;
    }
    beta_[t - 1] = b;
    alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - b);
  }

  for (int t = 1; t <= total_steps; ++t) {
    if (!(alpha_bar_[t] > 0.0) || !(alpha_bar_[t] < alpha_bar_[t - 1])) {
      throw std::invalid_argument(
          "NoiseSchedule: alpha_bar must stay in (0, 1] and strictly decrease");
    }
  }
  if (!(alpha_bar_[total_steps] < 1e-2)) {
    std::ostringstream msg;
    msg << "NoiseSchedule: terminal alpha_bar = " << alpha_bar_[total_steps]
        << " >= 1e-2; the schedule does not reach the noise prior";
    throw std::invalid_argument(msg.str());
  }
}

NoiseSchedule NoiseSchedule::scaled_linear_default() {
  return NoiseSchedule(1000, BetaStyle::kScaledLinear, 8.5e-4, 1.2e-2);
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > total_steps_)
    throw std::invalid_argument("NoiseSchedule::beta: t out of range [1, T]");
  return beta_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > total_steps_)
    throw std::invalid_argument("NoiseSchedule::alpha_bar: t out of range [0, T]");
  return alpha_bar_[t];
}

void NoiseSchedule::write_csv(std::ostream& out) const {
  out << "t,beta,alpha_bar\n";
  std::ostringstream row;
  row.precision(17);
  for (int t = 1; t <= total_steps_; ++t) {
    row.str("");
    row << t << ',' << beta_[t - 1] << ',' << alpha_bar_[t] << '\n';
    out << row.str();
  }
}

StepPlan StepPlan::uniform(const NoiseSchedule& s, int count, double eta) {
  if (count < 1) throw std::invalid_argument("StepPlan::uniform: count must be >= 1");
  if (count > s.total_steps())
    throw std::invalid_argument("StepPlan::uniform: count exceeds schedule length");
  const int stride = s.total_steps() / count;
  StepPlan plan;
  plan.eta = eta;
  plan.timesteps.reserve(count);
  for (int i = 0; i < count; ++i) plan.timesteps.push_back(s.total_steps() - i * stride);
  plan.validate(s);
  return plan;
}

void StepPlan::validate(const NoiseSchedule& s) const {
  if (timesteps.empty()) throw std::invalid_argument("StepPlan: empty timestep list");
  if (!(eta >= 0.0) || !(eta <= 1.0))
    throw std::invalid_argument("StepPlan: eta must lie in [0, 1]");
  int prev = s.total_steps() + 1;
  for (int t : timesteps) {
    if (t < 1 || t > s.total_steps())
      throw std::invalid_argument("StepPlan: timestep out of range [1, T]");
    if (t >= prev)
      throw std::invalid_argument("StepPlan: timesteps must strictly decrease");
    prev = t;
  }
}

Eigen::VectorXd forward_noise(const Eigen::VectorXd& v0, int t,
                              const Eigen::VectorXd& eps, const NoiseSchedule& s) {
  require_same_size(v0, eps, "forward_noise");
  const double ab = s.alpha_bar(t);
  return std::sqrt(ab) * v0 + std::sqrt(1.0 - ab) * eps;
}

Eigen::VectorXd ddim_step(const Eigen::VectorXd& v_t, const Eigen::VectorXd& eps_pred,
                          int t, int t_prev, const NoiseSchedule& s, double eta,
                          Rng* rng) {
  require_same_size(v_t, eps_pred, "ddim_step");
  if (!(t > t_prev) || t_prev < 0 || t > s.total_steps())
    throw std::invalid_argument("ddim_step: need T >= t > t_prev >= 0");
  const double ab_t = s.alpha_bar(t);
  const double ab_p = s.alpha_bar(t_prev);

  const Eigen::VectorXd v0_hat =
      (v_t - std::sqrt(1.0 - ab_t) * eps_pred) / std::sqrt(ab_t);
  if (eta == 0.0) {
    return std::sqrt(ab_p) * v0_hat + std::sqrt(1.0 - ab_p) * eps_pred;
  }

  const double sigma = eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) *
                       std::sqrt(1.0 - ab_t / ab_p);
  const double dir = std::sqrt(std::max(1.0 - ab_p - sigma * sigma, 0.0));
  Eigen::VectorXd out = std::sqrt(ab_p) * v0_hat + dir * eps_pred;
  if (sigma > 0.0) {
    if (rng == nullptr)
      throw std::invalid_argument("ddim_step: eta > 0 requires an rng");
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += sigma * rng->normal();
  }
  return out;
}

Eigen::VectorXd renoise(const Eigen::VectorXd& v, int t_from, int t_to,
                        const NoiseSchedule& s, Rng& rng) {
  const double ab_from = s.alpha_bar(t_from);
  const double ab_to = s.alpha_bar(t_to);
  if (t_to < t_from)
    throw std::invalid_argument("renoise: schedule ordering violation (t_to < t_from)");
  if (t_to == t_from) return v;
  const double ratio = ab_to / ab_from;
  const double keep = std::sqrt(ratio);
  const double mix = std::sqrt(1.0 - ratio);
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = keep * v[i] + mix * rng.normal();
  return out;
}

Eigen::VectorXd renoise(const Eigen::VectorXd& v_prev, int t, const NoiseSchedule& s,
                        Rng& rng) {
  if (t < 1) throw std::invalid_argument("renoise: t must be >= 1");
  return renoise(v_prev, t - 1, t, s, rng);
}

Eigen::VectorXd score_from_noise(const Eigen::VectorXd& eps_pred, int t,
                                 const NoiseSchedule& s) {
  const double ab = s.alpha_bar(t);
  if (ab >= 1.0)
    throw BoundaryStepError("score_from_noise: alpha_bar = 1 at the requested step");
  return -eps_pred / std::sqrt(1.0 - ab);
}

Eigen::VectorXd noise_from_score(const Eigen::VectorXd& score, int t,
                                 const NoiseSchedule& s) {
  const double ab = s.alpha_bar(t);
  if (ab >= 1.0)
    throw BoundaryStepError("noise_from_score: alpha_bar = 1 at the requested step");
  return -score * std::sqrt(1.0 - ab);
}

}  // namespace collabdiff::schedule
