#include <cmath>
#include <sstream>

#include "collabdiff/gaussian_toy.hpp"
#include "collabdiff/noise_schedule.hpp"
#include "collabdiff/rng.hpp"
#include "doctest.h"

using namespace collabdiff;
using namespace collabdiff::schedule;

namespace {

Eigen::VectorXd randn(int n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("default schedule invariants and independently recomputed endpoint") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear_default();
  CHECK(s.total_steps() == 1000);
  CHECK(s.alpha_bar(0) == 1.0);
  for (int t = 1; t <= 1000; ++t) {
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK(s.alpha_bar(t) > 0.0);
  }
  CHECK(s.alpha_bar(1000) < 1e-2);

  // independent recomputation of the whole product in extended precision
  const long double r0 = std::sqrt(8.5e-4L), r1 = std::sqrt(1.2e-2L);
  long double prod = 1.0L;
  for (int t = 1; t <= 1000; ++t) {
    const long double root = r0 + (t - 1) * (r1 - r0) / 999.0L;
    prod *= 1.0L - root * root;
    CHECK(std::abs(s.alpha_bar(t) - static_cast<double>(prod)) <
          1e-12 * static_cast<double>(prod));
  }
  CHECK(s.beta(1) == doctest::Approx(8.5e-4));
  CHECK(s.beta(1000) == doctest::Approx(1.2e-2));
}

TEST_CASE("linear style and invalid constructions") {
  const NoiseSchedule lin(1000, BetaStyle::kLinear, 8.5e-4, 1.2e-2);
  CHECK(lin.alpha_bar(1000) < 1e-2);
  // Scaled-linear interpolates sqrt(beta), and squaring that chord lands
  // below the straight-line beta (convexity), so scaled-linear destroys
  // signal more slowly and keeps a larger alpha_bar midway.
  const NoiseSchedule sc = NoiseSchedule::scaled_linear_default();
  CHECK(lin.alpha_bar(500) < sc.alpha_bar(500));

  CHECK_THROWS_AS(NoiseSchedule(0, BetaStyle::kLinear, 1e-4, 1e-2),
                  std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule(1000, BetaStyle::kLinear, 0.0, 1e-2),
                  std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule(1000, BetaStyle::kLinear, 1e-4, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(NoiseSchedule(1000, BetaStyle::kLinear, 1e-2, 1e-4),
                  std::invalid_argument);
  // too few steps: the terminal signal fraction stays above 1e-2
  CHECK_THROWS_AS(NoiseSchedule(10, BetaStyle::kScaledLinear, 8.5e-4, 1.2e-2),
                  std::invalid_argument);
}

TEST_CASE("alpha_bar and beta range checks") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear_default();
  CHECK_THROWS_AS(s.alpha_bar(-1), std::invalid_argument);
  CHECK_THROWS_AS(s.alpha_bar(1001), std::invalid_argument);
  CHECK_THROWS_AS(s.beta(0), std::invalid_argument);
  CHECK_THROWS_AS(s.beta(1001), std::invalid_argument);
}

TEST_CASE("forward_noise closed forms") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear_default();
  Rng rng(11);
  const Eigen::VectorXd v0 = randn(6, rng);
  const Eigen::VectorXd eps = randn(6, rng);

  const Eigen::VectorXd at_zero = forward_noise(v0, 0, eps, s);
  for (int i = 0; i < 6; ++i) CHECK(at_zero[i] == v0[i]);

  const int t = 613;
  const Eigen::VectorXd from_zero =
      forward_noise(Eigen::VectorXd::Zero(6), t, eps, s);
  for (int i = 0; i < 6; ++i)
    CHECK(from_zero[i] == doctest::Approx(std::sqrt(1.0 - s.alpha_bar(t)) * eps[i]));

  CHECK_THROWS_AS(forward_noise(v0, t, randn(5, rng), s), std::invalid_argument);
  CHECK_THROWS_AS(forward_noise(v0, 1001, eps, s), std::invalid_argument);
}

TEST_CASE("forward_noise Monte-Carlo moments") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear_default();
  const int t = 500, n = 100000;
  const double ab = s.alpha_bar(t);
  Eigen::VectorXd v0(1);
  v0 << 1.7;
  Rng rng(600);
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd eps(1);
    eps << rng.normal();
    const double x = forward_noise(v0, t, eps, s)[0];
    sum += x;
    sum_sq += x * x;
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  const double se_mean = std::sqrt((1.0 - ab) / n);
  const double se_var = (1.0 - ab) * std::sqrt(2.0 / n);
  CHECK(std::abs(mean - std::sqrt(ab) * 1.7) < 3.0 * se_mean);
  CHECK(std::abs(var - (1.0 - ab)) < 3.0 * se_var);
}

TEST_CASE("ddim_step inverts forward_noise when given the true noise") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear_default();
  Rng rng(21);
  for (int t : {40, 500, 1000}) {
    const Eigen::VectorXd v0 = randn(5, rng);
    const Eigen::VectorXd eps = randn(5, rng);
    const Eigen::VectorXd v_t = forward_noise(v0, t, eps, s);
    const Eigen::VectorXd rec = ddim_step(v_t, eps, t, 0, s);
    CHECK((rec - v0).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("ddim_step intermediate target matches the closed form") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear_default();
  Rng rng(22);
  const Eigen::VectorXd v_t = randn(4, rng);
  const Eigen::VectorXd eps = randn(4, rng);
  const int t = 800, t_prev = 440;
  const Eigen::VectorXd got = ddim_step(v_t, eps, t, t_prev, s);
  const double ab_t = s.alpha_bar(t), ab_p = s.alpha_bar(t_prev);
  const Eigen::VectorXd v0_hat = (v_t - std::sqrt(1.0 - ab_t) * eps) / std::sqrt(ab_t);
  const Eigen::VectorXd want = std::sqrt(ab_p) * v0_hat + std::sqrt(1.0 - ab_p) * eps;
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(ddim_step(v_t, eps, 440, 800, s), std::invalid_argument);
  CHECK_THROWS_AS(ddim_step(v_t, eps, 440, 440, s), std::invalid_argument);
  CHECK_THROWS_AS(ddim_step(v_t, eps, 0, 0, s), std::invalid_argument);
}

TEST_CASE("ddim_step with eta: determinism, no-draw at eta 0, noise scale") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear_default();
  Rng rng(23);
  const Eigen::VectorXd v_t = randn(2, rng);
  const Eigen::VectorXd eps = randn(2, rng);
  const int t = 700, t_prev = 300;

  Rng r1(9), r2(9);
  const Eigen::VectorXd a = ddim_step(v_t, eps, t, t_prev, s, 0.8, &r1);
  const Eigen::VectorXd b = ddim_step(v_t, eps, t, t_prev, s, 0.8, &r2);
  CHECK(a == b);

  // eta = 0 must not touch the stream even when one is supplied
  Rng r3(9), r4(9);
  (void)ddim_step(v_t, eps, t, t_prev, s, 0.0, &r3);
  CHECK(r3.uniform() == r4.uniform());

  CHECK_THROWS_AS(ddim_step(v_t, eps, t, t_prev, s, 0.8, nullptr),
                  std::invalid_argument);

  // empirical spread of the stochastic term matches the DDIM sigma
  const double ab_t = s.alpha_bar(t), ab_p = s.alpha_bar(t_prev);
  const double eta = 0.8;
  const double sigma = eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) *
                       std::sqrt(1.0 - ab_t / ab_p);
  const int n = 50000;
  Rng r5(77);
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = ddim_step(v_t, eps, t, t_prev, s, eta, &r5)[0];
    sum += x;
    sum_sq += x * x;
  }
  const double var = sum_sq / n - (sum / n) * (sum / n);
  CHECK(std::abs(std::sqrt(var) - sigma) < 0.02 * sigma);
  // and the deterministic part uses the reduced direction coefficient
  const Eigen::VectorXd v0_hat = (v_t - std::sqrt(1.0 - ab_t) * eps) / std::sqrt(ab_t);
  const double want_mean =
      std::sqrt(ab_p) * v0_hat[0] + std::sqrt(1.0 - ab_p - sigma * sigma) * eps[0];
  CHECK(std::abs(sum / n - want_mean) < 4.0 * sigma / std::sqrt(double(n)));
}

TEST_CASE("renoise: identity at equal levels, determinism, ordering") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear_default();
  Rng rng(31);
  const Eigen::VectorXd v = randn(3, rng);

  Rng r1(5), r2(5);
  const Eigen::VectorXd same = renoise(v, 400, 400, s, r1);
  CHECK(same == v);
  CHECK(r1.uniform() == r2.uniform());  // no draws consumed

  Rng r3(5), r4(5);
  CHECK(renoise(v, 399, 400, s, r3) == renoise(v, 399, 400, s, r4));

  Rng r5(5);
  CHECK_THROWS_AS(renoise(v, 400, 399, s, r5), std::invalid_argument);
  CHECK_THROWS_AS(renoise(v, 0, 1001, s, r5), std::invalid_argument);

  // adjacent-step overload agrees with the general form
  Rng r6(8), r7(8);
  CHECK(renoise(v, 624, s, r6) == renoise(v, 623, 624, s, r7));
}

TEST_CASE("renoise preserves the Gaussian marginal family") {
  // v_prev ~ N(0, (1-ab_prev) I + ab_prev Sigma) must renoise into
  // N(0, (1-ab_t) I + ab_t Sigma). This is the marginal-preservation half
  // of the Algorithm-1 reduction gate.
  const NoiseSchedule s = NoiseSchedule::scaled_linear_default();
  const int t_prev = 300, t = 520, n = 200000;
  const double ab_p = s.alpha_bar(t_prev), ab_t = s.alpha_bar(t);
  const double rho = 0.7;
  Eigen::Matrix2d sigma0;
  sigma0 << 1.0, rho, rho, 1.0;
  const Eigen::Matrix2d cov_prev =
      (1.0 - ab_p) * Eigen::Matrix2d::Identity() + ab_p * sigma0;
  const Eigen::Matrix2d cov_want =
      (1.0 - ab_t) * Eigen::Matrix2d::Identity() + ab_t * sigma0;
  const Eigen::Matrix2d l = cov_prev.llt().matrixL();

  Rng rng(4242);
  Eigen::Matrix2d acc = Eigen::Matrix2d::Zero();
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd v_prev = l * randn(2, rng);
    const Eigen::VectorXd v_t = renoise(v_prev, t_prev, t, s, rng);
    acc += v_t * v_t.transpose();
  }
  const Eigen::Matrix2d emp = acc / n;
  CHECK((emp - cov_want).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("score and noise conversions") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear_default();
  Rng rng(41);
  const Eigen::VectorXd eps = randn(4, rng);
  const int t = 333;

  CHECK(score_from_noise(Eigen::VectorXd::Zero(4), t, s).isZero(0.0));
  const Eigen::VectorXd round =
      noise_from_score(score_from_noise(eps, t, s), t, s);
  CHECK((round - eps).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(score_from_noise(eps, 0, s), BoundaryStepError);

  // Sigma = I world: the exact score of the noised marginal is -v_t
  const toy::GaussianToyWorld world(2, 2, 0.0);
  const Eigen::VectorXd v_t = randn(4, rng);
  const Eigen::VectorXd exact = world.exact_joint_noise(v_t, t, s);
  const Eigen::VectorXd score = score_from_noise(exact, t, s);
  CHECK((score + v_t).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("uniform step plan: trailing spacing and validation") {
  const NoiseSchedule s = NoiseSchedule::scaled_linear_default();
  const StepPlan plan = StepPlan::uniform(s, 25);
  REQUIRE(plan.timesteps.size() == 25);
  CHECK(plan.timesteps.front() == 1000);
  CHECK(plan.timesteps.back() == 40);
  for (std::size_t i = 1; i < plan.timesteps.size(); ++i)
    CHECK(plan.timesteps[i - 1] - plan.timesteps[i] == 40);
  CHECK(plan.eta == 0.0);
  CHECK_NOTHROW(plan.validate(s));

  const StepPlan one = StepPlan::uniform(s, 1);
  CHECK(one.timesteps == std::vector<int>{1000});
  const StepPlan full = StepPlan::uniform(s, 1000);
  CHECK(full.timesteps.front() == 1000);
  CHECK(full.timesteps.back() == 1);

  CHECK_THROWS_AS(StepPlan::uniform(s, 0), std::invalid_argument);
  CHECK_THROWS_AS(StepPlan::uniform(s, 1001), std::invalid_argument);
  CHECK_THROWS_AS(StepPlan::uniform(s, 25, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(StepPlan::uniform(s, 25, -0.1), std::invalid_argument);

  StepPlan bad;
  bad.timesteps = {};
  CHECK_THROWS_AS(bad.validate(s), std::invalid_argument);
  bad.timesteps = {100, 100};
  CHECK_THROWS_AS(bad.validate(s), std::invalid_argument);
  bad.timesteps = {1001};
  CHECK_THROWS_AS(bad.validate(s), std::invalid_argument);
}

TEST_CASE("schedule CSV round-trips every coefficient exactly") {
  const NoiseSchedule s(3, BetaStyle::kScaledLinear, 0.8, 0.9999);
  std::ostringstream out;
  s.write_csv(out);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,beta,alpha_bar");
  for (int t = 1; t <= 3; ++t) {
    std::string line;
    REQUIRE(std::getline(in, line));
    std::istringstream row(line);
    std::string tf, bf, af;
    std::getline(row, tf, ',');
    std::getline(row, bf, ',');
    std::getline(row, af, ',');
    CHECK(std::stoi(tf) == t);
    CHECK(std::stod(bf) == s.beta(t));      // 17 significant digits round-trip
    CHECK(std::stod(af) == s.alpha_bar(t));
  }
  std::string extra;
  CHECK_FALSE(std::getline(in, extra));
}
