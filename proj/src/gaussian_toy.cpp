#include "collabdiff/gaussian_toy.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace collabdiff::toy {

GaussianToyWorld::GaussianToyWorld(int num_videos, int video_dim, double rho)
    : num_videos_(num_videos), video_dim_(video_dim), rho_(rho) {
  if (num_videos < 2) throw std::invalid_argument("GaussianToyWorld: need M >= 2");
  if (video_dim < 1) throw std::invalid_argument("GaussianToyWorld: need d >= 1");
  if (!std::isfinite(rho)) throw std::invalid_argument("GaussianToyWorld: rho not finite");

  const int n = joint_dim();
  sigma_ = Eigen::MatrixXd::Identity(n, n);
  for (int bi = 0; bi < num_videos; ++bi)
    for (int bj = 0; bj < num_videos; ++bj)
      if (bi != bj)
        sigma_.block(bi * video_dim, bj * video_dim, video_dim, video_dim) =
            rho * Eigen::MatrixXd::Identity(video_dim, video_dim);

  chol_.compute(sigma_);
  if (chol_.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "GaussianToyWorld: covariance not positive definite (rho = " << rho
        << " outside (-1/(M-1), 1) for M = " << num_videos << ")";
    throw std::invalid_argument(msg.str());
  }
}

Eigen::MatrixXd GaussianToyWorld::pair_covariance() const {
  const int d = video_dim_;
  Eigen::MatrixXd c = Eigen::MatrixXd::Identity(2 * d, 2 * d);
  c.block(0, d, d, d) = rho_ * Eigen::MatrixXd::Identity(d, d);
  c.block(d, 0, d, d) = rho_ * Eigen::MatrixXd::Identity(d, d);
  return c;
}

Eigen::MatrixXd GaussianToyWorld::sample_reference(int n, Rng& rng) const {
  if (n < 1) throw std::invalid_argument("sample_reference: need n >= 1");
  const Eigen::MatrixXd l = chol_.matrixL();
  Eigen::MatrixXd out(n, joint_dim());
  Eigen::VectorXd z(joint_dim());
  for (int r = 0; r < n; ++r) {
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = rng.normal();
    out.row(r) = (l * z).transpose();
  }
  return out;
}

namespace {

Eigen::VectorXd exact_noise(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& v,
                            int t, const schedule::NoiseSchedule& s, const char* what) {
  if (v.size() != sigma.rows()) {
    std::ostringstream msg;
    msg << what << ": state has dimension " << v.size() << ", expected " << sigma.rows();
    throw std::invalid_argument(msg.str());
  }
  const double ab = s.alpha_bar(t);
  if (!(ab < 1.0))
    throw std::invalid_argument(std::string(what) + ": requires alpha_bar < 1 (t >= 1)");
  const Eigen::MatrixXd c_t =
      ab * sigma + (1.0 - ab) * Eigen::MatrixXd::Identity(sigma.rows(), sigma.cols());
  const Eigen::LLT<Eigen::MatrixXd> llt(c_t);
  if (llt.info() != Eigen::Success)
    throw std::logic_error(std::string(what) + ": noisy covariance not PD");
  return std::sqrt(1.0 - ab) * llt.solve(v);
}

}  // namespace

Eigen::VectorXd GaussianToyWorld::exact_pair_noise(int i, int j,
                                                   const Eigen::VectorXd& v_pair, int t,
                                                   const schedule::NoiseSchedule& s) const {
  if (i == j || i < 0 || j < 0 || i >= num_videos_ || j >= num_videos_)
    throw std::invalid_argument("exact_pair_noise: pair indices must be distinct videos");
  return exact_noise(pair_covariance(), v_pair, t, s, "exact_pair_noise");
}

Eigen::VectorXd GaussianToyWorld::exact_joint_noise(const Eigen::VectorXd& v_joint, int t,
                                                    const schedule::NoiseSchedule& s) const {
  return exact_noise(sigma_, v_joint, t, s, "exact_joint_noise");
}

void GaussianToyWorld::write_config(std::ostream& out) const {
  out << "videos=" << num_videos_ << "\n"
      << "dim=" << video_dim_ << "\n";
  std::ostringstream rho;
  rho.precision(17);
  rho << rho_;
  out << "rho=" << rho.str() << "\n";
}

GaussianToyWorld GaussianToyWorld::read_config(std::istream& in) {
  int m = -1, d = -1;
  double rho = 0.0;
  bool have_rho = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("GaussianToyWorld config: expected key=value lines");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "videos") m = std::stoi(value);
    else if (key == "dim") d = std::stoi(value);
    else if (key == "rho") { rho = std::stod(value); have_rho = true; }
    else throw std::invalid_argument("GaussianToyWorld config: unknown key '" + key + "'");
  }
  if (m < 0 || d < 0 || !have_rho)
    throw std::invalid_argument("GaussianToyWorld config: missing videos/dim/rho");
  return GaussianToyWorld(m, d, rho);
}

PairDenoiser::PairDenoiser(const GaussianToyWorld& world, int i, int j,
                           const schedule::NoiseSchedule& s,
                           const std::vector<int>& timesteps)
    : world_(&world), i_(i), j_(j) {
  if (i == j || i < 0 || j < 0 || i >= world.num_videos() || j >= world.num_videos())
    throw std::invalid_argument("PairDenoiser: pair indices must be distinct videos");
  const Eigen::MatrixXd sigma_pair = world.pair_covariance();
  const Eigen::MatrixXd id =
      Eigen::MatrixXd::Identity(sigma_pair.rows(), sigma_pair.cols());
  for (int t : timesteps) {
    if (factors_.count(t)) continue;
    const double ab = s.alpha_bar(t);
    if (!(ab < 1.0))
      throw std::invalid_argument("PairDenoiser: plan step with alpha_bar = 1");
    Eigen::LLT<Eigen::MatrixXd> llt(ab * sigma_pair + (1.0 - ab) * id);
    if (llt.info() != Eigen::Success)
      throw std::logic_error("PairDenoiser: noisy covariance not PD");
    factors_.emplace(t, std::move(llt));
    sqrt_one_minus_ab_.emplace(t, std::sqrt(1.0 - ab));
  }
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> PairDenoiser::operator()(
    const Eigen::VectorXd& v_i, const Eigen::VectorXd& v_j, int t) const {
  const int d = world_->video_dim();
  if (v_i.size() != d || v_j.size() != d)
    throw std::invalid_argument("PairDenoiser: state dimension mismatch");
  const auto it = factors_.find(t);
  if (it == factors_.end())
    throw std::invalid_argument("PairDenoiser: step t was not precomputed");
  Eigen::VectorXd v(2 * d);
  v.head(d) = v_i;
  v.tail(d) = v_j;
  const Eigen::VectorXd eps = sqrt_one_minus_ab_.at(t) * it->second.solve(v);
  return {eps.head(d), eps.tail(d)};
}

double covariance_error(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& target) {
  if (samples.rows() < 2)
    throw std::invalid_argument("covariance_error: need at least 2 samples");
  if (samples.cols() != target.rows() || target.rows() != target.cols())
    throw std::invalid_argument("covariance_error: dimension mismatch with target");
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const Eigen::MatrixXd centered = samples.rowwise() - mean;
  const Eigen::MatrixXd cov =
      (centered.transpose() * centered) / static_cast<double>(samples.rows());
  return (cov - target).norm() / target.norm();
}

}  // namespace collabdiff::toy
