#include "collabdiff/sampler.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <sstream>

namespace collabdiff::sampler {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kExhaustive: return "exhaustive";
    case Strategy::kPartitioning: return "partitioning";
    case Strategy::kMultiPartitioning: return "multipartitioning";
  }
  throw std::logic_error("strategy_name: unknown strategy");
}

Strategy strategy_from_name(const std::string& name) {
  if (name == "exhaustive") return Strategy::kExhaustive;
  if (name == "partitioning") return Strategy::kPartitioning;
  if (name == "multipartitioning") return Strategy::kMultiPartitioning;
  throw std::invalid_argument("unknown strategy '" + name + "'");
}

bool PairSelection::all_covered() const {
  return std::all_of(per_video_count.begin(), per_video_count.end(),
                     [](int c) { return c > 0; });
}

namespace {

void append_pair(PairSelection& sel, int i, int j) {
  if (i > j) std::swap(i, j);
  sel.pairs.emplace_back(i, j);
  ++sel.per_video_count[i];
  ++sel.per_video_count[j];
}

void append_partitioning(PairSelection& sel, int m, Rng& rng) {
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  for (int k = 0; k + 1 < m; k += 2) append_pair(sel, order[k], order[k + 1]);
  if (m % 2 == 1) {
    // The leftover video joins a uniformly random other video as an extra
    // slot; that partner ends up with c_k = 2.
    const int leftover = order[m - 1];
    int partner = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(m - 1)));
    if (partner >= leftover) ++partner;
    append_pair(sel, leftover, partner);
  }
}

}  // namespace

PairSelection select_pairs(Strategy strategy, int num_videos, int partitions, Rng& rng) {
  if (num_videos < 2) throw std::invalid_argument("select_pairs: need M >= 2");
  PairSelection sel;
  sel.per_video_count.assign(num_videos, 0);
  switch (strategy) {
    case Strategy::kExhaustive:
      for (int i = 0; i < num_videos; ++i)
        for (int j = i + 1; j < num_videos; ++j) append_pair(sel, i, j);
      break;
    case Strategy::kPartitioning:
      append_partitioning(sel, num_videos, rng);
      break;
    case Strategy::kMultiPartitioning:
      if (partitions < 1)
        throw std::invalid_argument("select_pairs: MultiPartitioning needs Q >= 1");
      for (int q = 0; q < partitions; ++q) append_partitioning(sel, num_videos, rng);
      break;
  }
  return sel;
}

std::vector<Eigen::VectorXd> aggregate_noise(
    const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& predictions,
    const PairSelection& selection, int num_videos, double weight_scale) {
  if (predictions.size() != selection.pairs.size())
    throw std::invalid_argument("aggregate_noise: predictions misaligned with slots");
  if (static_cast<int>(selection.per_video_count.size()) != num_videos)
    throw std::invalid_argument("aggregate_noise: selection sized for a different M");
  for (int k = 0; k < num_videos; ++k) {
    if (selection.per_video_count[k] == 0) {
      std::ostringstream msg;
      msg << "aggregate_noise: video " << k << " is covered by no pair slot";
      throw UncoveredVideoError(k, msg.str());
    }
  }

  std::vector<Eigen::VectorXd> acc(num_videos);
  for (std::size_t slot = 0; slot < selection.pairs.size(); ++slot) {
    const auto [i, j] = selection.pairs[slot];
    const auto& [eps_i, eps_j] = predictions[slot];
    if (acc[i].size() == 0) acc[i] = eps_i; else acc[i] += eps_i;
    if (acc[j].size() == 0) acc[j] = eps_j; else acc[j] += eps_j;
  }
  for (int k = 0; k < num_videos; ++k)
    acc[k] *= weight_scale / selection.per_video_count[k];
  return acc;
}

void SamplerConfig::validate(const schedule::NoiseSchedule& s) const {
  if (num_videos < 2) throw std::invalid_argument("SamplerConfig: need M >= 2");
  if (video_dim < 1) throw std::invalid_argument("SamplerConfig: need video_dim >= 1");
  if (recurrent_steps < 1) throw std::invalid_argument("SamplerConfig: need R >= 1");
  if (strategy == Strategy::kMultiPartitioning && partitions < 1)
    throw std::invalid_argument("SamplerConfig: MultiPartitioning needs Q >= 1");
  plan.validate(s);
}

SamplerConfig SamplerConfig::recommended(int num_videos, int video_dim,
                                         const schedule::StepPlan& plan,
                                         std::uint64_t seed) {
  SamplerConfig cfg;
  cfg.num_videos = num_videos;
  cfg.video_dim = video_dim;
  cfg.plan = plan;
  cfg.seed = seed;
  if (num_videos <= 2) {
    cfg.strategy = Strategy::kExhaustive;
    cfg.recurrent_steps = 1;
    cfg.partitions = 1;
  } else {
    cfg.recurrent_steps = num_videos;
    cfg.partitions = (num_videos + 3) / 4;
    cfg.strategy = cfg.partitions > 1 ? Strategy::kMultiPartitioning
                                      : Strategy::kPartitioning;
  }
  return cfg;
}

std::vector<Eigen::VectorXd> run(const SamplerConfig& config,
                                 const schedule::NoiseSchedule& s,
                                 const PairDenoiserFn& denoiser, Rng& rng,
                                 RunRecord* record) {
  config.validate(s);
  const int m = config.num_videos;
  const int d = config.video_dim;

  std::vector<Eigen::VectorXd> v(m);
  for (int k = 0; k < m; ++k) {
    v[k].resize(d);
    for (int c = 0; c < d; ++c) v[k][c] = rng.normal();
  }

  const auto& steps = config.plan.timesteps;
  for (std::size_t idx = 0; idx < steps.size(); ++idx) {
    const int t = steps[idx];
    const int t_prev = idx + 1 < steps.size() ? steps[idx + 1] : 0;
    for (int r = 0; r < config.recurrent_steps; ++r) {
      PairSelection sel =
          select_pairs(config.strategy, m, config.partitions, rng);

      std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> preds;
      preds.reserve(sel.pairs.size());
      for (const auto& [i, j] : sel.pairs) preds.emplace_back(denoiser(i, j, v[i], v[j], t));

      const std::vector<Eigen::VectorXd> eps_out =
          aggregate_noise(preds, sel, m, config.weight_scale);

      std::vector<Eigen::VectorXd> stepped(m);
      for (int k = 0; k < m; ++k)
        stepped[k] = schedule::ddim_step(v[k], eps_out[k], t, t_prev, s,
                                         config.plan.eta, &rng);

      if (r + 1 < config.recurrent_steps) {
        for (int k = 0; k < m; ++k) v[k] = schedule::renoise(stepped[k], t_prev, t, s, rng);
      } else {
        v = std::move(stepped);
      }

      if (record != nullptr)
        record->iterations.push_back({t, r, std::move(sel)});
    }
  }
  return v;
}

void write_run_manifest(std::ostream& out, const SamplerConfig& config,
                        const RunRecord& record) {
  out << "videos=" << config.num_videos << "\n"
      << "dim=" << config.video_dim << "\n"
      << "strategy=" << strategy_name(config.strategy) << "\n"
      << "partitions=" << config.partitions << "\n"
      << "recurrent_steps=" << config.recurrent_steps << "\n"
      << "seed=" << config.seed << "\n";
  std::ostringstream num;
  num.precision(17);
  num << config.plan.eta;
  out << "eta=" << num.str() << "\n";
  num.str("");
  num << config.weight_scale;
  out << "weight_scale=" << num.str() << "\n";
  out << "timesteps=";
  for (std::size_t i = 0; i < config.plan.timesteps.size(); ++i) {
    if (i) out << ' ';
    out << config.plan.timesteps[i];
  }
  out << "\n";
  for (const auto& it : record.iterations) {
    out << "iteration t=" << it.timestep << " r=" << it.recurrent_index << " pairs=";
    for (std::size_t i = 0; i < it.selection.pairs.size(); ++i) {
      if (i) out << ' ';
      out << it.selection.pairs[i].first << '-' << it.selection.pairs[i].second;
    }
    out << "\n";
  }
}

}  // namespace collabdiff::sampler
