#include "collabdiff/cli_commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "collabdiff/gaussian_toy.hpp"
#include "collabdiff/geometry.hpp"
#include "collabdiff/image.hpp"
#include "collabdiff/noise_schedule.hpp"
#include "collabdiff/sampler.hpp"

namespace collabdiff::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

int to_int(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ValidationError("bad integer for '" + key + "': '" + v + "'");
}

double to_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ValidationError("bad number for '" + key + "': '" + v + "'");
}

std::uint64_t to_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const std::uint64_t out = std::stoull(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ValidationError("bad unsigned integer for '" + key + "': '" + v + "'");
}

void set_if(const KeyValues& kv, const char* key, int& field) {
  if (const auto it = kv.find(key); it != kv.end()) field = to_int(it->second, key);
}
void set_if(const KeyValues& kv, const char* key, double& field) {
  if (const auto it = kv.find(key); it != kv.end()) field = to_double(it->second, key);
}
void set_if(const KeyValues& kv, const char* key, std::string& field) {
  if (const auto it = kv.find(key); it != kv.end()) field = it->second;
}
void set_if(const KeyValues& kv, const char* key, fs::path& field) {
  if (const auto it = kv.find(key); it != kv.end()) field = fs::path(it->second);
}
void set_if(const KeyValues& kv, const char* key,
            std::optional<std::uint64_t>& field) {
  if (const auto it = kv.find(key); it != kv.end()) field = to_u64(it->second, key);
}

std::string fmt17(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw std::runtime_error("cannot create directory '" + dir.string() +
                             "': " + ec.message());
}

fs::path check_new_path(const fs::path& p, bool force) {
  if (!force && fs::exists(p))
    throw ValidationError("output '" + p.string() +
                          "' already exists (pass --force to overwrite)");
  return p;
}

std::ofstream open_new(const fs::path& p, bool force, bool binary = false) {
  check_new_path(p, force);
  std::ofstream out(p, binary ? std::ios::out | std::ios::binary : std::ios::out);
  if (!out) throw std::runtime_error("cannot open '" + p.string() + "' for writing");
  return out;
}

std::vector<dataprep::PoseFileRecord> load_pose_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open pose file '" + p.string() + "'");
  try {
    return dataprep::parse_pose_file(in);
  } catch (const dataprep::MalformedLineError& e) {
    throw std::runtime_error("pose file '" + p.string() + "': " + e.what());
  }
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw std::runtime_error("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  if (files.empty())
    throw std::runtime_error("no .png frames in '" + dir.string() + "'");
  return files;
}

std::string frame_name(const char* stem, std::size_t index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03zu", stem, index);
  return buf;
}

/// Deterministic auxiliary seed for side streams (reference draws, sweeps)
/// so they never alias the main sampling stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void set_pixel(img::Image& im, int x, int y, float r, float g, float b) {
  if (x < 0 || y < 0 || x >= im.width || y >= im.height) return;
  im.at(y, x, 0) = r;
  im.at(y, x, 1) = g;
  im.at(y, x, 2) = b;
}

void draw_line(img::Image& im, double x0, double y0, double x1, double y1, float r,
               float g, float b) {
  const double steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
  const int n = std::max(1, static_cast<int>(std::ceil(steps)));
  for (int i = 0; i <= n; ++i) {
    const double a = static_cast<double>(i) / n;
    set_pixel(im, static_cast<int>(std::lround(x0 + a * (x1 - x0))),
              static_cast<int>(std::lround(y0 + a * (y1 - y0))), r, g, b);
  }
}

/// Minimal static line chart (no text): axes, ticks, one polyline.
void write_line_chart(const fs::path& path, const std::vector<double>& xs,
                      const std::vector<double>& ys, bool force) {
  if (xs.empty() || xs.size() != ys.size())
    throw std::invalid_argument("write_line_chart: need matching nonempty series");
  const int w = 480, h = 320, ml = 50, mr = 15, mt = 15, mb = 35;
  img::Image im(h, w, 3);
  std::fill(im.data.begin(), im.data.end(), 1.0f);

  double xmin = *std::min_element(xs.begin(), xs.end());
  double xmax = *std::max_element(xs.begin(), xs.end());
  double ymin = std::min(0.0, *std::min_element(ys.begin(), ys.end()));
  double ymax = *std::max_element(ys.begin(), ys.end());
  if (xmax == xmin) { xmin -= 0.5; xmax += 0.5; }
  if (ymax == ymin) { ymin -= 0.5; ymax += 0.5; }

  const auto px = [&](double x) {
    return ml + (x - xmin) / (xmax - xmin) * (w - 1 - mr - ml);
  };
  const auto py = [&](double y) {
    return h - 1 - mb - (y - ymin) / (ymax - ymin) * (h - 1 - mb - mt);
  };

  draw_line(im, ml, mt, ml, h - 1 - mb, 0, 0, 0);
  draw_line(im, ml, h - 1 - mb, w - 1 - mr, h - 1 - mb, 0, 0, 0);
  for (int i = 0; i <= 4; ++i) {
    const double fx = ml + i * (w - 1.0 - mr - ml) / 4;
    const double fy = mt + i * (h - 1.0 - mb - mt) / 4;
    draw_line(im, fx, h - 1 - mb, fx, h - 1 - mb + 4, 0, 0, 0);
    draw_line(im, ml - 4, fy, ml, fy, 0, 0, 0);
  }
  for (std::size_t i = 1; i < xs.size(); ++i)
    draw_line(im, px(xs[i - 1]), py(ys[i - 1]), px(xs[i]), py(ys[i]), 0.1f, 0.2f, 0.8f);
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (int dy = -2; dy <= 2; ++dy)
      for (int dx = -2; dx <= 2; ++dx)
        set_pixel(im, static_cast<int>(std::lround(px(xs[i]))) + dx,
                  static_cast<int>(std::lround(py(ys[i]))) + dy, 0.1f, 0.2f, 0.8f);

  check_new_path(path, force);
  img::write_png(path.string(), im);
}

}  // namespace

KeyValues read_key_values(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open config '" + file.string() + "'");
  KeyValues kv;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config '" + file.string() +
                               "': expected key=value, got '" + t + "'");
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

// ---------------------------------------------------------------------------
// masks

void MasksOptions::apply(const KeyValues& kv) {
  set_if(kv, "poses_a", poses_a);
  set_if(kv, "poses_b", poses_b);
  set_if(kv, "width", image_width);
  set_if(kv, "height", image_height);
  set_if(kv, "query_h", query_h);
  set_if(kv, "query_w", query_w);
  set_if(kv, "key_h", key_h);
  set_if(kv, "key_w", key_w);
  set_if(kv, "tau", tau);
  set_if(kv, "seed", common.seed);
}

void cmd_masks(const MasksOptions& opt) {
  if (opt.poses_a.empty() || opt.poses_b.empty())
    throw ValidationError("masks: --poses-a and --poses-b are required");
  if (opt.image_width < 1 || opt.image_height < 1 || opt.query_h < 1 ||
      opt.query_w < 1 || opt.key_h < 1 || opt.key_w < 1)
    throw ValidationError("masks: resolutions must be positive");
  if (!(opt.tau > 0.0)) throw ValidationError("masks: tau must be positive");

  const auto recs_a = load_pose_file(opt.poses_a);
  const auto recs_b = load_pose_file(opt.poses_b);
  if (recs_a.size() != recs_b.size())
    throw std::runtime_error("masks: pose files differ in length (" +
                             std::to_string(recs_a.size()) + " vs " +
                             std::to_string(recs_b.size()) + ")");
  if (recs_a.empty()) throw std::runtime_error("masks: pose files are empty");

  ensure_dir(opt.common.out_dir);
  std::optional<Rng> rng;
  if (opt.common.seed) rng.emplace(*opt.common.seed);

  const geometry::GridSize query_res{opt.query_h, opt.query_w};
  const geometry::GridSize key_res{opt.key_h, opt.key_w};
  const geometry::GridSize image_res{opt.image_height, opt.image_width};

  std::vector<std::string> modes;
  for (std::size_t k = 0; k < recs_a.size(); ++k) {
    const geometry::CameraPose pose_a =
        recs_a[k].to_camera_pose(opt.image_width, opt.image_height);
    const geometry::CameraPose pose_b =
        recs_b[k].to_camera_pose(opt.image_width, opt.image_height);

    std::optional<geometry::EpipolarMask> mask;
    try {
      const geometry::FundamentalMatrix f = geometry::fundamental_matrix(pose_a, pose_b);
      mask.emplace(geometry::epipolar_mask(f, query_res, key_res, image_res, opt.tau));
      modes.push_back("epipolar");
    } catch (const geometry::CoincidentCamerasError&) {
      if (!(query_res == key_res))
        throw ValidationError(
            "masks: pseudo masks require query and key resolutions to match");
      if (!rng)
        throw ValidationError("masks: --seed is required (frame " + std::to_string(k) +
                              " has coincident cameras and needs pseudo masks)");
      mask.emplace(geometry::pseudo_epipolar_mask(query_res, opt.tau, *rng));
      modes.push_back("pseudo");
    }

    auto pgm = open_new(opt.common.out_dir / (frame_name("mask", k) + ".pgm"),
                        opt.common.force, /*binary=*/true);
    mask->write_pgm(pgm);
    auto csv = open_new(opt.common.out_dir / (frame_name("mask", k) + ".csv"),
                        opt.common.force);
    mask->write_csv(csv);
  }

  auto manifest = open_new(opt.common.out_dir / "manifest.txt", opt.common.force);
  manifest << "command=masks\n"
           << "poses_a=" << opt.poses_a.string() << "\n"
           << "poses_b=" << opt.poses_b.string() << "\n"
           << "width=" << opt.image_width << "\n"
           << "height=" << opt.image_height << "\n"
           << "query_h=" << opt.query_h << "\nquery_w=" << opt.query_w << "\n"
           << "key_h=" << opt.key_h << "\nkey_w=" << opt.key_w << "\n"
           << "tau=" << fmt17(opt.tau) << "\n";
  if (opt.common.seed) manifest << "seed=" << *opt.common.seed << "\n";
  manifest << "# frames=" << modes.size() << "\n";
  for (std::size_t k = 0; k < modes.size(); ++k)
    manifest << "# frame." << k << "=" << modes[k] << "\n";
}

// ---------------------------------------------------------------------------
// toy-sample

void ToySampleOptions::apply(const KeyValues& kv) {
  set_if(kv, "videos", videos);
  set_if(kv, "dim", dim);
  set_if(kv, "rho", rho);
  set_if(kv, "strategy", strategy);
  set_if(kv, "partitions", partitions);
  set_if(kv, "recurrent_steps", recurrent_steps);
  set_if(kv, "steps", steps);
  set_if(kv, "eta", eta);
  set_if(kv, "runs", runs);
  set_if(kv, "weight_scale", weight_scale);
  set_if(kv, "seed", common.seed);
  if (const auto it = kv.find("rho_sweep"); it != kv.end()) {
    rho_sweep.clear();
    std::istringstream in(it->second);
    std::string tok;
    while (std::getline(in, tok, ',')) rho_sweep.push_back(to_double(trim(tok), "rho_sweep"));
  }
  if (const auto it = kv.find("plot"); it != kv.end())
    plot = to_int(it->second, "plot") != 0;
}

namespace {

struct ToyRunResult {
  double covariance_error = 0.0;
  double exact_sampling_floor = 0.0;
  double mean_marginal_variance = 0.0;
  int pair_slots_first_iteration = 0;
  sampler::RunRecord first_record;
};

/// n collaborative runs; rows of the returned matrix are flattened joints.
Eigen::MatrixXd collab_samples(const toy::GaussianToyWorld& world,
                               const sampler::SamplerConfig& cfg,
                               const schedule::NoiseSchedule& sched, int runs,
                               Rng& rng, sampler::RunRecord* first_record) {
  const int m = world.num_videos();
  const int d = world.video_dim();
  std::map<std::pair<int, int>, toy::PairDenoiser> denoisers;
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      denoisers.emplace(std::make_pair(i, j),
                        toy::PairDenoiser(world, i, j, sched, cfg.plan.timesteps));
  const sampler::PairDenoiserFn fn = [&denoisers](int i, int j,
                                                  const Eigen::VectorXd& v_i,
                                                  const Eigen::VectorXd& v_j, int t) {
    return denoisers.at({i, j})(v_i, v_j, t);
  };

  Eigen::MatrixXd samples(runs, m * d);
  for (int r = 0; r < runs; ++r) {
    const auto videos =
        sampler::run(cfg, sched, fn, rng, r == 0 ? first_record : nullptr);
    for (int k = 0; k < m; ++k) samples.row(r).segment(k * d, d) = videos[k];
  }
  return samples;
}

ToyRunResult evaluate_toy_run(const toy::GaussianToyWorld& world,
                              const sampler::SamplerConfig& cfg,
                              const schedule::NoiseSchedule& sched, int runs,
                              std::uint64_t seed) {
  ToyRunResult result;
  Rng rng(seed);
  const Eigen::MatrixXd samples =
      collab_samples(world, cfg, sched, runs, rng, &result.first_record);
  result.covariance_error = toy::covariance_error(samples, world.covariance());

  Rng floor_rng(derive_seed(seed, 1));
  result.exact_sampling_floor = toy::covariance_error(
      world.sample_reference(runs, floor_rng), world.covariance());

  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const Eigen::MatrixXd centered = samples.rowwise() - mean;
  result.mean_marginal_variance =
      centered.array().square().colwise().mean().mean();
  result.pair_slots_first_iteration =
      result.first_record.iterations.empty()
          ? 0
          : static_cast<int>(result.first_record.iterations.front().selection.pairs.size());
  return result;
}

/// Plain DDIM over the exact joint denoiser — the reference sampler.
double reference_ddim_error(const toy::GaussianToyWorld& world,
                            const schedule::NoiseSchedule& sched,
                            const schedule::StepPlan& plan, int runs,
                            std::uint64_t seed) {
  Rng rng(seed);
  const int n_dim = world.joint_dim();
  Eigen::MatrixXd samples(runs, n_dim);
  for (int r = 0; r < runs; ++r) {
    Eigen::VectorXd v(n_dim);
    for (int i = 0; i < n_dim; ++i) v[i] = rng.normal();
    for (std::size_t idx = 0; idx < plan.timesteps.size(); ++idx) {
      const int t = plan.timesteps[idx];
      const int t_prev = idx + 1 < plan.timesteps.size() ? plan.timesteps[idx + 1] : 0;
      const Eigen::VectorXd eps = world.exact_joint_noise(v, t, sched);
      v = schedule::ddim_step(v, eps, t, t_prev, sched, plan.eta, &rng);
    }
    samples.row(r) = v;
  }
  return toy::covariance_error(samples, world.covariance());
}

}  // namespace

void cmd_toy_sample(const ToySampleOptions& opt) {
  if (!opt.common.seed) throw ValidationError("toy-sample: --seed is required");
  if (opt.runs < 2) throw ValidationError("toy-sample: need --runs >= 2");

  int videos = opt.videos, dim = opt.dim;
  double rho = opt.rho;
  if (opt.world_config) {
    const KeyValues kv = read_key_values(*opt.world_config);
    set_if(kv, "videos", videos);
    set_if(kv, "dim", dim);
    set_if(kv, "rho", rho);
  }

  const schedule::NoiseSchedule sched = schedule::NoiseSchedule::scaled_linear_default();
  sampler::SamplerConfig cfg;
  cfg.num_videos = videos;
  cfg.video_dim = dim;
  cfg.strategy = sampler::strategy_from_name(opt.strategy);
  cfg.partitions = opt.partitions;
  cfg.recurrent_steps = opt.recurrent_steps;
  cfg.plan = schedule::StepPlan::uniform(sched, opt.steps, opt.eta);
  cfg.seed = *opt.common.seed;
  cfg.weight_scale = opt.weight_scale;

  const toy::GaussianToyWorld world(videos, dim, rho);
  cfg.validate(sched);

  ensure_dir(opt.common.out_dir);
  const ToyRunResult result =
      evaluate_toy_run(world, cfg, sched, opt.runs, cfg.seed);
  const double ddim_ref = reference_ddim_error(world, sched, cfg.plan, opt.runs,
                                               derive_seed(cfg.seed, 2));

  // Samples, one row per (run, video).
  {
    Rng rng(cfg.seed);
    sampler::RunRecord unused;
    const Eigen::MatrixXd samples =
        collab_samples(world, cfg, sched, opt.runs, rng, &unused);
    auto csv = open_new(opt.common.out_dir / "samples.csv", opt.common.force);
    csv << "run,video";
    for (int c = 0; c < dim; ++c) csv << ",c" << c;
    csv << "\n";
    std::ostringstream row;
    row.precision(17);
    for (int r = 0; r < opt.runs; ++r) {
      for (int k = 0; k < videos; ++k) {
        row.str("");
        row << r << ',' << k;
        for (int c = 0; c < dim; ++c) row << ',' << samples(r, k * dim + c);
        row << '\n';
        csv << row.str();
      }
    }
  }

  {
    auto world_cfg = open_new(opt.common.out_dir / "world.cfg", opt.common.force);
    world.write_config(world_cfg);
  }
  {
    auto run_manifest = open_new(opt.common.out_dir / "run_manifest.txt", opt.common.force);
    sampler::write_run_manifest(run_manifest, cfg, result.first_record);
  }
  {
    auto report = open_new(opt.common.out_dir / "report.txt", opt.common.force);
    report << "videos=" << videos << "\ndim=" << dim << "\nrho=" << fmt17(rho)
           << "\nstrategy=" << opt.strategy << "\npartitions=" << opt.partitions
           << "\nrecurrent_steps=" << opt.recurrent_steps << "\nsteps=" << opt.steps
           << "\neta=" << fmt17(opt.eta) << "\nruns=" << opt.runs
           << "\nweight_scale=" << fmt17(opt.weight_scale)
           << "\ncovariance_error=" << fmt17(result.covariance_error)
           << "\nexact_sampling_floor=" << fmt17(result.exact_sampling_floor)
           << "\nreference_ddim_error=" << fmt17(ddim_ref)
           << "\nmean_marginal_variance=" << fmt17(result.mean_marginal_variance)
           << "\npair_slots_per_iteration=" << result.pair_slots_first_iteration
           << "\n";
  }

  if (!opt.rho_sweep.empty()) {
    std::vector<double> errors;
    auto sweep = open_new(opt.common.out_dir / "rho_sweep.csv", opt.common.force);
    sweep << "rho,covariance_error,exact_sampling_floor\n";
    for (std::size_t i = 0; i < opt.rho_sweep.size(); ++i) {
      const toy::GaussianToyWorld sweep_world(videos, dim, opt.rho_sweep[i]);
      const ToyRunResult r = evaluate_toy_run(sweep_world, cfg, sched, opt.runs,
                                              derive_seed(cfg.seed, 16 + i));
      errors.push_back(r.covariance_error);
      sweep << fmt17(opt.rho_sweep[i]) << ',' << fmt17(r.covariance_error) << ','
            << fmt17(r.exact_sampling_floor) << '\n';
    }
    if (opt.plot)
      write_line_chart(opt.common.out_dir / "rho_sweep.png", opt.rho_sweep, errors,
                       opt.common.force);
  }

  auto manifest = open_new(opt.common.out_dir / "manifest.txt", opt.common.force);
  manifest << "command=toy-sample\n"
           << "videos=" << videos << "\ndim=" << dim << "\nrho=" << fmt17(rho)
           << "\nstrategy=" << opt.strategy << "\npartitions=" << opt.partitions
           << "\nrecurrent_steps=" << opt.recurrent_steps << "\nsteps=" << opt.steps
           << "\neta=" << fmt17(opt.eta) << "\nruns=" << opt.runs
           << "\nweight_scale=" << fmt17(opt.weight_scale) << "\nseed=" << cfg.seed
           << "\n";
  if (!opt.rho_sweep.empty()) {
    manifest << "rho_sweep=";
    for (std::size_t i = 0; i < opt.rho_sweep.size(); ++i) {
      if (i) manifest << ',';
      manifest << fmt17(opt.rho_sweep[i]);
    }
    manifest << "\nplot=" << (opt.plot ? 1 : 0) << "\n";
  }
}

// ---------------------------------------------------------------------------
// epi-error

void EpiErrorOptions::apply(const KeyValues& kv) {
  set_if(kv, "poses_a", poses_a);
  set_if(kv, "poses_b", poses_b);
  set_if(kv, "correspondences", correspondences);
  set_if(kv, "width", image_width);
  set_if(kv, "height", image_height);
}

void cmd_epi_error(const EpiErrorOptions& opt) {
  if (opt.poses_a.empty() || opt.poses_b.empty() || opt.correspondences.empty())
    throw ValidationError(
        "epi-error: --poses-a, --poses-b and --correspondences are required");
  const auto recs_a = load_pose_file(opt.poses_a);
  const auto recs_b = load_pose_file(opt.poses_b);
  if (recs_a.size() != recs_b.size())
    throw std::runtime_error("epi-error: pose files differ in length");

  std::ifstream in(opt.correspondences);
  if (!in)
    throw std::runtime_error("epi-error: cannot open '" +
                             opt.correspondences.string() + "'");

  std::map<int, std::vector<double>> per_frame;
  std::map<int, geometry::FundamentalMatrix> f_cache;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::string> fields;
    {
      std::istringstream ls(t);
      std::string tok;
      while (std::getline(ls, tok, ',')) fields.push_back(trim(tok));
    }
    int frame = 0;
    {
      std::size_t used = 0;
      try {
        frame = std::stoi(fields[0], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != fields[0].size()) {
        if (line_no == 1) continue;  // header row
        throw std::runtime_error("epi-error: line " + std::to_string(line_no) +
                                 ": bad frame index '" + fields[0] + "'");
      }
    }
    if (fields.size() != 5)
      throw std::runtime_error("epi-error: line " + std::to_string(line_no) +
                               ": expected frame,x1,y1,x2,y2");
    const double x1 = to_double(fields[1], "x1"), y1 = to_double(fields[2], "y1");
    const double x2 = to_double(fields[3], "x2"), y2 = to_double(fields[4], "y2");
    if (frame < 0 || frame >= static_cast<int>(recs_a.size()))
      throw std::runtime_error("epi-error: line " + std::to_string(line_no) +
                               ": frame index " + std::to_string(frame) +
                               " out of range (0.." +
                               std::to_string(recs_a.size() - 1) + ")");
    const auto in_bounds = [&](double x, double y) {
      return x >= 0.0 && x < opt.image_width && y >= 0.0 && y < opt.image_height;
    };
    if (!in_bounds(x1, y1) || !in_bounds(x2, y2))
      throw std::runtime_error("epi-error: line " + std::to_string(line_no) +
                               ": coordinates outside the declared resolution");

    auto it = f_cache.find(frame);
    if (it == f_cache.end()) {
      const geometry::CameraPose pose_a =
          recs_a[frame].to_camera_pose(opt.image_width, opt.image_height);
      const geometry::CameraPose pose_b =
          recs_b[frame].to_camera_pose(opt.image_width, opt.image_height);
      it = f_cache.emplace(frame, geometry::fundamental_matrix(pose_a, pose_b)).first;
    }
    const geometry::FundamentalMatrix& f = it->second;
    const double d_fwd = geometry::epipolar_line(f, x1, y1).distance_to(x2, y2);
    const double d_bwd =
        geometry::epipolar_line(f.transposed(), x2, y2).distance_to(x1, y1);
    per_frame[frame].push_back(0.5 * (d_fwd + d_bwd));
  }

  ensure_dir(opt.common.out_dir);
  auto csv = open_new(opt.common.out_dir / "epi_error.csv", opt.common.force);
  csv << "frame,count,mean_px,median_px\n";
  const auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  std::vector<double> all;
  for (const auto& [frame, dists] : per_frame) {
    const double mean =
        std::accumulate(dists.begin(), dists.end(), 0.0) / dists.size();
    csv << frame << ',' << dists.size() << ',' << fmt17(mean) << ','
        << fmt17(median(dists)) << '\n';
    all.insert(all.end(), dists.begin(), dists.end());
  }
  if (!all.empty()) {
    const double mean = std::accumulate(all.begin(), all.end(), 0.0) / all.size();
    csv << "all," << all.size() << ',' << fmt17(mean) << ',' << fmt17(median(all))
        << '\n';
  }

  auto manifest = open_new(opt.common.out_dir / "manifest.txt", opt.common.force);
  manifest << "command=epi-error\n"
           << "poses_a=" << opt.poses_a.string() << "\n"
           << "poses_b=" << opt.poses_b.string() << "\n"
           << "correspondences=" << opt.correspondences.string() << "\n"
           << "width=" << opt.image_width << "\nheight=" << opt.image_height << "\n";
}

// ---------------------------------------------------------------------------
// fold

void FoldOptions::apply(const KeyValues& kv) {
  set_if(kv, "frames", frames_dir);
  if (const auto it = kv.find("poses"); it != kv.end()) poses = fs::path(it->second);
}

void cmd_fold(const FoldOptions& opt) {
  if (opt.frames_dir.empty()) throw ValidationError("fold: --frames is required");
  const auto files = list_pngs(opt.frames_dir);
  if (files.size() < 3 || files.size() % 2 == 0)
    throw std::runtime_error("fold: need an odd number of frames >= 3, got " +
                             std::to_string(files.size()));
  const dataprep::FoldedClipPair fold =
      dataprep::fold_sequence(static_cast<int>(files.size()));

  std::vector<dataprep::PoseFileRecord> poses;
  if (opt.poses) {
    poses = load_pose_file(*opt.poses);
    if (poses.size() != files.size())
      throw std::runtime_error("fold: pose count does not match frame count");
  }

  const auto emit_clip = [&](const char* name, const std::vector<int>& indices) {
    const fs::path dir = opt.common.out_dir / name;
    ensure_dir(dir);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const fs::path dst =
          check_new_path(dir / (frame_name("frame", i) + ".png"), opt.common.force);
      fs::copy_file(files[indices[i]], dst, fs::copy_options::overwrite_existing);
    }
    if (!poses.empty()) {
      std::vector<dataprep::PoseFileRecord> folded;
      folded.reserve(indices.size());
      for (int idx : indices) folded.push_back(poses[idx]);
      auto out = open_new(opt.common.out_dir / (std::string(name) + "_poses.txt"),
                          opt.common.force);
      dataprep::write_pose_file(out, folded);
    }
  };
  ensure_dir(opt.common.out_dir);
  emit_clip("clip_a", fold.clip_a);
  emit_clip("clip_b", fold.clip_b);

  auto manifest = open_new(opt.common.out_dir / "manifest.txt", opt.common.force);
  manifest << "command=fold\n"
           << "frames=" << opt.frames_dir.string() << "\n";
  if (opt.poses) manifest << "poses=" << opt.poses->string() << "\n";
  const auto emit_indices = [&manifest](const char* key, const std::vector<int>& v) {
    manifest << key << '=';
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) manifest << ',';
      manifest << v[i];
    }
    manifest << '\n';
  };
  emit_indices("clip_a_indices", fold.clip_a);
  emit_indices("clip_b_indices", fold.clip_b);
  for (std::size_t i = 0; i < files.size(); ++i)
    manifest << "# source." << i << "=" << files[i].filename().string() << "\n";
}

// ---------------------------------------------------------------------------
// homog

void HomogOptions::apply(const KeyValues& kv) {
  set_if(kv, "frames", frames_dir);
  set_if(kv, "t_scale", scales.t);
  set_if(kv, "theta_scale", scales.theta);
  set_if(kv, "s_scale", scales.s);
  set_if(kv, "sh_scale", scales.sh);
  set_if(kv, "p_scale", scales.p);
  set_if(kv, "seed", common.seed);
}

void cmd_homog(const HomogOptions& opt) {
  if (opt.frames_dir.empty()) throw ValidationError("homog: --frames is required");
  if (!opt.common.seed) throw ValidationError("homog: --seed is required");
  const auto files = list_pngs(opt.frames_dir);
  const int n = static_cast<int>(files.size());
  if (n < 2) throw std::runtime_error("homog: need at least 2 frames");

  std::vector<img::Image> images;
  images.reserve(files.size());
  for (const auto& f : files) images.push_back(img::read_png(f.string()));
  for (const img::Image& im : images)
    if (im.width != images.front().width || im.height != images.front().height ||
        im.channels != images.front().channels)
      throw std::runtime_error("homog: frames disagree on size");

  Rng rng(*opt.common.seed);
  const dataprep::HomographyControls controls = dataprep::sample_controls(
      rng, opt.scales, images.front().width, images.front().height);

  const fs::path dir_a = opt.common.out_dir / "clip_a";
  const fs::path dir_b = opt.common.out_dir / "clip_b";
  const fs::path dir_v = opt.common.out_dir / "validity";
  ensure_dir(dir_a);
  ensure_dir(dir_b);
  ensure_dir(dir_v);

  for (int k = 1; k <= n; ++k) {
    const fs::path copy_dst =
        check_new_path(dir_a / (frame_name("frame", k - 1) + ".png"), opt.common.force);
    fs::copy_file(files[k - 1], copy_dst, fs::copy_options::overwrite_existing);

    const dataprep::HomographyControls ck =
        dataprep::interpolate_controls(controls, k, n);
    const Eigen::Matrix3d h = dataprep::build_homography(ck);
    const dataprep::WarpResult warped = dataprep::warp_frame(images[k - 1], h);
    const fs::path warp_dst =
        check_new_path(dir_b / (frame_name("frame", k - 1) + ".png"), opt.common.force);
    img::write_png(warp_dst.string(), warped.image);
    const fs::path valid_dst =
        check_new_path(dir_v / (frame_name("valid", k - 1) + ".png"), opt.common.force);
    img::write_png(valid_dst.string(), warped.validity);
  }

  auto manifest = open_new(opt.common.out_dir / "manifest.txt", opt.common.force);
  manifest << "command=homog\n"
           << "frames=" << opt.frames_dir.string() << "\n"
           << "t_scale=" << fmt17(opt.scales.t) << "\n"
           << "theta_scale=" << fmt17(opt.scales.theta) << "\n"
           << "s_scale=" << fmt17(opt.scales.s) << "\n"
           << "sh_scale=" << fmt17(opt.scales.sh) << "\n"
           << "p_scale=" << fmt17(opt.scales.p) << "\n"
           << "seed=" << *opt.common.seed << "\n"
           << "# control.t0=" << fmt17(controls.t0) << "\n"
           << "# control.t1=" << fmt17(controls.t1) << "\n"
           << "# control.theta=" << fmt17(controls.theta) << "\n"
           << "# control.s0=" << fmt17(controls.s0) << "\n"
           << "# control.s1=" << fmt17(controls.s1) << "\n"
           << "# control.sh0=" << fmt17(controls.sh0) << "\n"
           << "# control.sh1=" << fmt17(controls.sh1) << "\n"
           << "# control.p0=" << fmt17(controls.p0) << "\n"
           << "# control.p1=" << fmt17(controls.p1) << "\n";
  for (std::size_t i = 0; i < files.size(); ++i)
    manifest << "# source." << i << "=" << files[i].filename().string() << "\n";
}

// ---------------------------------------------------------------------------
// schedule-dump

void ScheduleDumpOptions::apply(const KeyValues& kv) {
  set_if(kv, "total_steps", total_steps);
  set_if(kv, "style", style);
  set_if(kv, "beta_start", beta_start);
  set_if(kv, "beta_end", beta_end);
}

void cmd_schedule_dump(const ScheduleDumpOptions& opt) {
  schedule::BetaStyle style;
  if (opt.style == "linear") {
    style = schedule::BetaStyle::kLinear;
  } else if (opt.style == "scaled_linear") {
    style = schedule::BetaStyle::kScaledLinear;
  } else {
    throw ValidationError("schedule-dump: style must be linear or scaled_linear");
  }
  const schedule::NoiseSchedule s(opt.total_steps, style, opt.beta_start, opt.beta_end);
  ensure_dir(opt.common.out_dir);
  auto csv = open_new(opt.common.out_dir / "schedule.csv", opt.common.force);
  s.write_csv(csv);
  auto manifest = open_new(opt.common.out_dir / "manifest.txt", opt.common.force);
  manifest << "command=schedule-dump\n"
           << "total_steps=" << opt.total_steps << "\n"
           << "style=" << opt.style << "\n"
           << "beta_start=" << fmt17(opt.beta_start) << "\n"
           << "beta_end=" << fmt17(opt.beta_end) << "\n";
}

}  // namespace collabdiff::cli
