#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "collabdiff/cli_commands.hpp"

namespace cli = collabdiff::cli;

namespace {

using Bindings = std::vector<std::pair<std::string, std::string>>;

/// Fill `opts` from a config/manifest file with explicit flags winning:
/// every key whose bound flag appeared on the command line is dropped
/// before applying, so the file only supplies the unspecified settings.
template <typename Opts>
void merge_config(CLI::App* cmd, Opts& opts, const std::string& config_path,
                  const Bindings& bindings, const char* command_name) {
  if (config_path.empty()) return;
  cli::KeyValues kv = cli::read_key_values(config_path);
  if (const auto it = kv.find("command"); it != kv.end() && it->second != command_name)
    throw cli::ValidationError("config '" + config_path + "' was written by command '" +
                               it->second + "', not '" + command_name + "'");
  for (const auto& [flag, key] : bindings)
    if (cmd->count(flag) > 0) kv.erase(key);
  opts.apply(kv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "collabdiff: epipolar attention masks, collaborative Gaussian toy "
      "sampling, and clip data preparation"};
  app.require_subcommand(1);

  const auto attach_common = [](CLI::App* c, cli::CommonOptions& common,
                                std::string& config, std::uint64_t& seed) {
    c->add_option("--out", common.out_dir, "Output directory")->capture_default_str();
    c->add_flag("--force", common.force, "Overwrite existing outputs");
    c->add_option("--seed", seed, "RNG seed; fixes every randomized output");
    c->add_option("--config", config,
                  "key=value config or manifest to replay; explicit flags win, "
                  "unknown keys are ignored");
  };

  // ---- masks -------------------------------------------------------------
  cli::MasksOptions masks_opts;
  std::string masks_config;
  std::uint64_t masks_seed = 0;
  CLI::App* masks = app.add_subcommand(
      "masks", "Epipolar attention masks for a pair of pose files");
  masks->add_option("--poses-a", masks_opts.poses_a, "Pose file of view a");
  masks->add_option("--poses-b", masks_opts.poses_b, "Pose file of view b");
  masks->add_option("--width", masks_opts.image_width, "Image width, pixels")
      ->capture_default_str();
  masks->add_option("--height", masks_opts.image_height, "Image height, pixels")
      ->capture_default_str();
  masks->add_option("--query-h", masks_opts.query_h, "Query grid rows")
      ->capture_default_str();
  masks->add_option("--query-w", masks_opts.query_w, "Query grid columns")
      ->capture_default_str();
  masks->add_option("--key-h", masks_opts.key_h, "Key grid rows")->capture_default_str();
  masks->add_option("--key-w", masks_opts.key_w, "Key grid columns")
      ->capture_default_str();
  masks->add_option("--tau", masks_opts.tau, "Distance threshold, image pixels")
      ->capture_default_str();
  attach_common(masks, masks_opts.common, masks_config, masks_seed);
  masks->callback([&, masks] {
    if (masks->count("--seed") > 0) masks_opts.common.seed = masks_seed;
    merge_config(masks, masks_opts, masks_config,
                 {{"--poses-a", "poses_a"},
                  {"--poses-b", "poses_b"},
                  {"--width", "width"},
                  {"--height", "height"},
                  {"--query-h", "query_h"},
                  {"--query-w", "query_w"},
                  {"--key-h", "key_h"},
                  {"--key-w", "key_w"},
                  {"--tau", "tau"},
                  {"--seed", "seed"}},
                 "masks");
    cli::cmd_masks(masks_opts);
  });

  // ---- toy-sample --------------------------------------------------------
  cli::ToySampleOptions toy_opts;
  std::string toy_config;
  std::uint64_t toy_seed = 0;
  std::filesystem::path toy_world_config;
  CLI::App* toy = app.add_subcommand(
      "toy-sample", "Collaborative sampling of the analytic Gaussian toy world");
  toy->add_option("--videos", toy_opts.videos, "Number of videos M")
      ->capture_default_str();
  toy->add_option("--dim", toy_opts.dim, "Per-video dimension")->capture_default_str();
  toy->add_option("--rho", toy_opts.rho, "Cross-video correlation")
      ->capture_default_str();
  toy->add_option("--world-config", toy_world_config,
                  "World config file (keys videos/dim/rho); flags still win");
  toy->add_option("--strategy", toy_opts.strategy,
                  "exhaustive | partitioning | multipartitioning")
      ->capture_default_str();
  toy->add_option("--partitions", toy_opts.partitions,
                  "Partition count Q (multipartitioning)")
      ->capture_default_str();
  toy->add_option("--recurrent-steps", toy_opts.recurrent_steps,
                  "Recurrent iterations R per timestep")
      ->capture_default_str();
  toy->add_option("--steps", toy_opts.steps, "Denoising plan length")
      ->capture_default_str();
  toy->add_option("--eta", toy_opts.eta, "DDIM eta")->capture_default_str();
  toy->add_option("--runs", toy_opts.runs, "Monte-Carlo sample count")
      ->capture_default_str();
  toy->add_option("--weight-scale", toy_opts.weight_scale,
                  "Aggregation weight scale; 1 is the compliant setting")
      ->capture_default_str();
  toy->add_option("--rho-sweep", toy_opts.rho_sweep,
                  "Comma-separated rho values to sweep")
      ->delimiter(',');
  toy->add_flag("--plot", toy_opts.plot, "Rasterize the sweep as rho_sweep.png");
  attach_common(toy, toy_opts.common, toy_config, toy_seed);
  toy->callback([&, toy] {
    if (toy->count("--seed") > 0) toy_opts.common.seed = toy_seed;
    if (toy->count("--world-config") > 0) toy_opts.world_config = toy_world_config;
    merge_config(toy, toy_opts, toy_config,
                 {{"--videos", "videos"},
                  {"--dim", "dim"},
                  {"--rho", "rho"},
                  {"--strategy", "strategy"},
                  {"--partitions", "partitions"},
                  {"--recurrent-steps", "recurrent_steps"},
                  {"--steps", "steps"},
                  {"--eta", "eta"},
                  {"--runs", "runs"},
                  {"--weight-scale", "weight_scale"},
                  {"--rho-sweep", "rho_sweep"},
                  {"--plot", "plot"},
                  {"--seed", "seed"}},
                 "toy-sample");
    cli::cmd_toy_sample(toy_opts);
  });

  // ---- epi-error ---------------------------------------------------------
  cli::EpiErrorOptions epi_opts;
  std::string epi_config;
  std::uint64_t epi_seed = 0;
  CLI::App* epi = app.add_subcommand(
      "epi-error", "Symmetric epipolar distances of annotated correspondences");
  epi->add_option("--poses-a", epi_opts.poses_a, "Pose file of view a");
  epi->add_option("--poses-b", epi_opts.poses_b, "Pose file of view b");
  epi->add_option("--correspondences", epi_opts.correspondences,
                  "CSV of frame,x1,y1,x2,y2 rows");
  epi->add_option("--width", epi_opts.image_width, "Image width, pixels")
      ->capture_default_str();
  epi->add_option("--height", epi_opts.image_height, "Image height, pixels")
      ->capture_default_str();
  attach_common(epi, epi_opts.common, epi_config, epi_seed);
  epi->callback([&, epi] {
    merge_config(epi, epi_opts, epi_config,
                 {{"--poses-a", "poses_a"},
                  {"--poses-b", "poses_b"},
                  {"--correspondences", "correspondences"},
                  {"--width", "width"},
                  {"--height", "height"}},
                 "epi-error");
    cli::cmd_epi_error(epi_opts);
  });

  // ---- fold --------------------------------------------------------------
  cli::FoldOptions fold_opts;
  std::string fold_config;
  std::uint64_t fold_seed = 0;
  std::filesystem::path fold_poses;
  CLI::App* fold = app.add_subcommand(
      "fold", "Fold an odd frame sequence into two clips sharing the middle frame");
  fold->add_option("--frames", fold_opts.frames_dir, "Directory of .png frames");
  fold->add_option("--poses", fold_poses, "Pose file to fold alongside the frames");
  attach_common(fold, fold_opts.common, fold_config, fold_seed);
  fold->callback([&, fold] {
    if (fold->count("--poses") > 0) fold_opts.poses = fold_poses;
    merge_config(fold, fold_opts, fold_config,
                 {{"--frames", "frames"}, {"--poses", "poses"}}, "fold");
    cli::cmd_fold(fold_opts);
  });

  // ---- homog -------------------------------------------------------------
  cli::HomogOptions homog_opts;
  std::string homog_config;
  std::uint64_t homog_seed = 0;
  CLI::App* homog = app.add_subcommand(
      "homog", "Homography-augmented second clip from a single clip");
  homog->add_option("--frames", homog_opts.frames_dir, "Directory of .png frames");
  homog->add_option("--t-scale", homog_opts.scales.t, "Translation scale, pixels")
      ->capture_default_str();
  homog->add_option("--theta-scale", homog_opts.scales.theta, "Rotation scale, radians")
      ->capture_default_str();
  homog->add_option("--s-scale", homog_opts.scales.s, "Anisotropic scale spread")
      ->capture_default_str();
  homog->add_option("--sh-scale", homog_opts.scales.sh, "Shear scale")
      ->capture_default_str();
  homog->add_option("--p-scale", homog_opts.scales.p, "Perspective scale, 1/pixels")
      ->capture_default_str();
  attach_common(homog, homog_opts.common, homog_config, homog_seed);
  homog->callback([&, homog] {
    if (homog->count("--seed") > 0) homog_opts.common.seed = homog_seed;
    merge_config(homog, homog_opts, homog_config,
                 {{"--frames", "frames"},
                  {"--t-scale", "t_scale"},
                  {"--theta-scale", "theta_scale"},
                  {"--s-scale", "s_scale"},
                  {"--sh-scale", "sh_scale"},
                  {"--p-scale", "p_scale"},
                  {"--seed", "seed"}},
                 "homog");
    cli::cmd_homog(homog_opts);
  });

  // ---- schedule-dump -----------------------------------------------------
  cli::ScheduleDumpOptions sched_opts;
  std::string sched_config;
  std::uint64_t sched_seed = 0;
  CLI::App* sched = app.add_subcommand(
      "schedule-dump", "Write a noise schedule as schedule.csv");
  sched->add_option("--total-steps", sched_opts.total_steps, "Training step count T")
      ->capture_default_str();
  sched->add_option("--style", sched_opts.style, "linear | scaled_linear")
      ->capture_default_str();
  sched->add_option("--beta-start", sched_opts.beta_start, "beta_1")
      ->capture_default_str();
  sched->add_option("--beta-end", sched_opts.beta_end, "beta_T")
      ->capture_default_str();
  attach_common(sched, sched_opts.common, sched_config, sched_seed);
  sched->callback([&, sched] {
    merge_config(sched, sched_opts, sched_config,
                 {{"--total-steps", "total_steps"},
                  {"--style", "style"},
                  {"--beta-start", "beta_start"},
                  {"--beta-end", "beta_end"}},
                 "schedule-dump");
    cli::cmd_schedule_dump(sched_opts);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const cli::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
