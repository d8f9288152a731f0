// Python bindings for the core library. Thin and mechanical: every exposed
// call forwards to the C++ implementation, numpy arrays map to Eigen types,
// and the denoiser callback for sampler.run may be any Python callable
// returning an (eps_i, eps_j) tuple.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <sstream>

#include "collabdiff/data_prep.hpp"
#include "collabdiff/gaussian_toy.hpp"
#include "collabdiff/geometry.hpp"
#include "collabdiff/image.hpp"
#include "collabdiff/noise_schedule.hpp"
#include "collabdiff/rng.hpp"
#include "collabdiff/sampler.hpp"
#include "collabdiff/sync_attention.hpp"

namespace py = pybind11;
using namespace collabdiff;

namespace {

py::array_t<float> image_to_numpy(const img::Image& im) {
  py::array_t<float> arr({im.height, im.width, im.channels});
  std::memcpy(arr.mutable_data(), im.data.data(), im.data.size() * sizeof(float));
  return arr;
}

img::Image image_from_numpy(
    const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 3)
    throw std::invalid_argument("expected an (height, width, channels) array");
  img::Image im(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)),
                static_cast<int>(arr.shape(2)));
  std::memcpy(im.data.data(), arr.data(), im.data.size() * sizeof(float));
  return im;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Collaborative diffusion toolkit: epipolar masks, pairwise-to-many "
            "sampling, synchronization attention, data preparation.";

  py::class_<Rng>(m, "Rng")
      .def(py::init<std::uint64_t>(), py::arg("seed"))
      .def("uniform", static_cast<double (Rng::*)()>(&Rng::uniform))
      .def("uniform", static_cast<double (Rng::*)(double, double)>(&Rng::uniform),
           py::arg("lo"), py::arg("hi"))
      .def("normal", static_cast<double (Rng::*)()>(&Rng::normal))
      .def("normal", static_cast<double (Rng::*)(double, double)>(&Rng::normal),
           py::arg("mean"), py::arg("stddev"));

  // ---------------------------------------------------------------- geometry
  auto geo = m.def_submodule("geometry", "Two-view epipolar geometry and masks");
  py::register_exception<geometry::CoincidentCamerasError>(
      geo, "CoincidentCamerasError", PyExc_RuntimeError);
  py::register_exception<geometry::DegenerateLineError>(geo, "DegenerateLineError",
                                                        PyExc_RuntimeError);

  py::class_<geometry::CameraIntrinsics>(geo, "CameraIntrinsics")
      .def(py::init<>())
      .def_readwrite("fx", &geometry::CameraIntrinsics::fx)
      .def_readwrite("fy", &geometry::CameraIntrinsics::fy)
      .def_readwrite("cx", &geometry::CameraIntrinsics::cx)
      .def_readwrite("cy", &geometry::CameraIntrinsics::cy)
      .def_readwrite("width", &geometry::CameraIntrinsics::width)
      .def_readwrite("height", &geometry::CameraIntrinsics::height)
      .def("matrix", &geometry::CameraIntrinsics::matrix)
      .def("inverse_matrix", &geometry::CameraIntrinsics::inverse_matrix)
      .def("validate", &geometry::CameraIntrinsics::validate);

  py::class_<geometry::CameraPose>(geo, "CameraPose")
      .def(py::init<>())
      .def_readwrite("rotation", &geometry::CameraPose::rotation)
      .def_readwrite("translation", &geometry::CameraPose::translation)
      .def_readwrite("intrinsics", &geometry::CameraPose::intrinsics)
      .def("validate", &geometry::CameraPose::validate)
      .def("camera_center", &geometry::CameraPose::camera_center)
      .def("project", &geometry::CameraPose::project, py::arg("world_point"));

  py::class_<geometry::FundamentalMatrix>(geo, "FundamentalMatrix")
      .def_static("from_matrix", &geometry::FundamentalMatrix::from_matrix,
                  py::arg("m"))
      .def("matrix", &geometry::FundamentalMatrix::matrix,
           py::return_value_policy::copy)
      .def("transposed", &geometry::FundamentalMatrix::transposed);

  geo.def("relative_pose",
          [](const geometry::CameraPose& a, const geometry::CameraPose& b) {
            const geometry::RelativePose rel = geometry::relative_pose(a, b);
            return py::make_tuple(rel.rotation, rel.translation);
          },
          py::arg("a"), py::arg("b"),
          "Pose of camera b in camera a's frame, as (rotation, translation).");
  geo.def("fundamental_matrix", &geometry::fundamental_matrix, py::arg("a"),
          py::arg("b"));

  py::class_<geometry::EpipolarLine>(geo, "EpipolarLine")
      .def_readonly("a", &geometry::EpipolarLine::a)
      .def_readonly("b", &geometry::EpipolarLine::b)
      .def_readonly("c", &geometry::EpipolarLine::c)
      .def("distance_to", &geometry::EpipolarLine::distance_to, py::arg("u"),
           py::arg("v"));
  geo.def("epipolar_line", &geometry::epipolar_line, py::arg("f"), py::arg("x"),
          py::arg("y"));

  py::class_<geometry::GridSize>(geo, "GridSize")
      .def(py::init([](int height, int width) {
             return geometry::GridSize{height, width};
           }),
           py::arg("height"), py::arg("width"))
      .def_readwrite("height", &geometry::GridSize::height)
      .def_readwrite("width", &geometry::GridSize::width)
      .def("count", &geometry::GridSize::count)
      .def(py::self == py::self);

  py::class_<geometry::EpipolarMask>(geo, "EpipolarMask")
      .def(py::init<geometry::GridSize, geometry::GridSize, double>(),
           py::arg("query_res"), py::arg("key_res"), py::arg("tau"))
      .def_property_readonly("query_res", &geometry::EpipolarMask::query_res)
      .def_property_readonly("key_res", &geometry::EpipolarMask::key_res)
      .def_property_readonly("tau", &geometry::EpipolarMask::tau)
      .def("bit", &geometry::EpipolarMask::bit, py::arg("q"), py::arg("k"))
      .def("set_bit", &geometry::EpipolarMask::set_bit, py::arg("q"), py::arg("k"),
           py::arg("value") = true)
      .def("count_set", &geometry::EpipolarMask::count_set)
      .def("dense",
           [](const geometry::EpipolarMask& mask) {
             Eigen::MatrixXi out(mask.num_queries(), mask.num_keys());
             for (int q = 0; q < mask.num_queries(); ++q)
               for (int k = 0; k < mask.num_keys(); ++k)
                 out(q, k) = mask.bit(q, k) ? 1 : 0;
             return out;
           },
           "The mask as a dense (num_queries, num_keys) 0/1 matrix.")
      .def("pgm_bytes",
           [](const geometry::EpipolarMask& mask) {
             std::ostringstream out;
             mask.write_pgm(out);
             return py::bytes(out.str());
           })
      .def("csv_text",
           [](const geometry::EpipolarMask& mask) {
             std::ostringstream out;
             mask.write_csv(out);
             return out.str();
           })
      .def(py::self == py::self);

  geo.def("epipolar_mask", &geometry::epipolar_mask, py::arg("f"),
          py::arg("query_res"), py::arg("key_res"), py::arg("image_res"),
          py::arg("tau"));
  geo.def("pseudo_epipolar_mask", &geometry::pseudo_epipolar_mask, py::arg("res"),
          py::arg("tau"), py::arg("rng"));

  // ---------------------------------------------------------------- schedule
  auto sch = m.def_submodule("schedule", "Noise schedule and DDIM steps");

  py::enum_<schedule::BetaStyle>(sch, "BetaStyle")
      .value("LINEAR", schedule::BetaStyle::kLinear)
      .value("SCALED_LINEAR", schedule::BetaStyle::kScaledLinear);

  py::class_<schedule::NoiseSchedule>(sch, "NoiseSchedule")
      .def(py::init<int, schedule::BetaStyle, double, double>(),
           py::arg("total_steps"), py::arg("style"), py::arg("beta_start"),
           py::arg("beta_end"))
      .def_static("scaled_linear_default", &schedule::NoiseSchedule::scaled_linear_default)
      .def_property_readonly("total_steps", &schedule::NoiseSchedule::total_steps)
      .def("beta", &schedule::NoiseSchedule::beta, py::arg("t"))
      .def("alpha_bar", &schedule::NoiseSchedule::alpha_bar, py::arg("t"))
      .def("csv_text", [](const schedule::NoiseSchedule& s) {
        std::ostringstream out;
        s.write_csv(out);
        return out.str();
      });

  py::class_<schedule::StepPlan>(sch, "StepPlan")
      .def(py::init<>())
      .def_readwrite("timesteps", &schedule::StepPlan::timesteps)
      .def_readwrite("eta", &schedule::StepPlan::eta)
      .def_static("uniform", &schedule::StepPlan::uniform, py::arg("schedule"),
                  py::arg("count"), py::arg("eta") = 0.0)
      .def("validate", &schedule::StepPlan::validate, py::arg("schedule"));

  sch.def("forward_noise", &schedule::forward_noise, py::arg("v0"), py::arg("t"),
          py::arg("eps"), py::arg("schedule"));
  sch.def("ddim_step", &schedule::ddim_step, py::arg("v_t"), py::arg("eps_pred"),
          py::arg("t"), py::arg("t_prev"), py::arg("schedule"), py::arg("eta") = 0.0,
          py::arg("rng") = nullptr);
  sch.def("renoise",
          static_cast<Eigen::VectorXd (*)(const Eigen::VectorXd&, int, int,
                                          const schedule::NoiseSchedule&, Rng&)>(
              &schedule::renoise),
          py::arg("v"), py::arg("t_from"), py::arg("t_to"), py::arg("schedule"),
          py::arg("rng"));

  // --------------------------------------------------------------------- toy
  auto toy_m = m.def_submodule("toy", "Analytic Gaussian toy world");

  py::class_<toy::GaussianToyWorld>(toy_m, "GaussianToyWorld")
      .def(py::init<int, int, double>(), py::arg("num_videos"), py::arg("video_dim"),
           py::arg("rho"))
      .def_property_readonly("num_videos", &toy::GaussianToyWorld::num_videos)
      .def_property_readonly("video_dim", &toy::GaussianToyWorld::video_dim)
      .def_property_readonly("joint_dim", &toy::GaussianToyWorld::joint_dim)
      .def("covariance", &toy::GaussianToyWorld::covariance,
           py::return_value_policy::copy)
      .def("pair_covariance", &toy::GaussianToyWorld::pair_covariance)
      .def("sample_reference", &toy::GaussianToyWorld::sample_reference, py::arg("n"),
           py::arg("rng"))
      .def("exact_pair_noise", &toy::GaussianToyWorld::exact_pair_noise, py::arg("i"),
           py::arg("j"), py::arg("v_pair"), py::arg("t"), py::arg("schedule"))
      .def("exact_joint_noise", &toy::GaussianToyWorld::exact_joint_noise,
           py::arg("v_joint"), py::arg("t"), py::arg("schedule"));

  py::class_<toy::PairDenoiser>(toy_m, "PairDenoiser")
      .def(py::init<const toy::GaussianToyWorld&, int, int,
                    const schedule::NoiseSchedule&, const std::vector<int>&>(),
           py::arg("world"), py::arg("i"), py::arg("j"), py::arg("schedule"),
           py::arg("timesteps"), py::keep_alive<1, 2>())
      .def_property_readonly("i", &toy::PairDenoiser::i)
      .def_property_readonly("j", &toy::PairDenoiser::j)
      .def("__call__", &toy::PairDenoiser::operator(), py::arg("v_i"), py::arg("v_j"),
           py::arg("t"));

  toy_m.def("covariance_error", &toy::covariance_error, py::arg("samples"),
            py::arg("target"));

  // ----------------------------------------------------------------- sampler
  auto samp = m.def_submodule("sampler", "Pairwise-to-many collaborative sampling");
  py::register_exception<sampler::UncoveredVideoError>(samp, "UncoveredVideoError",
                                                       PyExc_RuntimeError);

  py::enum_<sampler::Strategy>(samp, "Strategy")
      .value("EXHAUSTIVE", sampler::Strategy::kExhaustive)
      .value("PARTITIONING", sampler::Strategy::kPartitioning)
      .value("MULTI_PARTITIONING", sampler::Strategy::kMultiPartitioning);
  samp.def("strategy_name", &sampler::strategy_name, py::arg("strategy"));
  samp.def("strategy_from_name", &sampler::strategy_from_name, py::arg("name"));

  py::class_<sampler::PairSelection>(samp, "PairSelection")
      .def_readonly("pairs", &sampler::PairSelection::pairs)
      .def_readonly("per_video_count", &sampler::PairSelection::per_video_count)
      .def("all_covered", &sampler::PairSelection::all_covered);
  samp.def("select_pairs", &sampler::select_pairs, py::arg("strategy"),
           py::arg("num_videos"), py::arg("partitions"), py::arg("rng"));
  samp.def("aggregate_noise", &sampler::aggregate_noise, py::arg("predictions"),
           py::arg("selection"), py::arg("num_videos"), py::arg("weight_scale") = 1.0);

  py::class_<sampler::SamplerConfig>(samp, "SamplerConfig")
      .def(py::init<>())
      .def_readwrite("num_videos", &sampler::SamplerConfig::num_videos)
      .def_readwrite("video_dim", &sampler::SamplerConfig::video_dim)
      .def_readwrite("strategy", &sampler::SamplerConfig::strategy)
      .def_readwrite("partitions", &sampler::SamplerConfig::partitions)
      .def_readwrite("recurrent_steps", &sampler::SamplerConfig::recurrent_steps)
      .def_readwrite("plan", &sampler::SamplerConfig::plan)
      .def_readwrite("seed", &sampler::SamplerConfig::seed)
      .def_readwrite("weight_scale", &sampler::SamplerConfig::weight_scale)
      .def("validate", &sampler::SamplerConfig::validate, py::arg("schedule"))
      .def_static("recommended", &sampler::SamplerConfig::recommended,
                  py::arg("num_videos"), py::arg("video_dim"), py::arg("plan"),
                  py::arg("seed"));

  py::class_<sampler::RunRecord::IterationRecord>(samp, "IterationRecord")
      .def_readonly("timestep", &sampler::RunRecord::IterationRecord::timestep)
      .def_readonly("recurrent_index",
                    &sampler::RunRecord::IterationRecord::recurrent_index)
      .def_readonly("selection", &sampler::RunRecord::IterationRecord::selection);
  py::class_<sampler::RunRecord>(samp, "RunRecord")
      .def_readonly("iterations", &sampler::RunRecord::iterations);

  samp.def("run",
           [](const sampler::SamplerConfig& config, const schedule::NoiseSchedule& s,
              const sampler::PairDenoiserFn& denoiser, Rng& rng) {
             return sampler::run(config, s, denoiser, rng);
           },
           py::arg("config"), py::arg("schedule"), py::arg("denoiser"), py::arg("rng"),
           "One collaborative sampling run; returns the list of M video vectors.");
  samp.def("run_with_record",
           [](const sampler::SamplerConfig& config, const schedule::NoiseSchedule& s,
              const sampler::PairDenoiserFn& denoiser, Rng& rng) {
             sampler::RunRecord record;
             auto videos = sampler::run(config, s, denoiser, rng, &record);
             return py::make_tuple(std::move(videos), std::move(record));
           },
           py::arg("config"), py::arg("schedule"), py::arg("denoiser"), py::arg("rng"),
           "run() plus the per-iteration selection trace.");

  // -------------------------------------------------------------------- sync
  auto sync_m = m.def_submodule("sync", "Masked cross-view synchronization block");

  py::class_<sync::FeatureFrame>(sync_m, "FeatureFrame")
      .def(py::init<int, int, int>(), py::arg("height"), py::arg("width"),
           py::arg("dim"))
      .def_readwrite("height", &sync::FeatureFrame::height)
      .def_readwrite("width", &sync::FeatureFrame::width)
      .def_readwrite("values", &sync::FeatureFrame::values)
      .def_property_readonly("dim", &sync::FeatureFrame::dim)
      .def("validate", &sync::FeatureFrame::validate);
  sync_m.def("random_frame", &sync::random_frame, py::arg("height"), py::arg("width"),
             py::arg("dim"), py::arg("rng"), py::arg("scale") = 1.0);

  py::class_<sync::SyncModuleWeights>(sync_m, "SyncModuleWeights")
      .def(py::init<>())
      .def_readwrite("w_query", &sync::SyncModuleWeights::w_query)
      .def_readwrite("w_key", &sync::SyncModuleWeights::w_key)
      .def_readwrite("w_value", &sync::SyncModuleWeights::w_value)
      .def_readwrite("ff1", &sync::SyncModuleWeights::ff1)
      .def_readwrite("b1", &sync::SyncModuleWeights::b1)
      .def_readwrite("ff2", &sync::SyncModuleWeights::ff2)
      .def_readwrite("b2", &sync::SyncModuleWeights::b2)
      .def_readwrite("output_scale", &sync::SyncModuleWeights::output_scale)
      .def_property_readonly("dim", &sync::SyncModuleWeights::dim)
      .def_property_readonly("dim_attn", &sync::SyncModuleWeights::dim_attn)
      .def("validate", &sync::SyncModuleWeights::validate)
      .def_static("init", &sync::SyncModuleWeights::init, py::arg("dim"),
                  py::arg("dim_attn"), py::arg("rng"),
                  py::arg("zero_output_layer") = false);

  sync_m.def("masked_cross_attention", &sync::masked_cross_attention, py::arg("zq"),
             py::arg("zkv"), py::arg("w"), py::arg("mask"));
  sync_m.def("masked_attention_raw", &sync::masked_attention_raw, py::arg("zq"),
             py::arg("zkv"), py::arg("w"), py::arg("mask"));
  sync_m.def("apply_sync",
             static_cast<std::pair<sync::FeatureFrame, sync::FeatureFrame> (*)(
                 const sync::FeatureFrame&, const sync::FeatureFrame&,
                 const sync::SyncModuleWeights&, const geometry::EpipolarMask&,
                 const geometry::EpipolarMask&)>(&sync::apply_sync),
             py::arg("za"), py::arg("zb"), py::arg("shared"), py::arg("mask_ab"),
             py::arg("mask_ba"));
  sync_m.def("grad_check_cross_attention", &sync::grad_check_cross_attention,
             py::arg("zq"), py::arg("zkv"), py::arg("w"), py::arg("mask"),
             py::arg("eps") = 1e-4);
  sync_m.def("grad_check_attention_raw", &sync::grad_check_attention_raw,
             py::arg("zq"), py::arg("zkv"), py::arg("w"), py::arg("mask"),
             py::arg("eps") = 1e-4);

  // ---------------------------------------------------------------- dataprep
  auto dp = m.def_submodule("dataprep", "Folding and homography augmentation");

  py::class_<img::Image>(dp, "Image")
      .def(py::init<int, int, int>(), py::arg("height"), py::arg("width"),
           py::arg("channels"))
      .def_readonly("height", &img::Image::height)
      .def_readonly("width", &img::Image::width)
      .def_readonly("channels", &img::Image::channels)
      .def("to_numpy", &image_to_numpy)
      .def_static("from_numpy", &image_from_numpy, py::arg("array"));
  dp.def("read_png", &img::read_png, py::arg("path"));
  dp.def("write_png", &img::write_png, py::arg("path"), py::arg("image"));

  py::class_<dataprep::FoldedClipPair>(dp, "FoldedClipPair")
      .def_readonly("clip_a", &dataprep::FoldedClipPair::clip_a)
      .def_readonly("clip_b", &dataprep::FoldedClipPair::clip_b);
  dp.def("fold_sequence", &dataprep::fold_sequence, py::arg("frame_count"));

  py::class_<dataprep::HomographyControls>(dp, "HomographyControls")
      .def(py::init<>())
      .def_readwrite("t0", &dataprep::HomographyControls::t0)
      .def_readwrite("t1", &dataprep::HomographyControls::t1)
      .def_readwrite("theta", &dataprep::HomographyControls::theta)
      .def_readwrite("s0", &dataprep::HomographyControls::s0)
      .def_readwrite("s1", &dataprep::HomographyControls::s1)
      .def_readwrite("sh0", &dataprep::HomographyControls::sh0)
      .def_readwrite("sh1", &dataprep::HomographyControls::sh1)
      .def_readwrite("p0", &dataprep::HomographyControls::p0)
      .def_readwrite("p1", &dataprep::HomographyControls::p1);
  py::class_<dataprep::ControlScales>(dp, "ControlScales")
      .def(py::init<>())
      .def_readwrite("t", &dataprep::ControlScales::t)
      .def_readwrite("theta", &dataprep::ControlScales::theta)
      .def_readwrite("s", &dataprep::ControlScales::s)
      .def_readwrite("sh", &dataprep::ControlScales::sh)
      .def_readwrite("p", &dataprep::ControlScales::p);

  dp.def("build_homography", &dataprep::build_homography, py::arg("controls"));
  dp.def("interpolate_controls", &dataprep::interpolate_controls, py::arg("c_final"),
         py::arg("k"), py::arg("n"));
  dp.def("sample_controls", &dataprep::sample_controls, py::arg("rng"),
         py::arg("scales"), py::arg("width") = 256, py::arg("height") = 256);
  dp.def("warp_validity_fraction", &dataprep::warp_validity_fraction, py::arg("h"),
         py::arg("width"), py::arg("height"));

  py::class_<dataprep::WarpResult>(dp, "WarpResult")
      .def_readonly("image", &dataprep::WarpResult::image)
      .def_readonly("validity", &dataprep::WarpResult::validity);
  dp.def("warp_frame", &dataprep::warp_frame, py::arg("image"), py::arg("h"));
}
