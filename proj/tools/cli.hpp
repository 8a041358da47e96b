#pragma once

// Command-line front end. run_cli() is the whole program minus main(), so the
// tests drive it in-process.

#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <widecam/bench.hpp>
#include <widecam/dataset.hpp>
#include <widecam/io.hpp>
#include <widecam/presets.hpp>
#include <widecam/report.hpp>
#include <widecam/solver.hpp>

namespace widecam::cli {

enum ExitCode { kOk = 0, kInputError = 1, kNotConverged = 2 };

inline std::vector<ModelKind> parse_models(const std::vector<std::string>& names) {
  std::vector<ModelKind> kinds;
  for (const auto& n : names) kinds.push_back(parse_model_kind(n));
  return kinds;
}

inline std::vector<std::string> model_names(const std::vector<ModelKind>& kinds) {
  std::vector<std::string> names;
  for (ModelKind k : kinds) names.emplace_back(to_string(k));
  return names;
}

/// Sidecar next to synthesized detections: out.json -> out.truth.json.
inline std::filesystem::path truth_path(const std::filesystem::path& detections) {
  std::filesystem::path p = detections;
  p.replace_extension(".truth.json");
  return p;
}

struct SolverFlags {
  std::string config;
  std::optional<double> huber_delta;
  std::optional<int> max_iterations;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", config, "Solver settings as JSON (SolverConfig field names)");
    cmd->add_option("--huber-delta", huber_delta, "Huber threshold in pixels, inf for least squares");
    cmd->add_option("--max-iterations", max_iterations, "Iteration cap");
  }

  SolverConfig resolve() const {
    SolverConfig cfg;
    if (!config.empty()) cfg = solver_config_from_json(parse_json(read_file(config), config), config);
    if (huber_delta) cfg.huber_delta = *huber_delta;
    if (max_iterations) cfg.max_iterations = *max_iterations;
    if (const auto bad = cfg.check()) throw InvalidParameters("solver settings: " + *bad);
    return cfg;
  }
};

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Calibration, comparison and benchmarking of wide-angle camera models", "widecam"};
  app.require_subcommand(1);

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Calibrate one model and write the result JSON");
  std::string cal_detections, cal_model, cal_out;
  SolverFlags cal_solver;
  cal->add_option("--detections", cal_detections, "Detections file (calib-detections-v1)")->required();
  cal->add_option("--model", cal_model, "Camera model name")->required();
  cal->add_option("--out", cal_out, "Result JSON path")->required();
  cal_solver.add(cal);

  // compare
  auto* cmp = app.add_subcommand("compare", "Calibrate several models on the same detections");
  std::string cmp_detections, cmp_out;
  std::vector<std::string> cmp_models = model_names(default_compare_models());
  SolverFlags cmp_solver;
  cmp->add_option("--detections", cmp_detections, "Detections file")->required();
  cmp->add_option("--models", cmp_models, "Comma-separated model names")->delimiter(',');
  cmp->add_option("--out", cmp_out, "CSV path")->required();
  cmp_solver.add(cmp);

  // synth
  auto* syn = app.add_subcommand("synth", "Render a synthetic detections file from a camera");
  std::string syn_model_file, syn_out;
  SynthSpec spec;
  syn->add_option("--model-file", syn_model_file, "Camera JSON (model, intrinsics, width, height)")
      ->required();
  syn->add_option("--images", spec.num_images, "Number of views")->capture_default_str();
  syn->add_option("--noise", spec.noise_sigma, "Gaussian pixel noise sigma")->capture_default_str();
  syn->add_option("--outliers", spec.outlier_fraction, "Fraction of gross outliers")
      ->capture_default_str();
  syn->add_option("--seed", spec.seed, "Random seed")->capture_default_str();
  syn->add_option("--rows", spec.board.rows, "Board corner rows")->capture_default_str();
  syn->add_option("--cols", spec.board.cols, "Board corner columns")->capture_default_str();
  syn->add_option("--spacing", spec.board.spacing, "Corner spacing in metres")
      ->capture_default_str();
  syn->add_option("--out", syn_out, "Detections path; ground truth goes to <stem>.truth.json")
      ->required();

  // bench
  auto* ben = app.add_subcommand("bench", "Time projection and unprojection per model");
  std::vector<std::string> ben_models = model_names(default_compare_models());
  std::string ben_out;
  BenchConfig ben_cfg;
  ben->add_option("--models", ben_models, "Comma-separated model names")->delimiter(',');
  ben->add_option("--samples", ben_cfg.samples, "Calls per cell")->capture_default_str();
  ben->add_option("--repeats", ben_cfg.repeats, "Repeats per cell (at least 11)")
      ->capture_default_str();
  ben->add_option("--seed", ben_cfg.seed, "Sample seed")->capture_default_str();
  ben->add_option("--out", ben_out, "CSV path");

  // viz
  auto* viz = app.add_subcommand("viz", "Draw detected and reprojected corners of one image as SVG");
  std::string viz_detections, viz_result, viz_out;
  int viz_image = 0;
  viz->add_option("--detections", viz_detections, "Detections file")->required();
  viz->add_option("--result", viz_result, "Result (or ground-truth) JSON")->required();
  viz->add_option("--image-id", viz_image, "Image id")->required();
  viz->add_option("--out", viz_out, "SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (cal->parsed()) {
      const ModelKind kind = parse_model_kind(cal_model);
      const SolverConfig cfg = cal_solver.resolve();
      const DetectionSet det = load_detections(cal_detections);
      const CalibResult res = calibrate(det, kind, cfg);
      write_file_atomic(cal_out, result_to_json(res, det).dump(2) + "\n");
      out << std::setprecision(6) << to_string(kind) << ": mean " << res.mean_px << " px, median "
          << res.median_px << " px, max " << res.max_px << " px, " << res.iterations
          << " iterations (" << res.reason << ")\n";
      if (!res.converged) {
        err << "calibrate: solver stopped without converging (" << res.reason << ")\n";
        return kNotConverged;
      }
      return kOk;
    }
    if (cmp->parsed()) {
      const std::vector<ModelKind> kinds = parse_models(cmp_models);
      if (kinds.size() < 2) throw InvalidParameters("compare: at least two models are required");
      const SolverConfig cfg = cmp_solver.resolve();
      const DetectionSet det = load_detections(cmp_detections);
      const CompareReport rep = compare_models(det, kinds, cfg);
      write_file_atomic(cmp_out, compare_csv(rep));
      out << compare_table(rep);
      return rep.any_converged() ? kOk : kNotConverged;
    }
    if (syn->parsed()) {
      spec.camera = read_camera(syn_model_file);
      const SynthData data = generate_synthetic(spec);
      Json truth = camera_to_json(spec.camera);
      Json poses = Json::array();
      Json ids = Json::array();
      for (std::size_t i = 0; i < data.poses.size(); ++i) {
        const Mat4 m = data.poses[i].matrix();
        Json flat = Json::array();
        for (int r = 0; r < 4; ++r) {
          for (int c = 0; c < 4; ++c) flat.push_back(m(r, c));
        }
        poses.push_back(std::move(flat));
        ids.push_back(data.detections.images[i].id);
      }
      truth["poses"] = std::move(poses);
      truth["image_ids"] = std::move(ids);
      truth["noise_sigma"] = spec.noise_sigma;
      truth["outlier_fraction"] = spec.outlier_fraction;
      truth["num_outliers"] = data.num_outliers;
      truth["seed"] = spec.seed;
      save_detections(data.detections, syn_out);
      write_file_atomic(truth_path(syn_out), truth.dump(2) + "\n");
      out << "wrote " << data.detections.images.size() << " images, "
          << data.detections.num_observations() << " corners to " << syn_out << '\n';
      return kOk;
    }
    if (ben->parsed()) {
      std::vector<CameraModel> cams;
      for (ModelKind k : parse_models(ben_models)) cams.push_back(preset_camera(k));
      const BenchReport rep = run_bench(cams, ben_cfg);
      if (!ben_out.empty()) write_file_atomic(ben_out, bench_csv(rep));
      out << bench_table(rep);
      return kOk;
    }
    if (viz->parsed()) {
      const DetectionSet det = load_detections(viz_detections);
      const Json result = parse_json(read_file(viz_result), viz_result);
      const CameraModel cam = camera_from_json(result, viz_result);
      const Pose pose = result_pose(result, det, viz_image, viz_result);
      write_file_atomic(viz_out, reprojection_svg(det, cam, pose, viz_image));
      return kOk;
    }
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kNotConverged;
  } catch (const LinearSolveError& e) {
    err << "error: " << e.what() << '\n';
    return kNotConverged;
  } catch (const ConvergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kNotConverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }
  return kInputError;
}

}  // namespace widecam::cli
