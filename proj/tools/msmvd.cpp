// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0
//
// msmvd command-line tool: dataset generation, training, inference,
// evaluation, and BEV map plotting.

#include <CLI11.hpp>
#include <chrono>
#include <iostream>

#include "msmvd/datasets.hpp"
#include "msmvd/inference.hpp"
#include "msmvd/metrics.hpp"
#include "msmvd/plot.hpp"
#include "msmvd/scenegen.hpp"
#include "msmvd/trainer.hpp"
#include "msmvd/version.hpp"

namespace {

using namespace msmvd;

/// Missing input files are usage errors (exit 2), not runtime failures.
void require_exists(const std::string& path, const char* what) {
  if (path.empty() || !std::filesystem::exists(path))
    throw ConfigError(std::string(what) + " not found: '" + path + "'");
}

std::string iso_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Every run writes one manifest next to its outputs. Wall-clock fields live
/// only here; dataset hashing skips this file.
void write_run_manifest(const std::filesystem::path& out_dir, const std::string& command,
                        const std::string& started, const json& details) {
  json m = {{"command", command},
            {"code_version", kVersion},
            {"started_at", started},
            {"finished_at", iso_now()}};
  m.update(details);
  write_file(out_dir / "run_manifest.json", m.dump(2) + "\n");
}

int cmd_gen_data(const std::string& spec_file, const std::string& out_dir,
                 std::int64_t seed_override) {
  require_exists(spec_file, "scene spec");
  const std::string started = iso_now();
  json j;
  try {
    j = json::parse(read_file(spec_file));
  } catch (const json::exception& e) {
    throw ConfigError("scene spec " + spec_file + ": " + e.what());
  }
  SceneSpec spec = SceneSpec::from_json(j);
  if (seed_override >= 0) spec.seed = static_cast<std::uint64_t>(seed_override);
  const DatasetManifest m = generate_dataset(spec, out_dir);
  write_run_manifest(out_dir, "gen-data", started,
                     json{{"dataset_hash", hash_hex(m.hash)},
                          {"n_frames", m.n_frames},
                          {"n_views", m.n_views},
                          {"n_pedestrians", m.n_pedestrians},
                          {"outputs", {out_dir}}});
  std::cout << "dataset written to " << out_dir << "\n"
            << "frames " << m.n_frames << ", views " << m.n_views << ", pedestrians "
            << m.n_pedestrians << "\n"
            << "dataset hash " << hash_hex(m.hash) << "\n";
  return 0;
}

int cmd_train(const std::string& config_file, const std::string& out_override,
              std::int64_t seed_override, const std::string& ablation,
              const std::string& device) {
  require_exists(config_file, "run config");
  const std::string started = iso_now();
  RunConfig cfg = RunConfig::from_file(config_file);
  if (!out_override.empty()) cfg.out = out_override;
  if (seed_override >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed_override);
  if (!device.empty()) cfg.train.device = device;
  if (!ablation.empty()) {
    if (ablation == "full")
      cfg.model.mode = ModelMode::kFull;
    else if (ablation == "msp_only")
      cfg.model.mode = ModelMode::kMspOnly;
    else if (ablation == "baseline")
      cfg.model.mode = ModelMode::kBaseline;
    else
      throw ConfigError("--ablation must be full|msp_only|baseline, got '" + ablation + "'");
  }
  if (cfg.dataset.empty()) throw ConfigError("config: 'dataset' path is required");
  require_exists(cfg.dataset, "dataset");
  cfg.train.validate();

  const Dataset ds = load_dataset(cfg.dataset);
  Model<float> model(cfg.model, cfg.train.seed);
  const TrainReport report = fit(model, ds, cfg.train, cfg.out);
  write_run_manifest(cfg.out, "train", started,
                     json{{"config_hash", hash_hex(cfg.hash())},
                          {"dataset_hash", hash_hex(dataset_hash(cfg.dataset))},
                          {"best_epoch", report.best_epoch},
                          {"best_moda", report.best_moda},
                          {"outputs",
                           {report.best_checkpoint.string(), report.last_checkpoint.string()}}});
  std::cout << "training done; best MODA " << fmt_fixed(report.best_moda * 100.0, 1)
            << " at epoch " << report.best_epoch << "\n"
            << "best checkpoint: " << report.best_checkpoint.string() << "\n";
  return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& dataset,
              const std::string& out_dir, double threshold, int single_scale, bool save_maps,
              const std::string& split) {
  require_exists(checkpoint, "checkpoint");
  require_exists(dataset, "dataset");
  const std::string started = iso_now();
  const Dataset ds = load_dataset(dataset);
  Model<float> model{};
  {
    // Rebuild the module tree from the stored config, then fill weights.
    const CheckpointInfo probe = load_checkpoint<float>(checkpoint, nullptr);
    model = Model<float>(probe.config);
    load_checkpoint(checkpoint, &model);
  }
  const std::vector<int>& ids = split == "train" ? ds.train_ids()
                               : split == "val" ? ds.val_ids()
                                                : ds.frame_ids();
  const GridSet grids = model.make_grids(ds.calibrations(), ds.grid());

  std::vector<DetectionSet> dets;
  std::filesystem::create_directories(out_dir);
  if (save_maps) std::filesystem::create_directories(std::filesystem::path(out_dir) / "maps");
  for (int id : ids) {
    const Frame f = ds.frame(id);
    auto r = infer_frame(model, f.images, grids, ds.grid(), threshold, single_scale, 3, id);
    if (save_maps) {
      MapBlob blob;
      blob.frame_id = id;
      blob.merged = r.merged;
      blob.per_level = r.per_level;
      for (std::size_t i = 0; i < r.per_level.size(); ++i)
        blob.levels.push_back(static_cast<int>(i) + 3);
      save_map_blob(std::filesystem::path(out_dir) / "maps" /
                        (frame_dir_name(id) + ".msmap"),
                    blob);
    }
    dets.push_back(std::move(r.detections));
  }
  const auto det_path = std::filesystem::path(out_dir) / "detections.txt";
  write_file(det_path, write_detections_text(dets));
  write_run_manifest(out_dir, "infer", started,
                     json{{"config_hash", hash_hex(model.config.hash())},
                          {"dataset_hash", hash_hex(dataset_hash(dataset))},
                          {"threshold", threshold},
                          {"single_scale_level", single_scale},
                          {"outputs", {det_path.string()}}});
  std::size_t total = 0;
  for (const auto& d : dets) total += d.detections.size();
  std::cout << "wrote " << total << " detections over " << ids.size() << " frames to "
            << det_path.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& detections_file, const std::string& dataset,
             const std::string& out_dir, double radius, const std::string& split) {
  require_exists(detections_file, "detections file");
  require_exists(dataset, "dataset");
  const std::string started = iso_now();
  const Dataset ds = load_dataset(dataset);
  const std::vector<int>& ids = split == "train" ? ds.train_ids()
                               : split == "val" ? ds.val_ids()
                                                : ds.frame_ids();
  const auto dets = parse_detections_text(read_file(detections_file), detections_file);
  const EvalResult r = evaluate(dets, dataset_ground_truth(ds, ids), radius);
  std::cout << r.table();
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_file(std::filesystem::path(out_dir) / "metrics.json", r.to_json().dump(2) + "\n");
    write_run_manifest(out_dir, "eval", started,
                       json{{"dataset_hash", hash_hex(dataset_hash(dataset))},
                            {"radius", radius},
                            {"moda", r.moda},
                            {"outputs", {(std::filesystem::path(out_dir) / "metrics.json").string()}}});
  }
  return 0;
}

int cmd_plot(const std::string& maps_file, const std::string& dataset,
             const std::string& detections_file, int targets_level, int frame_id,
             const std::string& out_image, bool per_level, int upscale) {
  std::vector<Detection> dets;
  std::vector<Annotation> gts;
  std::optional<Dataset> ds;
  if (!dataset.empty()) {
    ds.emplace(dataset);
    if (frame_id >= 0) gts = ds->annotations(frame_id);
  }
  if (!detections_file.empty()) {
    for (const auto& set : parse_detections_text(read_file(detections_file), detections_file))
      if (set.frame_id == frame_id || frame_id < 0)
        dets.insert(dets.end(), set.detections.begin(), set.detections.end());
  }

  Tensor<float> image;
  if (!maps_file.empty()) {
    const MapBlob blob = load_map_blob(maps_file);
    const BevGridSpec grid = ds ? ds->grid() : BevGridSpec{};
    if (!ds) throw ConfigError("--dataset is required to plot maps (grid geometry)");
    if (per_level) {
      std::vector<Tensor<float>> panels;
      for (std::size_t i = 0; i < blob.per_level.size(); ++i)
        panels.push_back(render_bev_map(blob.per_level[i], grid, blob.levels[i], upscale));
      image = compose_panels(panels);
    } else {
      image = render_bev_map(blob.merged, grid, 3, upscale, dets, gts);
    }
  } else if (targets_level > 0) {
    if (!ds || frame_id < 0)
      throw ConfigError("--targets-level needs --dataset and --frame");
    const auto t = make_target_maps<float>(ds->annotations(frame_id), targets_level, ds->grid());
    image = render_bev_map(t.occupancy, ds->grid(), targets_level, upscale, dets, gts);
  } else if (ds) {
    // No maps at all: blank grid at level-3 geometry (markers only).
    Tensor<float> blank({1, ds->grid().level_cells_x(3), ds->grid().level_cells_y(3)});
    image = render_bev_map(blank, ds->grid(), 3, upscale, dets, gts);
  } else {
    throw ConfigError("plot: provide --maps or --targets-level or --dataset");
  }
  save_ppm(out_image, image);
  std::cout << "wrote " << out_image << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-scale multi-view BEV pedestrian detection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", msmvd::kVersion);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-camera dataset");
  std::string gen_spec, gen_out;
  std::int64_t gen_seed = -1;
  gen->add_option("--spec", gen_spec, "scene spec JSON file")->required();
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--seed", gen_seed, "override the spec seed")->envname("MSMVD_SEED");

  // train
  auto* train = app.add_subcommand("train", "train a model from a run config");
  std::string train_cfg, train_out, train_ablation, train_device;
  std::int64_t train_seed = -1;
  train->add_option("--config", train_cfg, "run config JSON file")->required();
  train->add_option("--out", train_out, "override the output directory");
  train->add_option("--seed", train_seed, "override the training seed")->envname("MSMVD_SEED");
  train->add_option("--ablation", train_ablation, "model mode: full|msp_only|baseline");
  train->add_option("--device", train_device, "compute device (cpu)")->envname("MSMVD_DEVICE");

  // infer
  auto* infer = app.add_subcommand("infer", "run inference and write detection records");
  std::string inf_ckpt, inf_ds, inf_out, inf_split = "all";
  double inf_threshold = 0.4;
  int inf_single = 0;
  bool inf_save_maps = false;
  infer->add_option("--checkpoint", inf_ckpt, "model checkpoint")->required();
  infer->add_option("--dataset", inf_ds, "dataset directory")->required();
  infer->add_option("--out", inf_out, "output directory")->required();
  infer->add_option("--threshold", inf_threshold, "detection threshold")
      ->envname("MSMVD_THRESHOLD");
  infer->add_option("--single-scale", inf_single, "0 = merged, or a single level 3|4|5");
  infer->add_option("--split", inf_split, "train|val|all");
  infer->add_flag("--save-maps", inf_save_maps, "dump per-frame occupancy map blobs");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate detection records against a dataset");
  std::string eval_dets, eval_ds, eval_out, eval_split = "all";
  double eval_radius = 0.5;
  eval->add_option("--detections", eval_dets, "detections.txt from infer")->required();
  eval->add_option("--dataset", eval_ds, "dataset directory")->required();
  eval->add_option("--out", eval_out, "directory for metrics.json");
  eval->add_option("--radius", eval_radius, "matching radius in meters");
  eval->add_option("--split", eval_split, "train|val|all");

  // plot
  auto* plot = app.add_subcommand("plot", "render BEV occupancy maps to an image");
  std::string plot_maps, plot_ds, plot_dets, plot_out;
  int plot_targets_level = 0, plot_frame = -1, plot_upscale = 6;
  bool plot_per_level = false;
  plot->add_option("--maps", plot_maps, "map blob from 'infer --save-maps'");
  plot->add_option("--dataset", plot_ds, "dataset directory (grid geometry + GT)");
  plot->add_option("--detections", plot_dets, "detections.txt to overlay");
  plot->add_option("--targets-level", plot_targets_level, "render target maps at level 3|4|5");
  plot->add_option("--frame", plot_frame, "frame id for GT/targets");
  plot->add_option("--out", plot_out, "output PPM image")->required();
  plot->add_flag("--per-level", plot_per_level, "render per-level panels side by side");
  plot->add_option("--upscale", plot_upscale, "pixels per BEV cell");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen_data(gen_spec, gen_out, gen_seed);
    if (train->parsed())
      return cmd_train(train_cfg, train_out, train_seed, train_ablation, train_device);
    if (infer->parsed())
      return cmd_infer(inf_ckpt, inf_ds, inf_out, inf_threshold, inf_single, inf_save_maps,
                       inf_split);
    if (eval->parsed()) return cmd_eval(eval_dets, eval_ds, eval_out, eval_radius, eval_split);
    if (plot->parsed())
      return cmd_plot(plot_maps, plot_ds, plot_dets, plot_targets_level, plot_frame, plot_out,
                      plot_per_level, plot_upscale);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // CLI11 reports usage errors itself
    return code == 0 ? 0 : 2;
  } catch (const msmvd::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const msmvd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
