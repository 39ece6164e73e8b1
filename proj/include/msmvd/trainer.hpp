// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0
//
// Optimization loop: per-frame forward/backward, gradient accumulation, Adam
// with a cosine learning-rate schedule, per-epoch validation, best-MODA
// checkpoint selection.

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "msmvd/datasets.hpp"
#include "msmvd/inference.hpp"
#include "msmvd/losses.hpp"
#include "msmvd/metrics.hpp"
#include "msmvd/network.hpp"

namespace msmvd {

struct TrainConfig {
  int epochs = 10;
  double lr_start = 1e-3;
  double lr_end = 1e-6;
  int batch_size = 1;
  int accumulation = 16;
  bool augment = true;
  double aug_scale_lo = 0.8;
  double aug_scale_hi = 1.2;
  std::uint64_t seed = 7;
  std::string device = "cpu";
  int checkpoint_every = 0;          // extra periodic checkpoints; 0 = off
  std::string validate_on = "val";   // "val" | "train"
  double threshold = 0.4;            // detection threshold for validation
  double match_radius = 0.5;         // meters
  int threads = 0;                   // 0 = library default; fixed => reproducible
  int log_every = 1;

  void validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (!(lr_end < lr_start)) throw ConfigError("train.lr_end must be < train.lr_start");
    if (accumulation < 1) throw ConfigError("train.accumulation must be >= 1");
    if (batch_size != 1)
      throw ConfigError("train.batch_size must be 1 (gradient accumulation provides the "
                        "effective batch)");
    if (device != "cpu") throw ConfigError("train.device: only 'cpu' is supported");
    if (!(aug_scale_lo <= aug_scale_hi) || aug_scale_lo <= 0.0)
      throw ConfigError("train augmentation scale range is invalid");
    if (validate_on != "val" && validate_on != "train")
      throw ConfigError("train.validate_on must be 'val' or 'train'");
    if (threshold <= 0.0 || threshold >= 1.0)
      throw ConfigError("train.threshold must be in (0,1)");
  }

  json to_json() const {
    return json{{"epochs", epochs},
                {"lr_start", lr_start},
                {"lr_end", lr_end},
                {"batch_size", batch_size},
                {"accumulation", accumulation},
                {"augment", augment},
                {"aug_scale", {aug_scale_lo, aug_scale_hi}},
                {"seed", seed},
                {"device", device},
                {"checkpoint_every", checkpoint_every},
                {"validate_on", validate_on},
                {"threshold", threshold},
                {"match_radius", match_radius},
                {"threads", threads},
                {"log_every", log_every}};
  }

  static TrainConfig from_json(const json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.lr_start = j.value("lr_start", c.lr_start);
    c.lr_end = j.value("lr_end", c.lr_end);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.accumulation = j.value("accumulation", c.accumulation);
    c.augment = j.value("augment", c.augment);
    if (j.contains("aug_scale")) {
      c.aug_scale_lo = j["aug_scale"].at(0).get<double>();
      c.aug_scale_hi = j["aug_scale"].at(1).get<double>();
    }
    c.seed = j.value("seed", c.seed);
    c.device = j.value("device", c.device);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.validate_on = j.value("validate_on", c.validate_on);
    c.threshold = j.value("threshold", c.threshold);
    c.match_radius = j.value("match_radius", c.match_radius);
    c.threads = j.value("threads", c.threads);
    c.log_every = j.value("log_every", c.log_every);
    c.validate();
    return c;
  }
};

/// Cosine decay over optimizer steps:
///   lr(step) = lr_end + 0.5 (lr_start - lr_end)(1 + cos(pi step / total)).
inline double lr_at(long step, long total_steps, const TrainConfig& cfg) {
  if (step < 0 || step > total_steps || total_steps < 1)
    throw DomainError("lr_at: step outside [0, total_steps]");
  const double c = std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total_steps));
  return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + c);
}

/// Adam without weight decay (betas 0.9 / 0.999).
template <typename T>
class Adam {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit Adam(const nn::ParamList<T>& params) {
    for (auto* p : params) {
      m_.emplace_back(p->value.shape, T(0));
      v_.emplace_back(p->value.shape, T(0));
    }
  }

  /// One update from the gradients accumulated in the parameters, scaled by
  /// `grad_scale` (1 / frames-in-window, so accumulated steps equal the
  /// matching big-batch step). Clears the accumulators.
  void step(const nn::ParamList<T>& params, double lr, double grad_scale) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2, t_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = *params[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.data.size(); ++i) {
        const double g = static_cast<double>(p.grad.data[i]) * grad_scale;
        const double mi = beta1 * static_cast<double>(m.data[i]) + (1.0 - beta1) * g;
        const double vi = beta2 * static_cast<double>(v.data[i]) + (1.0 - beta2) * g * g;
        m.data[i] = static_cast<T>(mi);
        v.data[i] = static_cast<T>(vi);
        p.value.data[i] -=
            static_cast<T>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
      }
      p.zero_grad();
    }
  }

  long steps_taken() const { return t_; }

 private:
  long t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_moda = 0.0, val_modp = 0.0, val_precision = 0.0, val_recall = 0.0;
};

struct TrainReport {
  int best_epoch = -1;
  double best_moda = -1e9;
  std::vector<EpochRecord> epochs;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  EvalResult best_metrics;

  json to_json() const {
    json es = json::array();
    for (const auto& e : epochs)
      es.push_back({{"epoch", e.epoch},
                    {"mean_loss", e.mean_loss},
                    {"val_moda", e.val_moda},
                    {"val_modp", e.val_modp},
                    {"val_precision", e.val_precision},
                    {"val_recall", e.val_recall}});
    return json{{"best_epoch", best_epoch},
                {"best_moda", best_moda},
                {"best_checkpoint", best_checkpoint.string()},
                {"last_checkpoint", last_checkpoint.string()},
                {"epochs", es}};
  }
};

/// Merged-inference validation of `ids` against their ground truth.
template <typename T>
EvalResult validate_model(Model<T>& model, const Dataset& ds, const std::vector<int>& ids,
                          const GridSet& grids, double threshold, double radius) {
  std::vector<DetectionSet> dets;
  for (int id : ids) {
    const Frame f = ds.frame(id);
    std::vector<Tensor<T>> images;
    images.reserve(f.images.size());
    for (const auto& img : f.images) images.push_back(tensor_cast<T>(img));
    dets.push_back(infer_frame(model, images, grids, ds.grid(), threshold, 0, 3, id).detections);
  }
  return evaluate(dets, dataset_ground_truth(ds, ids), radius);
}

template <typename T>
std::array<const TargetMaps<T>*, 3> target_ptrs(const std::vector<TargetMaps<T>>& v) {
  std::array<const TargetMaps<T>*, 3> out{nullptr, nullptr, nullptr};
  for (std::size_t i = 0; i < v.size() && i < 3; ++i) out[i] = &v[i];
  return out;
}

/// Per-frame training targets for the model's level layout.
template <typename T>
std::vector<TargetMaps<T>> make_frame_targets(const std::vector<Annotation>& annotations,
                                              const BevGridSpec& grid, const ModelConfig& cfg) {
  std::vector<TargetMaps<T>> out;
  if (cfg.mode == ModelMode::kBaseline) {
    out.push_back(make_target_maps<T>(annotations, 3, grid));
  } else {
    for (int l : kLevels)
      out.push_back(
          make_target_maps<T>(annotations, l, grid, bev_shape_level(l, cfg.shared_bev_resolution)));
  }
  return out;
}

template <typename T>
TrainReport fit(Model<T>& model, const Dataset& ds, const TrainConfig& cfg,
                const std::filesystem::path& out_dir) {
  cfg.validate();
  if (cfg.threads > 0) Eigen::setNbThreads(cfg.threads);
  std::filesystem::create_directories(out_dir);
  std::ofstream log(out_dir / "train_log.jsonl", std::ios::trunc);
  if (!log) throw IoError("cannot write training log under " + out_dir.string());

  const std::vector<int>& train_ids = ds.train_ids();
  const std::vector<int>& val_ids = cfg.validate_on == "train" ? ds.train_ids() : ds.val_ids();
  if (train_ids.empty()) throw TrainingError("training split is empty");
  if (val_ids.empty()) throw TrainingError("validation split is empty");

  const long steps_per_epoch = (static_cast<long>(train_ids.size()) + cfg.accumulation - 1) /
                               cfg.accumulation;
  const long total_steps = steps_per_epoch * cfg.epochs;

  const GridSet clean_grids = model.make_grids(ds.calibrations(), ds.grid());

  // Targets depend only on world annotations, which augmentation leaves
  // untouched, so they are cached once per frame.
  std::map<int, std::vector<TargetMaps<T>>> target_cache;
  for (int id : train_ids)
    target_cache.emplace(id, make_frame_targets<T>(ds.annotations(id), ds.grid(), model.config));

  auto params = model.parameters();
  model.zero_grad();
  Adam<T> opt(params);
  Rng root = Rng::seeded(cfg.seed);

  TrainReport report;
  long global_step = 0;
  long frames_seen = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = train_ids;
    root.fork("shuffle", epoch).shuffle(order);

    double loss_sum = 0.0;
    int window = 0;
    for (std::size_t fi = 0; fi < order.size(); ++fi) {
      const int frame_id = order[fi];
      Frame frame = ds.frame(frame_id);

      const GridSet* grids = &clean_grids;
      GridSet aug_grids;
      if (cfg.augment) {
        Rng arng = root.fork("augment", static_cast<std::int64_t>(epoch) * 1000003 + frame_id);
        auto [aug_frame, aug_calibs] =
            augment(frame, ds.calibrations(), arng, cfg.aug_scale_lo, cfg.aug_scale_hi);
        frame = std::move(aug_frame);
        aug_grids = model.make_grids(aug_calibs, ds.grid());
        grids = &aug_grids;
      }

      std::vector<Tensor<T>> images;
      images.reserve(frame.images.size());
      for (const auto& img : frame.images) images.push_back(tensor_cast<T>(img));

      nn::Tape<T> tape;
      const ModelOutputs outputs = model.forward(tape, images, *grids);
      const TotalLoss loss =
          total_loss(tape, outputs, target_ptrs(target_cache.at(frame_id)),
                     model.config.aux_offsets, model.config.focal_pos_exponent,
                     model.config.focal_neg_exponent);
      const double lr_now = lr_at(global_step, total_steps, cfg);
      if (!std::isfinite(loss.breakdown.total)) {
        Fnv1a h;
        for (const auto& img : frame.images)
          h.update(img.data.data(), img.data.size() * sizeof(float));
        throw TrainingError("non-finite loss at step " + std::to_string(global_step) +
                            ", frame " + std::to_string(frame_id) + ", lr " +
                            fmt_fixed(lr_now, 8) + ", inputs hash " + hash_hex(h.digest()));
      }
      tape.backward(loss.node);
      loss_sum += loss.breakdown.total;
      ++window;
      ++frames_seen;

      if (frames_seen % cfg.log_every == 0) {
        json rec = loss.breakdown.to_json();
        rec["epoch"] = epoch;
        rec["frame_id"] = frame_id;
        rec["step"] = global_step;
        rec["lr"] = lr_now;
        log << rec.dump() << "\n";
      }

      if (window == cfg.accumulation || fi + 1 == order.size()) {
        opt.step(params, lr_now, 1.0 / window);
        window = 0;
        ++global_step;
      }
    }

    const EvalResult val = validate_model(model, ds, val_ids, clean_grids, cfg.threshold,
                                          cfg.match_radius);
    EpochRecord er;
    er.epoch = epoch;
    er.mean_loss = loss_sum / static_cast<double>(order.size());
    er.val_moda = val.moda;
    er.val_modp = val.modp;
    er.val_precision = val.precision;
    er.val_recall = val.recall;
    report.epochs.push_back(er);
    log << json{{"epoch", epoch},
                {"mean_loss", er.mean_loss},
                {"val_moda", val.moda},
                {"val_modp", val.modp},
                {"val_precision", val.precision},
                {"val_recall", val.recall}}
               .dump()
        << "\n";
    log.flush();

    if (val.moda > report.best_moda) {
      report.best_moda = val.moda;
      report.best_epoch = epoch;
      report.best_metrics = val;
      report.best_checkpoint = out_dir / "best.ckpt";
      save_checkpoint(report.best_checkpoint, model,
                      json{{"epoch", epoch}, {"val_moda", val.moda}});
    }
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(out_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"), model,
                      json{{"epoch", epoch}});
  }

  report.last_checkpoint = out_dir / "last.ckpt";
  save_checkpoint(report.last_checkpoint, model,
                  json{{"epoch", cfg.epochs - 1}, {"final", true}});
  write_file(out_dir / "train_report.json", report.to_json().dump(2) + "\n");
  return report;
}

/// One structured file configuring a whole run: dataset, model, training, and
/// inference settings.
struct RunConfig {
  std::string dataset;
  std::string out = "run";
  ModelConfig model;
  TrainConfig train;
  double threshold = 0.4;
  int nms_window = 3;
  int single_scale_level = 0;  // 0 = merged inference

  json to_json() const {
    return json{{"dataset", dataset},
                {"out", out},
                {"model", model.to_json()},
                {"train", train.to_json()},
                {"inference",
                 {{"threshold", threshold},
                  {"nms_window", nms_window},
                  {"single_scale_level", single_scale_level}}}};
  }

  static RunConfig from_json(const json& j) {
    RunConfig c;
    c.dataset = j.value("dataset", "");
    c.out = j.value("out", c.out);
    if (j.contains("model")) c.model = ModelConfig::from_json(j["model"]);
    if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
    if (j.contains("inference")) {
      const auto& inf = j["inference"];
      c.threshold = inf.value("threshold", c.threshold);
      c.nms_window = inf.value("nms_window", c.nms_window);
      c.single_scale_level = inf.value("single_scale_level", c.single_scale_level);
    }
    if (c.single_scale_level != 0) check_level(c.single_scale_level);
    return c;
  }

  static RunConfig from_file(const std::filesystem::path& path) {
    try {
      return from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
      throw ConfigError("config " + path.string() + ": " + e.what());
    }
  }

  std::uint64_t hash() const { return fnv1a(to_json().dump()); }
};

}  // namespace msmvd
