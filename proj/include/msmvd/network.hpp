// Copyright (c) 2026 the msmvd authors
// SPDX-License-Identifier: Apache-2.0
//
// The trainable detector: residual backbone -> image FPN -> multi-scale
// projection into BEV -> cross-view pooling -> BEV FPN -> per-level heads.

#pragma once

#include <array>
#include <json.hpp>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "msmvd/geometry.hpp"
#include "msmvd/nn.hpp"
#include "msmvd/version.hpp"

namespace msmvd {

using nlohmann::json;

enum class PoolMode { kMax, kMean };
enum class ModelMode { kFull, kMspOnly, kBaseline };

inline std::string to_string(PoolMode m) { return m == PoolMode::kMax ? "max" : "mean"; }
inline std::string to_string(ModelMode m) {
  switch (m) {
    case ModelMode::kFull: return "full";
    case ModelMode::kMspOnly: return "msp_only";
    default: return "baseline";
  }
}

struct ModelConfig {
  std::string backbone = "resnet18";    // resnet18 | small | tiny
  int channels = 256;                   // FPN width C
  PoolMode pooling = PoolMode::kMax;
  ModelMode mode = ModelMode::kFull;
  bool image_fpn_bottom_up = true;
  bool bev_fpn_bottom_up = true;
  bool heads_shared = true;
  bool shared_bev_resolution = false;
  bool aux_offsets = true;              // train O_4/O_5 as auxiliary losses
  int head_layers = 4;
  double focal_pos_exponent = 2.0;
  double focal_neg_exponent = 4.0;
  int n_heights = 5;

  std::array<int, 4> backbone_widths() const {
    if (backbone == "resnet18") return {64, 128, 256, 512};
    if (backbone == "small") return {16, 32, 64, 128};
    if (backbone == "tiny") return {4, 8, 12, 16};
    throw ConfigError("unknown backbone preset: " + backbone);
  }
  std::array<int, 4> backbone_blocks() const {
    if (backbone == "tiny") return {1, 1, 1, 1};
    return {2, 2, 2, 2};
  }

  json to_json() const {
    return json{{"backbone", backbone},
                {"channels", channels},
                {"pooling", to_string(pooling)},
                {"mode", to_string(mode)},
                {"image_fpn_bottom_up", image_fpn_bottom_up},
                {"bev_fpn_bottom_up", bev_fpn_bottom_up},
                {"heads_shared", heads_shared},
                {"shared_bev_resolution", shared_bev_resolution},
                {"aux_offsets", aux_offsets},
                {"head_layers", head_layers},
                {"focal_pos_exponent", focal_pos_exponent},
                {"focal_neg_exponent", focal_neg_exponent},
                {"n_heights", n_heights}};
  }

  static ModelConfig from_json(const json& j) {
    ModelConfig c;
    c.backbone = j.value("backbone", c.backbone);
    c.channels = j.value("channels", c.channels);
    const std::string pool = j.value("pooling", "max");
    if (pool == "max")
      c.pooling = PoolMode::kMax;
    else if (pool == "mean")
      c.pooling = PoolMode::kMean;
    else
      throw ConfigError("model.pooling must be 'max' or 'mean', got '" + pool + "'");
    const std::string mode = j.value("mode", "full");
    if (mode == "full")
      c.mode = ModelMode::kFull;
    else if (mode == "msp_only")
      c.mode = ModelMode::kMspOnly;
    else if (mode == "baseline")
      c.mode = ModelMode::kBaseline;
    else
      throw ConfigError("model.mode must be full|msp_only|baseline, got '" + mode + "'");
    c.image_fpn_bottom_up = j.value("image_fpn_bottom_up", c.image_fpn_bottom_up);
    c.bev_fpn_bottom_up = j.value("bev_fpn_bottom_up", c.bev_fpn_bottom_up);
    c.heads_shared = j.value("heads_shared", c.heads_shared);
    c.shared_bev_resolution = j.value("shared_bev_resolution", c.shared_bev_resolution);
    c.aux_offsets = j.value("aux_offsets", c.aux_offsets);
    c.head_layers = j.value("head_layers", c.head_layers);
    c.focal_pos_exponent = j.value("focal_pos_exponent", c.focal_pos_exponent);
    c.focal_neg_exponent = j.value("focal_neg_exponent", c.focal_neg_exponent);
    c.n_heights = j.value("n_heights", c.n_heights);
    (void)c.backbone_widths();  // validate preset name early
    return c;
  }

  std::uint64_t hash() const { return fnv1a(to_json().dump()); }
};

// ---------------------------------------------------------------------------
// Backbone: stem at stride 4, then three residual stages producing features at
// strides 8/16/32 (the stride-4 stage output is computed but not exported).
// ---------------------------------------------------------------------------

template <typename T>
struct Backbone {
  nn::ConvNormRelu<T> stem;
  std::vector<nn::BasicBlock<T>> stage1, stage2, stage3, stage4;

  Backbone() = default;
  Backbone(const std::string& name, const std::array<int, 4>& widths,
           const std::array<int, 4>& blocks) {
    stem = nn::ConvNormRelu<T>(name + ".stem", 3, widths[0], 7, 2, 3);
    auto make_stage = [&](std::vector<nn::BasicBlock<T>>& stage, const std::string& sname,
                          int in, int out, int stride, int count) {
      for (int i = 0; i < count; ++i)
        stage.emplace_back(sname + "." + std::to_string(i), i == 0 ? in : out, out,
                           i == 0 ? stride : 1);
    };
    make_stage(stage1, name + ".stage1", widths[0], widths[0], 1, blocks[0]);
    make_stage(stage2, name + ".stage2", widths[0], widths[1], 2, blocks[1]);
    make_stage(stage3, name + ".stage3", widths[1], widths[2], 2, blocks[2]);
    make_stage(stage4, name + ".stage4", widths[2], widths[3], 2, blocks[3]);
  }

  void init(const Rng& rng) {
    stem.init(rng);
    for (auto* s : {&stage1, &stage2, &stage3, &stage4})
      for (auto& b : *s) b.init(rng);
  }

  /// Returns {F3, F4, F5} node ids for one view image (3,H,W).
  std::array<int, 3> forward(nn::Tape<T>& tape, int image) {
    const Tensor<T>& in = tape.value(image);
    if (in.rank() != 3 || in.dim(0) != 3)
      throw ContractError("backbone expects a (3,H,W) image, got " + in.shape_str());
    if (in.dim(1) % 4 != 0 || in.dim(2) % 4 != 0)
      throw ConfigError("backbone input H and W must be divisible by 4, got " + in.shape_str());
    int x = stem.forward(tape, image);
    x = nn::maxpool2d(tape, x, 3, 2, 1);
    for (auto& b : stage1) x = b.forward(tape, x);
    int f3 = x;
    for (auto& b : stage2) f3 = b.forward(tape, f3);
    int f4 = f3;
    for (auto& b : stage3) f4 = b.forward(tape, f4);
    int f5 = f4;
    for (auto& b : stage4) f5 = b.forward(tape, f5);
    return {f3, f4, f5};
  }

  void collect(nn::ParamList<T>& out) {
    stem.collect(out);
    for (auto* s : {&stage1, &stage2, &stage3, &stage4})
      for (auto& b : *s) b.collect(out);
  }
};

// ---------------------------------------------------------------------------
// Feature pyramid with a top-down and an optional bottom-up path. Fusion is
// concatenation (lateral/top-down branch first) followed by a 3x3 conv and
// ReLU. Used both on image features and on BEV features.
// ---------------------------------------------------------------------------

template <typename T>
struct Fpn {
  int channels = 0;
  bool bottom_up = true;
  std::array<nn::Conv2d<T>, 3> lateral;
  std::array<nn::Conv2d<T>, 2> td_fuse;    // fuse at levels {4, 3} going down
  std::array<nn::Conv2d<T>, 2> bu_down;    // stride-2 downsample from {3, 4}
  std::array<nn::Conv2d<T>, 2> bu_fuse;    // fuse at levels {4, 5} going up

  Fpn() = default;
  Fpn(const std::string& name, const std::array<int, 3>& in_channels, int channels_,
      bool bottom_up_)
      : channels(channels_), bottom_up(bottom_up_) {
    for (int i = 0; i < 3; ++i)
      lateral[static_cast<std::size_t>(i)] =
          nn::Conv2d<T>(name + ".lateral" + std::to_string(i + 3),
                        in_channels[static_cast<std::size_t>(i)], channels, 1, 1, 0);
    td_fuse[0] = nn::Conv2d<T>(name + ".td_fuse4", 2 * channels, channels, 3, 1, 1);
    td_fuse[1] = nn::Conv2d<T>(name + ".td_fuse3", 2 * channels, channels, 3, 1, 1);
    bu_down[0] = nn::Conv2d<T>(name + ".bu_down3", channels, channels, 3, 2, 1);
    bu_down[1] = nn::Conv2d<T>(name + ".bu_down4", channels, channels, 3, 2, 1);
    bu_fuse[0] = nn::Conv2d<T>(name + ".bu_fuse4", 2 * channels, channels, 3, 1, 1);
    bu_fuse[1] = nn::Conv2d<T>(name + ".bu_fuse5", 2 * channels, channels, 3, 1, 1);
  }

  void init(const Rng& rng) {
    for (auto& c : lateral) c.init(rng);
    for (auto& c : td_fuse) c.init(rng);
    for (auto& c : bu_down) c.init(rng);
    for (auto& c : bu_fuse) c.init(rng);
  }

  std::array<int, 3> forward(nn::Tape<T>& tape, const std::array<int, 3>& xs) {
    std::array<int, 3> lat{};
    for (int i = 0; i < 3; ++i)
      lat[static_cast<std::size_t>(i)] =
          lateral[static_cast<std::size_t>(i)].forward(tape, xs[static_cast<std::size_t>(i)]);

    // Top-down: 5 -> 4 -> 3.
    std::array<int, 3> td{};
    td[2] = lat[2];
    for (int i = 1; i >= 0; --i) {
      const Tensor<T>& target = tape.value(lat[static_cast<std::size_t>(i)]);
      const int up = nn::upsample_bilinear(tape, td[static_cast<std::size_t>(i) + 1],
                                           target.dim(1), target.dim(2));
      const int cat = nn::concat_channels(tape, {lat[static_cast<std::size_t>(i)], up});
      td[static_cast<std::size_t>(i)] =
          nn::relu(tape, td_fuse[static_cast<std::size_t>(1 - i)].forward(tape, cat));
    }
    if (!bottom_up) return td;

    // Bottom-up: 3 -> 4 -> 5.
    std::array<int, 3> bu{};
    bu[0] = td[0];
    for (int i = 1; i < 3; ++i) {
      const int down =
          nn::relu(tape, bu_down[static_cast<std::size_t>(i) - 1].forward(
                             tape, bu[static_cast<std::size_t>(i) - 1]));
      const Tensor<T>& expect = tape.value(td[static_cast<std::size_t>(i)]);
      const Tensor<T>& got = tape.value(down);
      if (got.dim(1) != expect.dim(1) || got.dim(2) != expect.dim(2))
        throw ContractError("FPN bottom-up shape mismatch at level " + std::to_string(i + 3));
      const int cat = nn::concat_channels(tape, {td[static_cast<std::size_t>(i)], down});
      bu[static_cast<std::size_t>(i)] =
          nn::relu(tape, bu_fuse[static_cast<std::size_t>(i) - 1].forward(tape, cat));
    }
    return bu;
  }

  void collect(nn::ParamList<T>& out) {
    for (auto& c : lateral) c.collect(out);
    for (auto& c : td_fuse) c.collect(out);
    for (auto& c : bu_down) c.collect(out);
    for (auto& c : bu_fuse) c.collect(out);
  }
};

// ---------------------------------------------------------------------------
// Multi-scale projection: sample one view's level-l feature at every height,
// concatenate along channels and fuse with a 1x1 conv back to C channels.
// The fuse conv is shared across views and distinct per level.
// ---------------------------------------------------------------------------

template <typename T>
struct MspLevel {
  nn::Conv2d<T> height_fuse;

  MspLevel() = default;
  MspLevel(const std::string& name, int channels, int n_heights)
      : height_fuse(name + ".height_fuse", channels * n_heights, channels, 1, 1, 0) {}

  void init(const Rng& rng) { height_fuse.init(rng); }

  int forward(nn::Tape<T>& tape, int feature, const GridSet& grids, int view,
              int level_index) {
    std::vector<int> per_height;
    per_height.reserve(static_cast<std::size_t>(grids.n_heights()));
    for (int h = 0; h < grids.n_heights(); ++h)
      per_height.push_back(nn::grid_sample(tape, feature, grids.at(view, level_index, h)));
    const int cat = nn::concat_channels(tape, per_height);
    return height_fuse.forward(tape, cat);
  }

  void collect(nn::ParamList<T>& out) { height_fuse.collect(out); }
};

// ---------------------------------------------------------------------------
// Prediction heads: `head_layers` 3x3 convs (ReLU between, none after the
// last). The occupancy head emits logits whose final bias starts at
// logit(0.01) so the initial foreground prior is low.
// ---------------------------------------------------------------------------

template <typename T>
struct Head {
  std::vector<nn::Conv2d<T>> convs;
  bool is_occupancy = false;

  Head() = default;
  Head(const std::string& name, int channels, int out_channels, int layers, bool occupancy)
      : is_occupancy(occupancy) {
    if (layers < 1) throw ConfigError("head_layers must be >= 1");
    for (int i = 0; i < layers; ++i) {
      const int in = channels;
      const int out = (i == layers - 1) ? out_channels : channels;
      convs.emplace_back(name + "." + std::to_string(i), in, out, 3, 1, 1);
    }
  }

  void init(const Rng& rng) {
    for (auto& c : convs) c.init(rng);
    if (is_occupancy) {
      // logit(0.01); keeps the initial occupancy probability near the 1%
      // foreground prior so the focal loss does not swamp early training.
      convs.back().bias.value.fill(static_cast<T>(-4.59511985013459));
    }
  }

  int forward(nn::Tape<T>& tape, int x) {
    int y = x;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      y = convs[i].forward(tape, y);
      if (i + 1 < convs.size()) y = nn::relu(tape, y);
    }
    return y;
  }

  void collect(nn::ParamList<T>& out) {
    for (auto& c : convs) c.collect(out);
  }
};

// ---------------------------------------------------------------------------
// Full model.
// ---------------------------------------------------------------------------

/// Node ids of everything downstream consumers need. Levels are indexed
/// 0..2 for pyramid levels 3..5; -1 marks levels a mode does not produce
/// (baseline only predicts at index 0).
struct ModelOutputs {
  std::array<int, 3> occupancy_logits{-1, -1, -1};
  std::array<int, 3> offsets{-1, -1, -1};
  std::vector<std::array<int, 3>> image_features;   // per view, post-FPN
  std::vector<std::array<int, 3>> projected;        // per view, P_l (baseline: index 0)
  std::array<int, 3> pooled{-1, -1, -1};            // B_l
  std::array<int, 3> refined{-1, -1, -1};           // B~_l (full mode only)

  int n_levels() const { return occupancy_logits[1] < 0 ? 1 : 3; }
};

template <typename T>
class Model {
 public:
  ModelConfig config;

  Model() = default;
  explicit Model(const ModelConfig& cfg, std::uint64_t init_seed = 1)
      : config(cfg),
        backbone_("backbone", cfg.backbone_widths(), cfg.backbone_blocks()),
        image_fpn_("image_fpn",
                   {cfg.backbone_widths()[1], cfg.backbone_widths()[2], cfg.backbone_widths()[3]},
                   cfg.channels, cfg.image_fpn_bottom_up),
        bev_fpn_("bev_fpn", {cfg.channels, cfg.channels, cfg.channels}, cfg.channels,
                 cfg.bev_fpn_bottom_up) {
    for (int i = 0; i < 3; ++i)
      msp_[static_cast<std::size_t>(i)] =
          MspLevel<T>("msp.level" + std::to_string(i + 3), cfg.channels, cfg.n_heights);
    const int head_sets = cfg.heads_shared ? 1 : 3;
    for (int s = 0; s < head_sets; ++s) {
      const std::string suffix = cfg.heads_shared ? "" : ".level" + std::to_string(s + 3);
      occ_heads_.emplace_back("head.occupancy" + suffix, cfg.channels, 1, cfg.head_layers, true);
      off_heads_.emplace_back("head.offset" + suffix, cfg.channels, 2, cfg.head_layers, false);
    }
    init(Rng::seeded(init_seed));
  }

  void init(const Rng& rng) {
    backbone_.init(rng);
    image_fpn_.init(rng);
    bev_fpn_.init(rng);
    for (auto& m : msp_) m.init(rng);
    for (auto& h : occ_heads_) h.init(rng);
    for (auto& h : off_heads_) h.init(rng);
  }

  /// Expected grid layout for this model's mode.
  GridSet make_grids(const std::vector<CameraCalibration>& calibs,
                     const BevGridSpec& grid) const {
    if (static_cast<int>(grid.heights.size()) != config.n_heights)
      throw ConfigError("model expects " + std::to_string(config.n_heights) +
                        " projection heights, grid spec has " +
                        std::to_string(grid.heights.size()));
    if (config.mode == ModelMode::kBaseline) return GridSet::baseline(calibs, grid);
    return GridSet::standard(calibs, grid, config.shared_bev_resolution);
  }

  ModelOutputs forward(nn::Tape<T>& tape, const std::vector<Tensor<T>>& images,
                       const GridSet& grids) {
    if (images.empty()) throw ContractError("model forward: no view images");
    if (static_cast<int>(images.size()) != grids.n_views())
      throw ContractError("model forward: view count mismatch between images and grids");
    if (grids.n_heights() != config.n_heights)
      throw ContractError("model forward: grid set heights mismatch");

    ModelOutputs out;
    const int n_views = static_cast<int>(images.size());
    const bool baseline = config.mode == ModelMode::kBaseline;
    const int n_levels = baseline ? 1 : 3;
    if (grids.n_levels() != n_levels)
      throw ContractError("model forward: grid set has " + std::to_string(grids.n_levels()) +
                          " levels, mode needs " + std::to_string(n_levels));

    // Per-view encoder + projection. The encoder weights are shared across
    // views; the tape accumulates their gradients over all views.
    std::vector<std::vector<int>> per_level_views(static_cast<std::size_t>(n_levels));
    for (int v = 0; v < n_views; ++v) {
      int img = tape.leaf(normalize_image(images[static_cast<std::size_t>(v)]));
      const auto raw = backbone_.forward(tape, img);
      const auto enhanced = image_fpn_.forward(tape, raw);
      out.image_features.push_back(enhanced);
      std::array<int, 3> proj{-1, -1, -1};
      for (int li = 0; li < n_levels; ++li) {
        // Baseline projects only the coarsest feature level.
        const int feature = baseline ? enhanced[2] : enhanced[static_cast<std::size_t>(li)];
        const int msp_index = baseline ? 2 : li;
        const int p = msp_[static_cast<std::size_t>(msp_index)].forward(tape, feature, grids, v, li);
        proj[static_cast<std::size_t>(li)] = p;
        per_level_views[static_cast<std::size_t>(li)].push_back(p);
      }
      out.projected.push_back(proj);
    }

    // Cross-view pooling, scale by scale.
    std::array<int, 3> pooled{-1, -1, -1};
    for (int li = 0; li < n_levels; ++li)
      pooled[static_cast<std::size_t>(li)] =
          config.pooling == PoolMode::kMax
              ? nn::view_max(tape, per_level_views[static_cast<std::size_t>(li)])
              : nn::view_mean(tape, per_level_views[static_cast<std::size_t>(li)]);
    out.pooled = pooled;

    std::array<int, 3> features = pooled;
    if (config.mode == ModelMode::kFull) {
      features = bev_fpn_.forward(tape, pooled);
      out.refined = features;
    }

    for (int li = 0; li < n_levels; ++li) {
      const std::size_t head = config.heads_shared ? 0 : static_cast<std::size_t>(li);
      out.occupancy_logits[static_cast<std::size_t>(li)] =
          occ_heads_[head].forward(tape, features[static_cast<std::size_t>(li)]);
      out.offsets[static_cast<std::size_t>(li)] =
          off_heads_[head].forward(tape, features[static_cast<std::size_t>(li)]);
    }
    return out;
  }

  nn::ParamList<T> parameters() {
    nn::ParamList<T> out;
    backbone_.collect(out);
    image_fpn_.collect(out);
    bev_fpn_.collect(out);
    for (auto& m : msp_) m.collect(out);
    for (auto& h : occ_heads_) h.collect(out);
    for (auto& h : off_heads_) h.collect(out);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  /// Images arrive in [0,1]; center them for the stem.
  static Tensor<T> normalize_image(const Tensor<T>& img) {
    Tensor<T> out(img.shape);
    for (std::size_t i = 0; i < img.data.size(); ++i)
      out.data[i] = (img.data[i] - T(0.5)) * T(2);
    return out;
  }

  Fpn<T>& image_fpn() { return image_fpn_; }
  Fpn<T>& bev_fpn() { return bev_fpn_; }

 private:
  Backbone<T> backbone_;
  Fpn<T> image_fpn_;
  Fpn<T> bev_fpn_;
  std::array<MspLevel<T>, 3> msp_;
  std::vector<Head<T>> occ_heads_;
  std::vector<Head<T>> off_heads_;
};

// ---------------------------------------------------------------------------
// Checkpoints: versioned archive of named parameter arrays plus the model
// config (and its hash) needed to rebuild the module tree.
// ---------------------------------------------------------------------------

template <typename T>
void save_checkpoint(const std::filesystem::path& path, Model<T>& model,
                     const json& extra = json::object()) {
  std::string out = "MSCK";
  detail::put_raw(out, kCheckpointFormatVersion);
  json header = {{"config", model.config.to_json()},
                 {"config_hash", hash_hex(model.config.hash())},
                 {"scalar_bytes", static_cast<int>(sizeof(T))},
                 {"extra", extra}};
  const std::string hs = header.dump();
  detail::put_raw(out, static_cast<std::uint64_t>(hs.size()));
  out += hs;
  auto params = model.parameters();
  detail::put_raw(out, static_cast<std::uint64_t>(params.size()));
  for (auto* p : params) {
    detail::put_raw(out, static_cast<std::uint64_t>(p->name.size()));
    out += p->name;
    detail::put_raw(out, static_cast<int>(p->value.shape.size()));
    for (int d : p->value.shape) detail::put_raw(out, d);
    out.append(reinterpret_cast<const char*>(p->value.data.data()),
               p->value.data.size() * sizeof(T));
  }
  write_file(path, out);
}

struct CheckpointInfo {
  ModelConfig config;
  json extra;
};

/// Reads header + parameter arrays. `loose` permits loading a name-filtered
/// subset (the pretrained-backbone hook); otherwise names must match the
/// model exactly.
template <typename T>
CheckpointInfo load_checkpoint(const std::filesystem::path& path, Model<T>* model,
                               bool loose = false, const std::string& name_prefix = "") {
  const std::string in = read_file(path);
  std::size_t pos = 0;
  if (in.size() < 4 || in.compare(0, 4, "MSCK") != 0)
    throw IoError("not a checkpoint file: " + path.string());
  pos = 4;
  const auto version = detail::get_raw<unsigned>(in, pos);
  if (version != kCheckpointFormatVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " +
                  path.string());
  const auto hs = detail::get_raw<std::uint64_t>(in, pos);
  if (pos + hs > in.size()) throw IoError("truncated checkpoint header: " + path.string());
  const json header = json::parse(in.substr(pos, hs));
  pos += hs;
  CheckpointInfo info;
  info.config = ModelConfig::from_json(header.at("config"));
  info.extra = header.value("extra", json::object());
  const int scalar_bytes = header.at("scalar_bytes").get<int>();
  if (scalar_bytes != 4 && scalar_bytes != 8)
    throw IoError("unsupported scalar width in checkpoint: " + path.string());

  std::map<std::string, nn::Parameter<T>*> by_name;
  if (model) {
    for (auto* p : model->parameters()) by_name[p->name] = p;
  }
  std::size_t filled = 0;
  const auto count = detail::get_raw<std::uint64_t>(in, pos);
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = detail::get_raw<std::uint64_t>(in, pos);
    if (pos + name_len > in.size()) throw IoError("truncated checkpoint: " + path.string());
    const std::string name = in.substr(pos, name_len);
    pos += name_len;
    const int rank = detail::get_raw<int>(in, pos);
    std::vector<int> shape(static_cast<std::size_t>(rank));
    for (auto& d : shape) d = detail::get_raw<int>(in, pos);
    const std::size_t numel = Tensor<T>::numel_of(shape);
    const std::size_t bytes = numel * static_cast<std::size_t>(scalar_bytes);
    if (pos + bytes > in.size()) throw IoError("truncated checkpoint: " + path.string());
    nn::Parameter<T>* dst = nullptr;
    if (model) {
      auto it = by_name.find(name);
      if (it != by_name.end() &&
          (name_prefix.empty() || name.starts_with(name_prefix)))
        dst = it->second;
      else if (!loose)
        throw IoError("checkpoint parameter '" + name + "' has no destination in model");
    }
    if (dst) {
      if (dst->value.shape != shape)
        throw IoError("checkpoint parameter '" + name + "' shape mismatch");
      if (scalar_bytes == static_cast<int>(sizeof(T))) {
        std::memcpy(dst->value.data.data(), in.data() + pos, bytes);
      } else if (scalar_bytes == 4) {
        const float* src = reinterpret_cast<const float*>(in.data() + pos);
        for (std::size_t i = 0; i < numel; ++i) dst->value.data[i] = static_cast<T>(src[i]);
      } else {
        const double* src = reinterpret_cast<const double*>(in.data() + pos);
        for (std::size_t i = 0; i < numel; ++i) dst->value.data[i] = static_cast<T>(src[i]);
      }
      ++filled;
    }
    pos += bytes;
  }
  if (model && !loose && filled != by_name.size())
    throw IoError("checkpoint fills " + std::to_string(filled) + " of " +
                  std::to_string(by_name.size()) + " model parameters");
  return info;
}

/// Pretrained-backbone hook: loads only "backbone.*" entries from an msmvd
/// checkpoint, ignoring the rest. Untested against external checkpoints.
template <typename T>
void load_backbone_weights(const std::filesystem::path& path, Model<T>& model) {
  load_checkpoint(path, &model, /*loose=*/true, "backbone.");
}

}  // namespace msmvd
