#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "n4n/core/error.hpp"
#include "n4n/core/fileio.hpp"
#include "n4n/nn/loss.hpp"
#include "n4n/nn/optim.hpp"
#include "n4n/volume/volume.hpp"

namespace n4n::net {

enum class Variant { Proposed, Ext };

inline std::string to_string(Variant v) { return v == Variant::Proposed ? "proposed" : "ext"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "proposed") return Variant::Proposed;
  if (s == "ext") return Variant::Ext;
  fail(ErrorCode::InvalidArgument, "unknown variant '" + s + "' (expected proposed or ext)");
}

/// Architecture plus training schedule for one per-tract model.
struct ArchConfig {
  Variant variant = Variant::Proposed;
  std::size_t depth = 3;  // resolution levels; depth - 1 downsamplings
  std::size_t base_channels = 16;
  std::vector<std::size_t> channels;  // empty: base_channels * 2^level
  std::size_t in_channels = 6;
  std::size_t kernel = 3;
  nn::LossKind loss = nn::LossKind::Wip;
  double tract_weight = 3.0;
  nn::OptimizerKind optimizer = nn::OptimizerKind::Adam;
  double lr = 0.1;
  std::size_t batch_size = 2;
  std::size_t patience = 15;
  double lr_factor = 0.5;
  double min_delta = 1e-6;
  std::size_t epochs = 150;
  double val_fraction = 0.1;
  std::optional<double> target_dice;  // stop once training Dice reaches this
  std::optional<std::array<std::size_t, 3>> roi;            // ROI extents (x, y, z)
  std::optional<std::array<std::int64_t, 3>> roi_origin;    // lower corner of the ROI on the common grid
  std::uint64_t seed = 42;

  std::vector<std::size_t> level_channels() const {
    if (!channels.empty()) return channels;
    std::vector<std::size_t> c;
    for (std::size_t l = 0; l < depth; ++l) c.push_back(base_channels << l);
    return c;
  }

  /// Spatial dims must be a multiple of this for the encoder/decoder to line up.
  std::size_t roi_multiple() const { return std::size_t{1} << (depth - 1); }

  void validate() const {
    require(depth >= 1, ErrorCode::InvalidArgument, "depth must be at least 1");
    require(depth < 16, ErrorCode::InvalidArgument, "depth is unreasonably large");
    require(channels.empty() || channels.size() == depth, ErrorCode::InvalidArgument,
            "channels list must have one entry per level");
    for (auto c : level_channels()) require(c > 0, ErrorCode::InvalidArgument, "channel counts must be positive");
    require(in_channels > 0, ErrorCode::InvalidArgument, "in_channels must be positive");
    require(kernel % 2 == 1, ErrorCode::InvalidArgument, "kernel size must be odd");
    require(tract_weight > 0, ErrorCode::InvalidArgument, "tract weight W must be positive");
    require(lr >= 0, ErrorCode::InvalidArgument, "learning rate must be non-negative");
    require(batch_size >= 1, ErrorCode::InvalidArgument, "batch size must be at least 1");
    require(lr_factor > 0 && lr_factor <= 1, ErrorCode::InvalidArgument, "lr_factor must be in (0, 1]");
    require(val_fraction >= 0 && val_fraction < 1, ErrorCode::InvalidArgument, "val_fraction must be in [0, 1)");
    if (roi) check_roi(*roi);
    require(!roi_origin || roi, ErrorCode::InvalidArgument, "roi_origin needs roi extents");
    if (roi_origin)
      for (auto o : *roi_origin) require(o >= 0, ErrorCode::InvalidArgument, "roi_origin must be non-negative");
  }

  std::optional<BoundingBox> roi_box() const {
    if (!roi || !roi_origin) return std::nullopt;
    BoundingBox b;
    for (int a = 0; a < 3; ++a) {
      b.lo[a] = (*roi_origin)[a];
      b.hi[a] = b.lo[a] + std::int64_t((*roi)[a]) - 1;
    }
    return b;
  }

  void set_roi_box(const BoundingBox& b) {
    roi = b.extents();
    roi_origin = b.lo;
  }

  void check_roi(const std::array<std::size_t, 3>& dims) const {
    const std::size_t min_side = std::size_t{1} << depth;
    for (auto d : dims)
      require(d >= min_side, ErrorCode::RoiTooSmall,
              "ROI side " + std::to_string(d) + " is smaller than 2^depth = " + std::to_string(min_side));
    for (auto d : dims)
      require(d % roi_multiple() == 0, ErrorCode::RoiTooSmall,
              "ROI side " + std::to_string(d) + " is not a multiple of " + std::to_string(roi_multiple()));
  }
};

inline void to_json(nlohmann::json& j, const ArchConfig& c) {
  j = nlohmann::json{{"variant", to_string(c.variant)},
                     {"depth", c.depth},
                     {"base_channels", c.base_channels},
                     {"channels", c.level_channels()},
                     {"in_channels", c.in_channels},
                     {"kernel", c.kernel},
                     {"loss", nn::to_string(c.loss)},
                     {"tract_weight", c.tract_weight},
                     {"optimizer", nn::to_string(c.optimizer)},
                     {"lr", c.lr},
                     {"batch_size", c.batch_size},
                     {"patience", c.patience},
                     {"lr_factor", c.lr_factor},
                     {"min_delta", c.min_delta},
                     {"epochs", c.epochs},
                     {"val_fraction", c.val_fraction},
                     {"seed", c.seed}};
  j["target_dice"] = c.target_dice ? nlohmann::json(*c.target_dice) : nlohmann::json(nullptr);
  j["roi"] = c.roi ? nlohmann::json(*c.roi) : nlohmann::json(nullptr);
  j["roi_origin"] = c.roi_origin ? nlohmann::json(*c.roi_origin) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, ArchConfig& c) {
  static const std::vector<std::string> known = {
      "variant", "depth", "base_channels", "channels", "in_channels", "kernel", "loss", "tract_weight",
      "optimizer", "lr", "batch_size", "patience", "lr_factor", "min_delta", "epochs", "val_fraction",
      "target_dice", "roi", "roi_origin", "seed"};
  require(j.is_object(), ErrorCode::ParseError, "config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    require(std::find(known.begin(), known.end(), it.key()) != known.end(), ErrorCode::ParseError,
            "unknown config key '" + it.key() + "'");
  try {
    if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
    if (j.contains("depth")) c.depth = j["depth"].get<std::size_t>();
    if (j.contains("base_channels")) c.base_channels = j["base_channels"].get<std::size_t>();
    if (j.contains("channels")) c.channels = j["channels"].get<std::vector<std::size_t>>();
    if (j.contains("in_channels")) c.in_channels = j["in_channels"].get<std::size_t>();
    if (j.contains("kernel")) c.kernel = j["kernel"].get<std::size_t>();
    if (j.contains("loss")) c.loss = nn::parse_loss(j["loss"].get<std::string>());
    if (j.contains("tract_weight")) c.tract_weight = j["tract_weight"].get<double>();
    if (j.contains("optimizer")) c.optimizer = nn::parse_optimizer(j["optimizer"].get<std::string>());
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("patience")) c.patience = j["patience"].get<std::size_t>();
    if (j.contains("lr_factor")) c.lr_factor = j["lr_factor"].get<double>();
    if (j.contains("min_delta")) c.min_delta = j["min_delta"].get<double>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<std::size_t>();
    if (j.contains("val_fraction")) c.val_fraction = j["val_fraction"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("target_dice") && !j["target_dice"].is_null()) c.target_dice = j["target_dice"].get<double>();
    if (j.contains("roi") && !j["roi"].is_null()) c.roi = j["roi"].get<std::array<std::size_t, 3>>();
    if (j.contains("roi_origin") && !j["roi_origin"].is_null())
      c.roi_origin = j["roi_origin"].get<std::array<std::int64_t, 3>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("bad config value: ") + e.what());
  }
  if (c.channels.empty() == false && !j.contains("depth")) c.depth = c.channels.size();
  c.validate();
}

inline ArchConfig load_config(const std::string& path) {
  const auto bytes = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, path + ": " + e.what());
  }
  return j.get<ArchConfig>();
}

}  // namespace n4n::net
