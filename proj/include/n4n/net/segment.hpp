#pragma once

#include "n4n/core/error.hpp"
#include "n4n/net/dataset.hpp"
#include "n4n/net/unet.hpp"
#include "n4n/volume/volume.hpp"

namespace n4n::net {

struct Segmentation {
  Volume probability;  // tract probability on the full grid, zero outside the ROI
  Mask mask;           // probability > threshold
  BoundingBox roi;     // the box actually processed
};

/// Grows a box to the nearest extent the network accepts on this grid.
inline BoundingBox fit_roi(const ArchConfig& cfg, const BoundingBox& roi, const std::array<std::size_t, 3>& grid) {
  return fit_box_to_multiple(roi, cfg.roi_multiple(), grid, std::size_t{1} << cfg.depth);
}

/// Runs the network on `roi` of a tensor volume. The box is grown (centred where
/// possible) to a size the network accepts.
inline Segmentation segment(UNet<float>& net, const Volume& tensor, const BoundingBox& roi, double threshold = 0.5) {
  const ArchConfig& cfg = net.config();
  require(tensor.channels() == cfg.in_channels, ErrorCode::ShapeMismatch,
          "input has " + std::to_string(tensor.channels()) + " channels, network expects " +
              std::to_string(cfg.in_channels));
  require(roi.within(tensor), ErrorCode::ShapeMismatch, "ROI lies outside the volume");
  const BoundingBox box = fit_roi(cfg, roi, {tensor.nx(), tensor.ny(), tensor.nz()});
  const auto ext = box.extents();
  cfg.check_roi(ext);

  nn::NdTensor<float> x = to_tensor(crop(tensor, box));
  nn::NdTensor<float> in(nn::Shape{1, x.dim(0), x.dim(1), x.dim(2), x.dim(3)}, std::vector<float>(x.values().begin(), x.values().end()));
  x = nn::NdTensor<float>();
  auto prob = net.forward(in, nn::Mode::Eval);
  net.clear_cache();

  const Volume grid = tensor.like(1);
  auto p1 = prob.slice(0, 1);
  Volume patch = crop(grid, box);
  std::copy(p1.begin(), p1.end(), patch.values().begin());
  Segmentation out{paste(grid, patch, box), Mask(), box};
  out.mask = Mask::threshold(out.probability, static_cast<float>(threshold));
  return out;
}

}  // namespace n4n::net
