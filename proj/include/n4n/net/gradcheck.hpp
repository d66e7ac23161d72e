#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "n4n/net/config.hpp"
#include "n4n/net/trainer.hpp"
#include "n4n/net/unet.hpp"
#include "n4n/nn/gradcheck.hpp"

namespace n4n::net {

struct NetworkGradCheckOptions {
  std::size_t side = 16;  // cubic ROI edge
  std::size_t batch = 2;
  double tolerance = 1e-4;
  nn::GradCheckOptions check;
  /// Scales every convolution weight gradient by (1 + mutate) before checking.
  double mutate = 0;
};

/// Central-difference check of the whole network (input and every parameter)
/// in double precision, on random input and labels drawn from cfg.seed.
inline nn::GradCheckReport network_grad_check(const ArchConfig& cfg, const NetworkGradCheckOptions& opts = {}) {
  cfg.validate();
  cfg.check_roi({opts.side, opts.side, opts.side});
  std::mt19937_64 rng(cfg.seed);
  UNet<double> net(cfg);
  net.init(cfg.seed);
  nn::NdTensor<double> x(nn::Shape{opts.batch, cfg.in_channels, opts.side, opts.side, opts.side});
  std::normal_distribution<double> nd;
  for (auto& v : x.values()) v = nd(rng);
  nn::NdTensor<double> y(nn::Shape{opts.batch, 1, opts.side, opts.side, opts.side});
  for (auto& v : y.values()) v = rng() % 4 == 0 ? 1.0 : 0.0;

  net.zero_grad();
  auto lr = network_loss(cfg, net.forward(x, nn::Mode::Train), y);
  auto dx = net.backward(lr.grad);
  net.clear_cache();
  if (opts.mutate != 0)
    for (auto* p : net.params())
      if (p->name.ends_with(".weight"))
        for (auto& g : p->grad.values()) g *= 1.0 + opts.mutate;

  std::vector<nn::GradProbe> probes{{"input", x.values(), dx.values()}};
  for (auto* p : net.params()) probes.push_back({p->name, p->value.values(), p->grad.values()});
  return nn::grad_check([&] { return network_loss(cfg, net.forward(x, nn::Mode::Train), y).value; }, probes,
                        opts.tolerance, opts.check, [&] { return net.activation_pattern(); });
}

}  // namespace n4n::net
