#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "n4n/core/error.hpp"
#include "n4n/nn/tensor.hpp"

namespace n4n::nn {

enum class OptimizerKind { Adam, Nadam };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "nadam"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "nadam") return OptimizerKind::Nadam;
  fail(ErrorCode::InvalidArgument, "unknown optimizer '" + s + "' (expected adam or nadam)");
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  OptimizerKind kind = OptimizerKind::Adam;
};

/// Adam / Nadam with per-parameter first and second moments.
template <class S>
class Adam {
 public:
  std::vector<NdTensor<S>> m;
  std::vector<NdTensor<S>> v;
  std::uint64_t t = 0;

  Adam() = default;
  explicit Adam(AdamOptions opts) : opts_(opts) {}

  const AdamOptions& options() const { return opts_; }

  void step(const std::vector<Parameter<S>*>& params, double lr) {
    if (m.empty()) {
      for (auto* p : params) {
        m.emplace_back(p->value.shape());
        v.emplace_back(p->value.shape());
      }
    }
    require(m.size() == params.size(), ErrorCode::ShapeMismatch, "optimizer state does not match parameters");
    for (std::size_t j = 0; j < params.size(); ++j) {
      require(m[j].size() == params[j]->value.size(), ErrorCode::ShapeMismatch,
              "optimizer state shape mismatch for " + params[j]->name);
      require(params[j]->grad.all_finite(), ErrorCode::NonFiniteGrad, "non-finite gradient in " + params[j]->name);
    }
    ++t;
    const double b1 = opts_.beta1, b2 = opts_.beta2;
    const double c1 = 1 - std::pow(b1, double(t));
    const double c2 = 1 - std::pow(b2, double(t));
    for (std::size_t j = 0; j < params.size(); ++j) {
      auto& p = *params[j];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        const double mi = b1 * m[j][i] + (1 - b1) * g;
        const double vi = b2 * v[j][i] + (1 - b2) * g * g;
        m[j][i] = static_cast<S>(mi);
        v[j][i] = static_cast<S>(vi);
        const double mhat = mi / c1, vhat = vi / c2;
        const double dir = opts_.kind == OptimizerKind::Adam ? mhat : b1 * mhat + (1 - b1) * g / c1;
        if (lr != 0) p.value[i] = static_cast<S>(p.value[i] - lr * dir / (std::sqrt(vhat) + opts_.eps));
      }
    }
  }

 private:
  AdamOptions opts_;
};

/// Reduce-on-plateau learning-rate schedule driven by validation loss.
struct PlateauScheduler {
  double lr = 0.1;
  std::size_t patience = 15;
  double factor = 0.5;
  double min_delta = 1e-6;
  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;

  /// Returns true when the learning rate was reduced at this epoch.
  bool step(double val_loss) {
    if (val_loss < best - min_delta) {
      best = val_loss;
      bad_epochs = 0;
      return false;
    }
    if (++bad_epochs >= patience) {
      lr *= factor;
      bad_epochs = 0;
      return true;
    }
    return false;
  }
};

}  // namespace n4n::nn
