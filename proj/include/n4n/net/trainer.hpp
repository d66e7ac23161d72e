#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "n4n/core/error.hpp"
#include "n4n/net/checkpoint.hpp"
#include "n4n/net/config.hpp"
#include "n4n/net/dataset.hpp"
#include "n4n/net/unet.hpp"
#include "n4n/nn/loss.hpp"
#include "n4n/nn/optim.hpp"

namespace n4n::net {

// ---- weights <-> checkpoint ----------------------------------------------------

template <class S>
void store_weights(UNet<S>& net, Checkpoint& ck) {
  for (auto* p : net.params()) ck.blobs.push_back(to_blob(p->name, p->value));
  for (const auto& b : net.buffers()) ck.blobs.push_back(to_blob(b.name, *b.value));
}

template <class S>
void restore_weights(UNet<S>& net, const Checkpoint& ck) {
  for (auto* p : net.params()) from_blob(ck.at(p->name), p->value);
  for (const auto& b : net.buffers()) from_blob(ck.at(b.name), *b.value);
}

inline std::unique_ptr<UNet<float>> network_from(const Checkpoint& ck) {
  auto net = std::make_unique<UNet<float>>(ck.config);
  restore_weights(*net, ck);
  return net;
}

// ---- batching ---------------------------------------------------------------------

struct Batch {
  nn::NdTensor<float> image;  // (N, C, D, H, W)
  nn::NdTensor<float> label;  // (N, 1, D, H, W)
};

inline Batch stack(const std::vector<Sample>& samples) {
  require(!samples.empty(), ErrorCode::EmptyDataset, "empty batch");
  const auto& s0 = samples.front();
  require(s0.image.rank() == 4 && s0.label.rank() == 4 && s0.label.dim(0) == 1, ErrorCode::ShapeMismatch,
          "samples must be (C,D,H,W) images with (1,D,H,W) labels");
  nn::Shape is{samples.size()}, ls{samples.size()};
  is.insert(is.end(), s0.image.shape().begin(), s0.image.shape().end());
  ls.insert(ls.end(), s0.label.shape().begin(), s0.label.shape().end());
  Batch b{nn::NdTensor<float>(is), nn::NdTensor<float>(ls)};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    require(samples[i].image.shape() == s0.image.shape() && samples[i].label.shape() == s0.label.shape(),
            ErrorCode::ShapeMismatch, "samples in a batch must share a shape");
    std::copy(samples[i].image.values().begin(), samples[i].image.values().end(),
              b.image.data() + i * s0.image.size());
    std::copy(samples[i].label.values().begin(), samples[i].label.values().end(),
              b.label.data() + i * s0.label.size());
  }
  return b;
}

/// Tract channel (index 1) of a two-class probability map.
template <class S>
nn::NdTensor<S> tract_channel(const nn::NdTensor<S>& prob) {
  nn::NdTensor<S> p(nn::Shape{prob.batch(), 1, prob.dim(2), prob.dim(3), prob.dim(4)});
  for (std::size_t n = 0; n < prob.batch(); ++n) std::copy_n(prob.slice(n, 1).data(), prob.spatial(), p.slice(n, 0).data());
  return p;
}

/// Loss of a probability map against labels and the matching dL/dprob.
template <class S>
nn::LossResult<S> network_loss(const ArchConfig& cfg, const nn::NdTensor<S>& prob, const nn::NdTensor<S>& label) {
  auto r = nn::compute_loss(cfg.loss, tract_channel(prob), label, cfg.tract_weight);
  nn::NdTensor<S> dprob(prob.shape());
  for (std::size_t n = 0; n < prob.batch(); ++n) std::copy_n(r.grad.slice(n, 0).data(), prob.spatial(), dprob.slice(n, 1).data());
  r.grad = std::move(dprob);
  return r;
}

/// Pooled Dice of P > 0.5 against the label over a batch.
inline double batch_dice(const nn::NdTensor<float>& prob, const nn::NdTensor<float>& label) {
  std::size_t inter = 0, a = 0, b = 0;
  for (std::size_t n = 0; n < prob.batch(); ++n) {
    auto p = prob.slice(n, 1);
    auto y = label.slice(n, 0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const bool s = p[i] > 0.5f, t = y[i] > 0.5f;
      inter += s && t;
      a += s;
      b += t;
    }
  }
  return a + b == 0 ? 1.0 : 2.0 * double(inter) / double(a + b);
}

// ---- training -----------------------------------------------------------------------

class DivergedError : public Error {
 public:
  DivergedError(const std::string& what, Checkpoint last)
      : Error(ErrorCode::DivergedTraining, what), last_finite(std::move(last)) {}
  Checkpoint last_finite;
};

struct EpochReport {
  std::size_t epoch;
  double train_loss;
  double val_loss;
  double train_dice;  // NaN when not tracked
  double lr;
};

struct TrainOptions {
  const Dataset* validation = nullptr;  // carved from the training data when absent
  bool track_train_dice = false;        // eval-mode Dice on the training set each epoch
  std::size_t stop_after_epoch = 0;     // nonzero: stop once this epoch completes
  std::string last_checkpoint_path;     // nonempty: rewritten after every epoch
  std::function<void(const EpochReport&)> on_epoch;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> train_dice;
};

/// Fisher-Yates with raw engine draws so the order is identical across standard libraries.
inline void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
}

namespace detail {

inline std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void set_rng_state(std::mt19937_64& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
  require(!is.fail(), ErrorCode::ParseError, "bad RNG state in checkpoint");
}

inline double evaluate_loss(UNet<float>& net, const ArchConfig& cfg, const Dataset& ds, double* dice = nullptr) {
  double acc = 0, weight = 0;
  std::size_t inter = 0, a = 0, b = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Batch bt = stack({ds.load(i)});
    auto prob = net.forward(bt.image, nn::Mode::Eval);
    const double w = double(bt.label.size());
    acc += network_loss(cfg, prob, bt.label).value * w;
    weight += w;
    if (dice) {
      auto p = prob.slice(0, 1);
      auto y = bt.label.slice(0, 0);
      for (std::size_t v = 0; v < p.size(); ++v) {
        const bool s = p[v] > 0.5f, t = y[v] > 0.5f;
        inter += s && t;
        a += s;
        b += t;
      }
    }
  }
  net.clear_cache();
  if (dice) *dice = a + b == 0 ? 1.0 : 2.0 * double(inter) / double(a + b);
  return acc / weight;
}

}  // namespace detail

/// Eval-mode pooled Dice of a network over a dataset.
inline double dataset_dice(UNet<float>& net, const Dataset& ds) {
  double d = 0;
  detail::evaluate_loss(net, net.config(), ds, &d);
  return d;
}

/// Trains a fresh network (or continues `resume`, or fine-tunes from `init`).
inline TrainResult train(const Dataset& data, const ArchConfig& cfg_in, const TrainOptions& opts = {},
                         const Checkpoint* resume = nullptr, const Checkpoint* init = nullptr) {
  const ArchConfig cfg = resume ? resume->config : cfg_in;
  cfg.validate();
  require(data.size() > 0, ErrorCode::EmptyDataset, "training dataset is empty");

  UNet<float> net(cfg);
  net.init(cfg.seed);
  nn::Adam<float> opt({0.9, 0.999, 1e-8, cfg.optimizer});
  nn::PlateauScheduler sched{cfg.lr, cfg.patience, cfg.lr_factor, cfg.min_delta};
  std::mt19937_64 rng(cfg.seed);

  // Validation split is drawn first so it does not depend on later state.
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::unique_ptr<SubsetDataset> carved_train, carved_val;
  const Dataset* train_ds = &data;
  const Dataset* val_ds = opts.validation;
  if (!val_ds) {
    shuffle_indices(order, rng);
    const auto n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * double(data.size())));
    if (n_val > 0 && n_val < data.size()) {
      std::vector<std::size_t> v(order.begin(), order.begin() + std::ptrdiff_t(n_val));
      std::vector<std::size_t> t(order.begin() + std::ptrdiff_t(n_val), order.end());
      std::sort(v.begin(), v.end());
      std::sort(t.begin(), t.end());
      carved_val = std::make_unique<SubsetDataset>(data, v);
      carved_train = std::make_unique<SubsetDataset>(data, t);
      train_ds = carved_train.get();
      val_ds = carved_val.get();
    } else {
      val_ds = &data;
    }
  }

  TrainResult res;
  TrainState st;
  st.lr = cfg.lr;
  if (resume) {
    restore_weights(net, *resume);
    const auto params = net.params();
    opt.m.clear();
    opt.v.clear();
    if (resume->state.adam_t > 0)
      for (auto* p : params) {
        opt.m.emplace_back(p->value.shape());
        opt.v.emplace_back(p->value.shape());
        from_blob(resume->at("adam.m:" + p->name), opt.m.back());
        from_blob(resume->at("adam.v:" + p->name), opt.v.back());
      }
    opt.t = resume->state.adam_t;
    st = resume->state;
    sched.lr = st.lr;
    sched.best = st.sched_best;
    sched.bad_epochs = st.sched_bad;
    detail::set_rng_state(rng, st.rng);
    res.train_loss = st.train_loss;
    res.val_loss = st.val_loss;
    res.train_dice = st.train_dice;
  } else if (init) {
    restore_weights(net, *init);
  }

  auto weights = [&]() {
    Checkpoint ck;
    store_weights(net, ck);
    return std::move(ck.blobs);
  };
  auto sync_state = [&]() {
    st.lr = sched.lr;
    st.sched_best = sched.best;
    st.sched_bad = sched.bad_epochs;
    st.adam_t = opt.t;
    st.rng = detail::rng_state(rng);
    st.train_loss = res.train_loss;
    st.val_loss = res.val_loss;
    st.train_dice = res.train_dice;
  };
  // Resumable state: current weights, optimizer moments and the best weights so far.
  auto snapshot = [&]() {
    sync_state();
    Checkpoint ck{cfg, st, weights()};
    if (opt.t > 0) {
      const auto& params = net.params();
      for (std::size_t j = 0; j < params.size(); ++j) {
        ck.blobs.push_back(to_blob("adam.m:" + params[j]->name, opt.m[j]));
        ck.blobs.push_back(to_blob("adam.v:" + params[j]->name, opt.v[j]));
      }
    }
    for (const auto& b : res.best.blobs) ck.blobs.push_back({"best:" + b.name, b.shape, b.data});
    return ck;
  };

  sync_state();
  res.best = Checkpoint{cfg, st, weights()};
  if (resume) {
    for (auto& b : res.best.blobs)
      if (const Blob* kept = resume->find("best:" + b.name)) b.data = kept->data;
    res.best.state.epoch = st.best_epoch;
  }
  res.last = snapshot();

  std::vector<std::size_t> idx(train_ds->size());
  for (std::size_t epoch = st.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    shuffle_indices(idx, rng);
    double loss_sum = 0, loss_w = 0;
    for (std::size_t b0 = 0; b0 < idx.size(); b0 += cfg.batch_size) {
      std::vector<Sample> samples;
      for (std::size_t j = b0; j < std::min(idx.size(), b0 + cfg.batch_size); ++j) samples.push_back(train_ds->load(idx[j]));
      Batch batch = stack(samples);
      samples.clear();
      net.zero_grad();
      auto prob = net.forward(batch.image, nn::Mode::Train);
      auto lr = network_loss(cfg, prob, batch.label);
      if (!std::isfinite(lr.value))
        throw DivergedError("non-finite training loss at epoch " + std::to_string(epoch), res.last);
      net.backward(lr.grad);
      try {
        opt.step(net.params(), sched.lr);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFiniteGrad) throw;
        throw DivergedError(std::string(e.what()) + " at epoch " + std::to_string(epoch), res.last);
      }
      loss_sum += lr.value * double(batch.label.size());
      loss_w += double(batch.label.size());
    }
    net.clear_cache();
    const double train_loss = loss_sum / loss_w;
    const double val_loss = detail::evaluate_loss(net, cfg, *val_ds);
    if (!std::isfinite(val_loss))
      throw DivergedError("non-finite validation loss at epoch " + std::to_string(epoch), res.last);
    double dice = std::numeric_limits<double>::quiet_NaN();
    if (opts.track_train_dice || cfg.target_dice) dice = dataset_dice(net, *train_ds);
    res.train_loss.push_back(train_loss);
    res.val_loss.push_back(val_loss);
    res.train_dice.push_back(dice);
    const bool improved = val_loss < st.best_val_loss;
    if (improved) {
      st.best_val_loss = val_loss;
      st.best_epoch = epoch;
    }
    sched.step(val_loss);
    st.epoch = epoch;
    if (improved) {
      sync_state();
      res.best = Checkpoint{cfg, st, weights()};
    }
    res.last = snapshot();
    if (!opts.last_checkpoint_path.empty()) save_checkpoint(opts.last_checkpoint_path, res.last);
    if (opts.on_epoch) opts.on_epoch({epoch, train_loss, val_loss, dice, sched.lr});
    if (cfg.target_dice && dice >= *cfg.target_dice) break;
    if (opts.stop_after_epoch && epoch >= opts.stop_after_epoch) break;
  }
  return res;
}

/// Trains one model on the union of left and right homologous tract data.
inline TrainResult pretrain_bilateral(const Dataset& left, const Dataset& right, const ArchConfig& cfg,
                                      const TrainOptions& opts = {}) {
  require(left.size() > 0 && right.size() > 0, ErrorCode::EmptyDataset, "both hemispheres need training data");
  ConcatDataset both(left, right);
  return train(both, cfg, opts);
}

}  // namespace n4n::net
