#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "n4n/net/checkpoint.hpp"
#include "n4n/net/config.hpp"
#include "n4n/net/gradcheck.hpp"
#include "n4n/net/segment.hpp"
#include "n4n/net/trainer.hpp"
#include "n4n/net/unet.hpp"
#include "n4n/nn/gradcheck.hpp"
#include "n4n/synthetic.hpp"
#include "support/nn_helpers.hpp"
#include "support/temp_dir.hpp"

using namespace n4n;
using namespace n4n::net;
using test_support::probe;
using test_support::randn;

namespace {

ArchConfig small_config(std::size_t depth, std::size_t base, Variant v = Variant::Proposed) {
  ArchConfig c;
  c.variant = v;
  c.depth = depth;
  c.base_channels = base;
  return c;
}

std::size_t conv_params(std::size_t cin, std::size_t cout, std::size_t k) { return cin * cout * k * k * k + cout; }

// conv + BN(gamma, beta) + PReLU(a)
std::size_t unit_params(std::size_t cin, std::size_t cout, std::size_t k) { return conv_params(cin, cout, k) + 3 * cout; }

MemoryDataset phantoms(std::size_t count, std::size_t n, std::uint64_t seed, int side = 0) {
  std::mt19937_64 rng(seed);
  MemoryDataset ds;
  for (std::size_t i = 0; i < count; ++i) {
    auto ph = synth::ellipsoid_phantom(n, rng, 0.1e-3, side);
    ds.add(make_sample(ph.tensor, ph.label));
  }
  return ds;
}

ArchConfig quick_train_config() {
  ArchConfig c = small_config(2, 4);
  c.epochs = 4;
  c.batch_size = 2;
  c.lr = 0.01;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Build, ParameterCountDepthOne) {
  UNet<float> net(small_config(1, 4));
  // conv 6->4 (652) + BN (8) + PReLU (4) + conv 4->4 (436) + BN (8) + PReLU (4) + head 4->2 (10)
  EXPECT_EQ(net.parameter_count(), 1122u);
  EXPECT_EQ(net.parameter_count(), unit_params(6, 4, 3) + unit_params(4, 4, 3) + conv_params(4, 2, 1));
}

TEST(Build, ParameterCountTwoLevels) {
  UNet<float> net(small_config(2, 8));
  const std::size_t enc = unit_params(6, 8, 3) + unit_params(8, 8, 3) + unit_params(8, 16, 3) + unit_params(16, 16, 3);
  const std::size_t dec = unit_params(24, 8, 3) + unit_params(8, 8, 3);
  EXPECT_EQ(net.parameter_count(), enc + dec + conv_params(8, 2, 1));
}

TEST(Build, ExtHasMoreParameters) {
  for (std::size_t depth : {1u, 2u, 3u}) {
    UNet<float> a(small_config(depth, 4)), b(small_config(depth, 4, Variant::Ext));
    EXPECT_GT(b.parameter_count(), a.parameter_count()) << depth;
  }
  UNet<float> e(small_config(1, 4, Variant::Ext));
  EXPECT_EQ(e.parameter_count(), 1122u + conv_params(6, 4, 1));
}

TEST(Build, RoiTooSmall) {
  UNet<float> net(small_config(5, 2));
  nn::NdTensor<float> x(nn::Shape{1, 6, 16, 16, 16});
  try {
    net.forward(x, nn::Mode::Eval);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RoiTooSmall);
  }
  ArchConfig c = small_config(5, 2);
  c.roi = std::array<std::size_t, 3>{16, 16, 16};
  EXPECT_THROW(c.validate(), Error);
  UNet<float> ok(small_config(3, 2));
  nn::NdTensor<float> odd(nn::Shape{1, 6, 16, 18, 16});
  EXPECT_THROW(ok.forward(odd, nn::Mode::Eval), Error);
}

TEST(Build, OutputMatchesInputDims) {
  std::mt19937_64 rng(3);
  for (auto v : {Variant::Proposed, Variant::Ext})
    for (int trial = 0; trial < 4; ++trial) {
      const std::size_t depth = 1 + rng() % 3, m = std::size_t{1} << (depth - 1), lo = std::size_t{1} << depth;
      std::array<std::size_t, 3> d{};
      for (auto& s : d) s = lo + m * (rng() % 3);
      UNet<float> net(small_config(depth, 2, v));
      net.init(trial);
      nn::NdTensor<float> x = randn({2, 6, d[0], d[1], d[2]}, rng).cast<float>();
      auto p = net.forward(x, nn::Mode::Train);
      EXPECT_EQ(p.shape(), (nn::Shape{2, 2, d[0], d[1], d[2]}));
      for (std::size_t i = 0; i < p.spatial(); ++i) ASSERT_NEAR(p.slice(0, 0)[i] + p.slice(0, 1)[i], 1.0f, 1e-6f);
    }
}

TEST(Build, FullNetworkGradient) {
  for (auto v : {Variant::Proposed, Variant::Ext}) {
    ArchConfig cfg = small_config(2, 4, v);
    cfg.seed = 11;
    const auto rep = network_grad_check(cfg);
    EXPECT_LT(rep.max_rel_error, 1e-4) << to_string(v) << " " << rep.worst;
    EXPECT_EQ(rep.checked, 256u);
  }
}

TEST(Build, MutatedBackwardFailsNetworkCheck) {
  ArchConfig cfg = small_config(2, 4);
  const auto rep = network_grad_check(cfg, {.mutate = 0.01});
  EXPECT_FALSE(rep.passed());
}

TEST(Build, EvalForwardIsRepeatable) {
  std::mt19937_64 rng(4);
  UNet<float> net(small_config(2, 4));
  net.init(2);
  auto x = randn({1, 6, 8, 8, 8}, rng).cast<float>();
  auto a = net.forward(x, nn::Mode::Eval);
  auto b = net.forward(x, nn::Mode::Eval);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);
}

TEST(Config, JsonRoundTrip) {
  ArchConfig c = small_config(2, 8, Variant::Ext);
  c.loss = nn::LossKind::Wce;
  c.optimizer = nn::OptimizerKind::Nadam;
  c.target_dice = 0.9;
  c.roi = std::array<std::size_t, 3>{32, 16, 24};
  c.roi_origin = std::array<std::int64_t, 3>{1, 2, 3};
  nlohmann::json j = c;
  ArchConfig d = j.get<ArchConfig>();
  EXPECT_EQ(nlohmann::json(d), j);
  EXPECT_EQ(d.level_channels(), (std::vector<std::size_t>{8, 16}));
  EXPECT_EQ(d.roi_box()->hi, (std::array<std::int64_t, 3>{32, 17, 26}));
}

TEST(Config, RejectsBadInput) {
  auto code = [](const char* text) {
    try {
      nlohmann::json::parse(text).get<ArchConfig>();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  EXPECT_EQ(code(R"({"depht": 2})"), ErrorCode::ParseError);
  EXPECT_EQ(code(R"({"depth": "two"})"), ErrorCode::ParseError);
  EXPECT_THROW(nlohmann::json::parse(R"({"tract_weight": 0})").get<ArchConfig>(), Error);
  EXPECT_THROW(nlohmann::json::parse(R"({"depth": 0})").get<ArchConfig>(), Error);
  auto c = nlohmann::json::parse(R"({"channels": [4, 8, 16, 32]})").get<ArchConfig>();
  EXPECT_EQ(c.depth, 4u);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  test_support::TempDir dir;
  UNet<float> net(small_config(2, 4, Variant::Ext));
  net.init(9);
  net.params()[3]->value[0] = -0.0f;
  Checkpoint ck{net.config(), {}, {}};
  ck.state.epoch = 7;
  ck.state.rng = "1 2 3";
  ck.state.train_loss = {0.1, 1.0 / 3.0};
  store_weights(net, ck);
  const auto path = (dir.path() / "m.ckpt").string();
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
  ASSERT_EQ(back.blobs.size(), ck.blobs.size());
  for (std::size_t i = 0; i < ck.blobs.size(); ++i)
    EXPECT_EQ(std::memcmp(back.blobs[i].data.data(), ck.blobs[i].data.data(), 4 * ck.blobs[i].data.size()), 0);
  EXPECT_EQ(back.state.train_loss, ck.state.train_loss);
  EXPECT_TRUE(std::isinf(back.state.best_val_loss));
  auto net2 = network_from(back);
  EXPECT_TRUE(std::signbit(net2->params()[3]->value[0]));
}

TEST(Checkpoint, CorruptFiles) {
  Checkpoint ck{small_config(1, 2), {}, {}};
  UNet<float> net(ck.config);
  store_weights(net, ck);
  std::string bytes = encode_checkpoint(ck);
  auto code = [](const std::string& b) {
    try {
      decode_checkpoint(b);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  std::string bad = bytes;
  bad[1] = 'X';
  EXPECT_EQ(code(bad), ErrorCode::BadMagic);
  EXPECT_EQ(code(bytes.substr(0, bytes.size() - 3)), ErrorCode::TruncatedData);
  EXPECT_EQ(code(bytes.substr(0, 40)), ErrorCode::TruncatedData);
  Checkpoint other{small_config(1, 3), {}, {}};
  EXPECT_THROW(restore_weights(net, [&] {
    UNet<float> n3(other.config);
    store_weights(n3, other);
    return other;
  }()), Error);
}

TEST(Train, EmptyDatasetRejected) {
  MemoryDataset empty;
  try {
    train(empty, quick_train_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
  }
}

TEST(Train, SeededRunsAreBitIdentical) {
  auto ds = phantoms(5, 16, 1);
  auto a = train(ds, quick_train_config());
  auto b = train(ds, quick_train_config());
  ASSERT_EQ(a.train_loss.size(), 4u);
  EXPECT_EQ(a.train_loss, b.train_loss);
  EXPECT_EQ(a.val_loss, b.val_loss);
  EXPECT_EQ(encode_checkpoint(a.last), encode_checkpoint(b.last));
}

TEST(Train, ResumeReproducesCurve) {
  test_support::TempDir dir;
  auto ds = phantoms(5, 16, 2);
  auto full = train(ds, quick_train_config());
  TrainOptions opts;
  opts.stop_after_epoch = 2;
  opts.last_checkpoint_path = (dir.path() / "last.ckpt").string();
  auto part = train(ds, quick_train_config(), opts);
  ASSERT_EQ(part.train_loss.size(), 2u);
  const Checkpoint saved = load_checkpoint(opts.last_checkpoint_path);
  auto rest = train(ds, quick_train_config(), {}, &saved);
  EXPECT_EQ(rest.train_loss, full.train_loss);
  EXPECT_EQ(rest.val_loss, full.val_loss);
  EXPECT_EQ(encode_checkpoint(rest.last), encode_checkpoint(full.last));
  EXPECT_EQ(encode_checkpoint(rest.best), encode_checkpoint(full.best));
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  auto ds = phantoms(3, 16, 3);
  ArchConfig c = quick_train_config();
  c.lr = 0;
  c.epochs = 2;
  auto r = train(ds, c);
  UNet<float> fresh(c);
  fresh.init(c.seed);
  Checkpoint ref{c, {}, {}};
  store_weights(fresh, ref);
  for (auto* p : fresh.params()) {
    const auto& got = r.last.at(p->name).data;
    const auto& want = ref.at(p->name).data;
    EXPECT_EQ(std::memcmp(got.data(), want.data(), 4 * got.size()), 0) << p->name;
  }
}

TEST(Train, DivergenceKeepsLastFiniteState) {
  auto ds = phantoms(2, 16, 4);
  Sample bad = ds.load(0);
  bad.image[0] = std::numeric_limits<float>::infinity();
  MemoryDataset poisoned;
  poisoned.add(bad);
  ArchConfig c = quick_train_config();
  c.val_fraction = 0;
  try {
    train(poisoned, c);
    FAIL();
  } catch (const DivergedError& e) {
    EXPECT_EQ(e.code(), ErrorCode::DivergedTraining);
    EXPECT_EQ(e.last_finite.state.epoch, 0u);
    EXPECT_FALSE(e.last_finite.blobs.empty());
  }
}

TEST(Train, BilateralPretrainAndFineTune) {
  auto left = phantoms(2, 16, 5, -1), right = phantoms(2, 16, 6, 1);
  MemoryDataset none;
  EXPECT_THROW(pretrain_bilateral(left, none, quick_train_config()), Error);
  ArchConfig c = quick_train_config();
  c.epochs = 2;
  auto pre = pretrain_bilateral(left, right, c);
  ArchConfig ft = c;
  ft.epochs = 0;
  auto tuned = train(left, ft, {}, nullptr, &pre.best);
  UNet<float> a(c), b(c);
  restore_weights(a, pre.best);
  restore_weights(b, tuned.best);
  for (std::size_t j = 0; j < a.params().size(); ++j)
    for (std::size_t i = 0; i < a.params()[j]->value.size(); ++i)
      ASSERT_EQ(a.params()[j]->value[i], b.params()[j]->value[i]);
}

TEST(Segment, HalfProbabilityIsBackground) {
  UNet<float> net(small_config(2, 4));
  net.init(1);
  auto params = net.params();
  for (auto* p : params)
    if (p->name.rfind("head.", 0) == 0) p->value.fill(0);
  std::mt19937_64 rng(1);
  auto ph = synth::ellipsoid_phantom(16, rng);
  BoundingBox box{{2, 2, 2}, {13, 13, 13}};
  auto s = segment(net, ph.tensor, box);
  EXPECT_EQ(s.mask.count(), 0u);
  for (std::size_t i = 0; i < s.probability.size(); ++i) {
    const auto v = s.probability.values()[i];
    ASSERT_TRUE(v == 0.5f || v == 0.0f);
  }
}

TEST(Segment, MaskStaysInsideRoi) {
  std::mt19937_64 rng(8);
  UNet<float> net(small_config(2, 4));
  net.init(3);
  auto params = net.params();
  params.back()->value[1] = 5.0f;  // bias the head towards "tract"
  auto ph = synth::ellipsoid_phantom(20, rng);
  for (int trial = 0; trial < 5; ++trial) {
    BoundingBox b;
    for (int a = 0; a < 3; ++a) {
      b.lo[a] = std::int64_t(rng() % 8);
      b.hi[a] = b.lo[a] + 4 + std::int64_t(rng() % 8);
    }
    auto s = segment(net, ph.tensor, b);
    EXPECT_GT(s.mask.count(), 0u);
    const auto& v = s.mask.volume();
    for (std::size_t z = 0; z < v.nz(); ++z)
      for (std::size_t y = 0; y < v.ny(); ++y)
        for (std::size_t x = 0; x < v.nx(); ++x)
          if (v.at(x, y, z) != 0) ASSERT_TRUE(s.roi.contains(x, y, z));
    EXPECT_EQ(s.roi.extent(0) % 2, 0u);
  }
}
