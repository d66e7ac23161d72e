#include <gtest/gtest.h>

#include <random>

#include "n4n/dti/eigen3.hpp"
#include "n4n/dti/metrics.hpp"
#include "n4n/synthetic.hpp"
#include "support/jacobi.hpp"
#include "support/temp_dir.hpp"

using namespace n4n;

namespace {

std::array<std::array<double, 3>, 3> full(const Tensor6& d) {
  return {{{d[0], d[1], d[2]}, {d[1], d[3], d[4]}, {d[2], d[4], d[5]}}};
}

Tensor6 diag(double a, double b, double c) { return {a, 0, 0, b, 0, c}; }

TensorField field_of(std::vector<Tensor6> ts) {
  TensorField t{Volume::zeros({ts.size(), 1, 1, 6}), Volume::zeros({ts.size(), 1, 1}),
                std::vector<std::uint8_t>(ts.size(), 0)};
  for (std::size_t i = 0; i < ts.size(); ++i) t.set(i, ts[i]);
  return t;
}

Mask ones(std::size_t n) {
  Volume v = Volume::zeros({n, 1, 1});
  for (auto& x : v.values()) x = 1;
  return Mask(v);
}

void expect_valid_system(const Tensor6& d, const EigenSystem& es) {
  const Eigen::Matrix3d D = synth::to_matrix(d);
  const double scale = std::max(D.norm(), 1e-300);
  EXPECT_GE(es.values[0], es.values[1]);
  EXPECT_GE(es.values[1], es.values[2]);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(es.vectors[i].dot(es.vectors[j]), i == j ? 1.0 : 0.0, 1e-6);
    EXPECT_LT((D * es.vectors[i] - es.values[i] * es.vectors[i]).norm(), 1e-6 * scale);
  }
}

}  // namespace

TEST(Eig3, DiagonalCase) {
  const auto es = eig3_sym(diag(3, 2, 1));
  EXPECT_EQ(es.values, (std::array<double, 3>{3, 2, 1}));
  EXPECT_EQ(es.vectors[0], Eigen::Vector3d::UnitX());
  EXPECT_EQ(es.vectors[2], Eigen::Vector3d::UnitZ());
}

TEST(Eig3, IsotropicCase) {
  const auto es = eig3_sym(diag(0.7e-3, 0.7e-3, 0.7e-3));
  for (double l : es.values) EXPECT_EQ(l, 0.7e-3);
}

TEST(Eig3, NonFiniteInputErrors) { EXPECT_THROW(eig3_sym({std::nan(""), 0, 0, 1, 0, 1}), Error); }

TEST(Eig3, MatchesJacobiOnRandomSymmetricMatrices) {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    Tensor6 d;
    for (auto& x : d) x = ud(rng);
    const auto es = eig3_sym(d);
    const auto ref = test_support::jacobi_eigenvalues(full(d));
    for (int k = 0; k < 3; ++k) worst = std::max(worst, std::fabs(es.values[k] - ref[k]));
    if (i % 100 == 0) expect_valid_system(d, es);
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Eig3, NearDegenerateSpectraKeepOrthonormalVectors) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 2000; ++i) {
    const Eigen::Matrix3d R = synth::random_rotation(rng);
    const double a = 1e-3, eps = (i % 4 == 0) ? 0.0 : std::pow(10.0, -double(4 + i % 9));
    Eigen::Vector3d l(a + eps, a, a - 0.5e-3);
    if (i % 2) l = Eigen::Vector3d(a, a - eps, a - eps * 0.5);
    const Tensor6 d = synth::from_matrix(R * l.asDiagonal() * R.transpose());
    const auto es = eig3_sym(d);
    expect_valid_system(d, es);
    const auto ref = test_support::jacobi_eigenvalues(full(d));
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(es.values[k], ref[k], 1e-15);
  }
}

TEST(Eig3, SignConventionFirstNonzeroPositive) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    const auto es = eig3_sym(synth::random_spd(rng));
    for (const auto& v : es.vectors) {
      int k = 0;
      while (k < 3 && std::fabs(v[k]) <= 1e-12) ++k;
      ASSERT_LT(k, 3);
      EXPECT_GT(v[k], 0.0);
    }
  }
}

TEST(ScalarValues, ProlateClosedForm) {
  const auto s = scalar_values({1.7e-3, 0.2e-3, 0.2e-3});
  // FA = 1.5 / sqrt(2.97)
  EXPECT_NEAR(s.fa, 1.5 / std::sqrt(2.97), 1e-12);
  EXPECT_NEAR(s.fa, 0.8704, 1e-4);
  EXPECT_NEAR(s.md, 0.7e-3, 1e-15);
  EXPECT_DOUBLE_EQ(s.l1, 1.7e-3);
  EXPECT_NEAR(s.rd, 0.2e-3, 1e-18);
  EXPECT_NEAR(s.mo, 1.0, 1e-6);
}

TEST(ScalarValues, IsotropicAndOblate) {
  const auto iso = scalar_values({0.7e-3, 0.7e-3, 0.7e-3});
  EXPECT_EQ(iso.fa, 0.0);
  EXPECT_EQ(iso.mo, 0.0);
  EXPECT_NEAR(scalar_values({1, 1, 0}).mo, -1.0, 1e-6);
}

TEST(ScalarMaps, ZeroOnFlaggedAndUnmaskedVoxels) {
  auto t = field_of({diag(1.7e-3, 0.2e-3, 0.2e-3), Tensor6{}, diag(1e-3, 0.5e-3, 0.5e-3)});
  Volume mv = Volume::zeros({3, 1, 1});
  mv.values()[0] = 1;
  mv.values()[1] = 1;
  const auto m = scalar_maps(t, Mask(mv));
  EXPECT_NEAR(m.fa.values()[0], 0.8704, 1e-4);
  EXPECT_EQ(m.fa.values()[1], 0.0f);
  EXPECT_EQ(m.md.values()[2], 0.0f);
}

TEST(ScalarMaps, NegativeEigenvalueFaIsClampedAndCounted) {
  const auto m = scalar_maps(field_of({diag(1e-3, -0.8e-3, 0.1e-3)}), ones(1));
  EXPECT_GT(scalar_values({1e-3, 0.1e-3, -0.8e-3}).fa, 1.0);
  EXPECT_EQ(m.fa.values()[0], 1.0f);
  EXPECT_EQ(m.clamped_fa, 1u);
}

TEST(ScalarMaps, RotationInvarianceAndMdLinearity) {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 500; ++i) {
    const Tensor6 d = synth::random_spd(rng);
    const Eigen::Matrix3d R = synth::random_rotation(rng);
    const Tensor6 rd = synth::from_matrix(R * synth::to_matrix(d) * R.transpose());
    const auto a = scalar_values(eig3_sym(d).values), b = scalar_values(eig3_sym(rd).values);
    EXPECT_NEAR(a.fa, b.fa, 1e-9);
    EXPECT_NEAR(a.mo, b.mo, 1e-9);
    EXPECT_NEAR(a.md, b.md, 1e-15);
    Tensor6 scaled = d;
    for (auto& x : scaled) x *= 2.5;
    EXPECT_NEAR(scalar_values(eig3_sym(scaled).values).md, 2.5 * a.md, 1e-15);
  }
}

TEST(ScalarMaps, RangesOnRandomSpd) {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 10000; ++i) {
    const auto s = scalar_values(eig3_sym(synth::random_spd(rng)).values);
    EXPECT_GE(s.fa, 0.0);
    EXPECT_LE(s.fa, 1.0);
    EXPECT_GE(s.mo, -1.0);
    EXPECT_LE(s.mo, 1.0);
  }
}

TEST(TractMean, ZerosAreExcluded) {
  Volume map = Volume::zeros({4, 1, 1});
  map.values()[0] = 0.4f;
  map.values()[1] = 0.5f;
  map.values()[3] = 0.9f;
  Volume seg = Volume::zeros({4, 1, 1});
  seg.values()[0] = seg.values()[1] = seg.values()[2] = 1;
  EXPECT_NEAR(tract_mean(map, Mask(seg)), 0.45, 1e-7);
}

TEST(TractMean, ConstantMapAndEmptyIntersection) {
  Volume map = Volume::zeros({3, 1, 1});
  for (auto& x : map.values()) x = 0.3f;
  EXPECT_NEAR(tract_mean(map, ones(3)), 0.3, 1e-7);
  Volume seg = Volume::zeros({3, 1, 1});
  Volume sparse = Volume::zeros({3, 1, 1});
  sparse.values()[0] = 0.2f;
  seg.values()[2] = 1;
  try {
    tract_mean(sparse, Mask(seg));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyTract);
  }
}

TEST(TractMeasures, CsvAppendKeepsHeaderAndRows) {
  test_support::TempDir dir;
  Volume seg = Volume::zeros({2, 1, 1}, {2, 2, 2});
  seg.values()[0] = 1;
  auto t = field_of({diag(1.7e-3, 0.2e-3, 0.2e-3), diag(1e-3, 1e-3, 1e-3)});
  const auto maps = scalar_maps(t, ones(2));
  Mask m(seg);
  const auto r = tract_measures(maps, m, "s01", "fmi");
  EXPECT_NEAR(r.volume_ml, 8.0 / 1000.0, 1e-15);
  append_tract_measures(dir / "t.csv", {r});
  append_tract_measures(dir / "t.csv", {r});
  const auto csv = CsvTable::load(dir / "t.csv");
  EXPECT_EQ(csv.rows(), 2u);
  EXPECT_EQ(csv.at(1, "tract"), "fmi");
  EXPECT_NEAR(csv.number(0, "FA"), 0.8704, 1e-4);
}
