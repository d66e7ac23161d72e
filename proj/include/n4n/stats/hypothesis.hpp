#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "n4n/core/error.hpp"
#include "n4n/stats/distributions.hpp"

namespace n4n::stats {

/// Family-wise threshold alpha / n.
inline double bonferroni(double alpha, std::size_t n_tests) {
  require(n_tests >= 1, ErrorCode::InvalidArgument, "bonferroni needs at least one test");
  require(alpha > 0 && alpha <= 1, ErrorCode::InvalidArgument, "alpha must lie in (0, 1]");
  return alpha / double(n_tests);
}

struct Summary {
  std::size_t n = 0;
  double mean = 0;
  double var = 0;  // unbiased
};

inline Summary summarize(std::span<const double> x) {
  Summary s;
  s.n = x.size();
  if (s.n == 0) return s;
  s.mean = std::accumulate(x.begin(), x.end(), 0.0) / double(s.n);
  double ss = 0;
  for (double v : x) ss += (v - s.mean) * (v - s.mean);
  s.var = s.n > 1 ? ss / double(s.n - 1) : 0.0;
  return s;
}

struct TTest {
  double t = 0;
  double df = 0;
  double p = 1;
};

namespace detail {

inline TTest t_from(double diff, double se, double df) {
  TTest r;
  r.df = df;
  if (se > 0) {
    r.t = diff / se;
    r.p = t_two_sided(r.t, df);
  } else {
    r.t = diff == 0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    r.p = diff == 0 ? 1.0 : 0.0;
  }
  return r;
}

inline void require_samples(std::span<const double> x, std::size_t min, std::string_view what) {
  require(x.size() >= min, ErrorCode::InsufficientData,
          std::string(what) + " needs at least " + std::to_string(min) + " values, got " + std::to_string(x.size()));
  for (double v : x) require(std::isfinite(v), ErrorCode::InvalidArgument, std::string(what) + ": non-finite value");
}

}  // namespace detail

/// Two-sample Student t with pooled variance.
inline TTest ttest_pooled(std::span<const double> a, std::span<const double> b) {
  detail::require_samples(a, 2, "t-test");
  detail::require_samples(b, 2, "t-test");
  const Summary sa = summarize(a), sb = summarize(b);
  const double df = double(sa.n + sb.n - 2);
  const double sp2 = ((sa.n - 1) * sa.var + (sb.n - 1) * sb.var) / df;
  return detail::t_from(sa.mean - sb.mean, std::sqrt(sp2 * (1.0 / sa.n + 1.0 / sb.n)), df);
}

/// Welch t with Welch-Satterthwaite degrees of freedom.
inline TTest ttest_welch(std::span<const double> a, std::span<const double> b) {
  detail::require_samples(a, 2, "Welch t-test");
  detail::require_samples(b, 2, "Welch t-test");
  const Summary sa = summarize(a), sb = summarize(b);
  const double va = sa.var / sa.n, vb = sb.var / sb.n;
  require(va + vb > 0, ErrorCode::ZeroVariance, "Welch t-test with zero variance in both groups");
  const double df = (va + vb) * (va + vb) / (va * va / (sa.n - 1) + vb * vb / (sb.n - 1));
  return detail::t_from(sa.mean - sb.mean, std::sqrt(va + vb), df);
}

/// Paired t on the differences a - b.
inline TTest ttest_paired(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::ShapeMismatch, "paired samples differ in length");
  detail::require_samples(a, 2, "paired t-test");
  detail::require_samples(b, 2, "paired t-test");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a[i] - b[i];
  const Summary s = summarize(d);
  require(s.var > 0, ErrorCode::ZeroVariance, "paired differences have zero variance");
  return detail::t_from(s.mean, std::sqrt(s.var / double(s.n)), double(s.n - 1));
}

enum class AnovaVariant { Classic, Welch };

constexpr std::string_view to_string(AnovaVariant v) { return v == AnovaVariant::Classic ? "classic" : "welch"; }

struct AnovaResult {
  AnovaVariant variant = AnovaVariant::Classic;
  double f = 0;
  double df1 = 0;
  double df2 = 0;
  double p = 1;
};

using Groups = std::vector<std::vector<double>>;

namespace detail {

inline void require_groups(const Groups& groups) {
  require(groups.size() >= 2, ErrorCode::InsufficientData, "need at least two groups");
  for (const auto& g : groups) require_samples(g, 2, "group");
}

}  // namespace detail

/// One-way ANOVA. Classic uses (k-1, N-k) degrees of freedom; Welch weights
/// groups by n_i / s_i^2 and uses the Welch-Satterthwaite denominator df.
inline AnovaResult anova_oneway(const Groups& groups, AnovaVariant variant = AnovaVariant::Classic) {
  detail::require_groups(groups);
  const std::size_t k = groups.size();
  std::vector<Summary> s;
  for (const auto& g : groups) s.push_back(summarize(g));
  AnovaResult r;
  r.variant = variant;
  r.df1 = double(k - 1);

  if (variant == AnovaVariant::Classic) {
    std::size_t n = 0;
    double grand = 0;
    for (const auto& g : s) {
      n += g.n;
      grand += g.mean * double(g.n);
    }
    grand /= double(n);
    double ssb = 0, ssw = 0;
    for (const auto& g : s) {
      ssb += double(g.n) * (g.mean - grand) * (g.mean - grand);
      ssw += double(g.n - 1) * g.var;
    }
    r.df2 = double(n - k);
    if (ssw > 0) {
      r.f = (ssb / r.df1) / (ssw / r.df2);
      r.p = f_sf(r.f, r.df1, r.df2);
    } else {
      r.f = ssb > 0 ? std::numeric_limits<double>::infinity() : 0.0;
      r.p = ssb > 0 ? 0.0 : 1.0;
    }
    return r;
  }

  double wsum = 0, wmean = 0;
  std::vector<double> w(k);
  for (std::size_t i = 0; i < k; ++i) {
    require(s[i].var > 0, ErrorCode::ZeroVariance, "Welch ANOVA with a zero-variance group");
    w[i] = double(s[i].n) / s[i].var;
    wsum += w[i];
    wmean += w[i] * s[i].mean;
  }
  wmean /= wsum;
  double a = 0, lambda = 0;
  for (std::size_t i = 0; i < k; ++i) {
    a += w[i] * (s[i].mean - wmean) * (s[i].mean - wmean);
    const double u = 1.0 - w[i] / wsum;
    lambda += u * u / double(s[i].n - 1);
  }
  const double kk = double(k);
  a /= kk - 1.0;
  const double b = 1.0 + 2.0 * (kk - 2.0) / (kk * kk - 1.0) * lambda;
  r.f = a / b;
  r.df2 = (kk * kk - 1.0) / (3.0 * lambda);
  r.p = f_sf(r.f, r.df1, r.df2);
  return r;
}

struct LeveneResult {
  double w = 0;
  double df1 = 0;
  double df2 = 0;
  double p = 1;
};

/// Levene's test on absolute deviations from the group medians (Brown-Forsythe).
inline LeveneResult levene(const Groups& groups) {
  detail::require_groups(groups);
  Groups dev;
  for (const auto& g : groups) {
    std::vector<double> sorted = g;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t m = sorted.size();
    const double med = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
    std::vector<double> d;
    for (double v : g) d.push_back(std::fabs(v - med));
    dev.push_back(std::move(d));
  }
  const AnovaResult a = anova_oneway(dev, AnovaVariant::Classic);
  return {a.f, a.df1, a.df2, a.p};
}

enum class PosthocVariant { BonferroniT, GamesHowell };

constexpr std::string_view to_string(PosthocVariant v) {
  return v == PosthocVariant::BonferroniT ? "bonferroni_t" : "games_howell";
}

struct PairwiseResult {
  std::size_t i = 0;
  std::size_t j = 0;
  double mean_diff = 0;  // mean_i - mean_j
  double statistic = 0;  // t for bonferroni_t, studentized range q for games_howell
  double df = 0;
  double p_raw = 1;
  double p = 1;
};

/// All pairs i < j. bonferroni_t: pooled two-sample t per pair, p multiplied by
/// the number of pairs and clamped to 1. games_howell: Welch t per pair,
/// referred to the studentized range distribution with k groups.
inline std::vector<PairwiseResult> posthoc(const Groups& groups, PosthocVariant variant) {
  detail::require_groups(groups);
  const std::size_t k = groups.size();
  const double pairs = double(k * (k - 1) / 2);
  std::vector<PairwiseResult> out;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      PairwiseResult r;
      r.i = i;
      r.j = j;
      r.mean_diff = summarize(groups[i]).mean - summarize(groups[j]).mean;
      if (variant == PosthocVariant::BonferroniT) {
        const TTest t = ttest_pooled(groups[i], groups[j]);
        r.statistic = t.t;
        r.df = t.df;
        r.p_raw = t.p;
        r.p = std::min(1.0, t.p * pairs);
      } else {
        const TTest t = ttest_welch(groups[i], groups[j]);
        r.statistic = std::fabs(t.t) * std::sqrt(2.0);
        r.df = t.df;
        r.p_raw = tukey_sf(r.statistic, int(k), std::max(1.0, t.df));
        r.p = r.p_raw;
      }
      out.push_back(r);
    }
  return out;
}

enum class WelchChoice { Auto, On, Off };

inline WelchChoice parse_welch(std::string_view s) {
  if (s == "auto") return WelchChoice::Auto;
  if (s == "on") return WelchChoice::On;
  if (s == "off") return WelchChoice::Off;
  fail(ErrorCode::InvalidArgument, "welch must be auto, on or off, got '" + std::string(s) + "'");
}

struct GroupComparison {
  LeveneResult levene;
  AnovaResult anova;
  PosthocVariant posthoc_variant = PosthocVariant::BonferroniT;
  std::vector<PairwiseResult> pairs;
};

/// Classic ANOVA with Bonferroni t post-hoc, or Welch ANOVA with Games-Howell
/// when variances differ (Levene p < alpha under Auto).
inline GroupComparison compare_groups(const Groups& groups, WelchChoice welch = WelchChoice::Auto,
                                      double alpha = 0.05) {
  GroupComparison c;
  c.levene = levene(groups);
  const bool use_welch = welch == WelchChoice::On || (welch == WelchChoice::Auto && c.levene.p < alpha);
  c.anova = anova_oneway(groups, use_welch ? AnovaVariant::Welch : AnovaVariant::Classic);
  c.posthoc_variant = use_welch ? PosthocVariant::GamesHowell : PosthocVariant::BonferroniT;
  c.pairs = posthoc(groups, c.posthoc_variant);
  return c;
}

}  // namespace n4n::stats
