#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace n4n::nn {

/// A differentiable quantity: its storage and the analytic gradient computed for it.
struct GradProbe {
  std::string name;
  std::span<double> value;
  std::span<const double> grad;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // entries whose +-h step crossed a kink
  std::string worst;
  double tolerance = 0;
  bool passed() const { return max_rel_error < tolerance; }
};

struct GradCheckOptions {
  double h = 1e-5;
  std::size_t max_entries = 256;
  double floor = 1e-6;
  std::uint64_t seed = 42;
};

inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares analytic gradients against central differences of `loss` on a
/// random subset of probe entries. `loss` must be a pure forward evaluation.
/// When `pattern` is given it must summarize the piecewise-linear branch
/// choices of the last evaluation (pool argmax, rectifier signs); entries whose
/// perturbed evaluations change it are skipped, since the function is not
/// differentiable across that step.
inline GradCheckReport grad_check(const std::function<double()>& loss, const std::vector<GradProbe>& probes,
                                  double tolerance, GradCheckOptions opts = {},
                                  const std::function<std::uint64_t()>& pattern = {}) {
  std::vector<std::pair<std::size_t, std::size_t>> entries;
  for (std::size_t p = 0; p < probes.size(); ++p)
    for (std::size_t i = 0; i < probes[p].value.size(); ++i) entries.emplace_back(p, i);
  std::mt19937_64 rng(opts.seed);
  std::shuffle(entries.begin(), entries.end(), rng);
  GradCheckReport rep;
  rep.tolerance = tolerance;
  std::uint64_t base = 0;
  if (pattern) {
    loss();
    base = pattern();
  }
  for (auto [p, i] : entries) {
    if (rep.checked >= opts.max_entries) break;
    double& x = probes[p].value[i];
    const double orig = x;
    x = orig + opts.h;
    const double lp = loss();
    const bool kink_p = pattern && pattern() != base;
    x = orig - opts.h;
    const double lm = loss();
    const bool kink_m = pattern && pattern() != base;
    x = orig;
    if (kink_p || kink_m) {
      ++rep.skipped;
      continue;
    }
    const double numeric = (lp - lm) / (2 * opts.h);
    const double rel = relative_error(probes[p].grad[i], numeric, opts.floor);
    ++rep.checked;
    if (rel >= rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst = probes[p].name + "[" + std::to_string(i) + "]";
    }
  }
  return rep;
}

}  // namespace n4n::nn
