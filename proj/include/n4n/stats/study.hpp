#pragma once

// Per-subject tract measures and covariates, and the age-association and
// group-comparison analyses that run over them.
//
// Measure columns are named "<tract>.<measure>" (e.g. "atr_l.FA", "fmi.volume").
// Tracts ending in "_l"/"_r" are left/right homologues.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "n4n/core/csv.hpp"
#include "n4n/core/error.hpp"
#include "n4n/stats/hypothesis.hpp"
#include "n4n/stats/ols.hpp"

namespace n4n::stats {

class StudyTable {
 public:
  StudyTable() = default;

  explicit StudyTable(const CsvTable& csv) {
    for (std::size_t c = 0; c < csv.header().size(); ++c) {
      const std::string& name = csv.header()[c];
      std::vector<std::string> cells;
      for (std::size_t r = 0; r < csv.rows(); ++r) cells.push_back(csv.row(r)[c]);
      text_[name] = std::move(cells);
      order_.push_back(name);
    }
    rows_ = csv.rows();
  }

  static StudyTable load(const std::filesystem::path& path) { return StudyTable(CsvTable::load(path)); }
  static StudyTable parse(std::string_view text) { return StudyTable(CsvTable::parse(text)); }

  std::size_t rows() const { return rows_; }
  const std::vector<std::string>& columns() const { return order_; }
  bool has(const std::string& name) const { return text_.count(name) != 0; }

  const std::vector<std::string>& text(const std::string& name) const {
    auto it = text_.find(name);
    if (it == text_.end()) fail(ErrorCode::ParseError, "study table has no column '" + name + "'");
    return it->second;
  }

  /// Numeric column; every cell must parse (no missing values in used columns).
  std::vector<double> column(const std::string& name) const {
    const auto& cells = text(name);
    std::vector<double> out;
    out.reserve(cells.size());
    for (std::size_t r = 0; r < cells.size(); ++r) {
      try {
        out.push_back(CsvTable::to_double(cells[r]));
      } catch (const Error&) {
        fail(ErrorCode::ParseError, "column '" + name + "' row " + std::to_string(r + 1) + ": not a number '" +
                                        cells[r] + "'");
      }
    }
    return out;
  }

  void set(const std::string& name, const std::vector<double>& values) {
    require(values.size() == rows_ || order_.empty(), ErrorCode::ShapeMismatch, "column length differs from table");
    if (order_.empty()) rows_ = values.size();
    std::vector<std::string> cells;
    for (double v : values) cells.push_back(CsvTable::fmt(v));
    set_text(name, std::move(cells));
  }

  void set_text(const std::string& name, std::vector<std::string> cells) {
    require(cells.size() == rows_ || order_.empty(), ErrorCode::ShapeMismatch, "column length differs from table");
    if (order_.empty()) rows_ = cells.size();
    if (!has(name)) order_.push_back(name);
    text_[name] = std::move(cells);
  }

  void erase(const std::string& name) {
    text_.erase(name);
    order_.erase(std::remove(order_.begin(), order_.end(), name), order_.end());
  }

  /// Tract names, sorted, from "<tract>.<measure>" columns.
  std::vector<std::string> tracts() const {
    std::set<std::string> out;
    for (const auto& c : order_) {
      auto dot = c.find('.');
      if (dot != std::string::npos && dot > 0) out.insert(c.substr(0, dot));
    }
    return {out.begin(), out.end()};
  }

  std::vector<std::string> measures(const std::string& tract) const {
    std::vector<std::string> out;
    const std::string prefix = tract + ".";
    for (const auto& c : order_)
      if (c.rfind(prefix, 0) == 0) out.push_back(c.substr(prefix.size()));
    return out;
  }

  CsvTable to_csv() const {
    CsvTable t(order_);
    for (std::size_t r = 0; r < rows_; ++r) {
      std::vector<std::string> row;
      for (const auto& c : order_) row.push_back(text_.at(c)[r]);
      t.add_row(std::move(row));
    }
    return t;
  }

 private:
  std::size_t rows_ = 0;
  std::vector<std::string> order_;
  std::map<std::string, std::vector<std::string>> text_;
};

/// Merges "<base>_l" / "<base>_r" tract pairs into "<base>". Measures are
/// averaged with the tract volumes as weights (plain mean without volume
/// columns); the merged volume is the sum of both sides.
inline StudyTable average_homologous(const StudyTable& in) {
  StudyTable out = in;
  const auto tracts = in.tracts();
  const std::set<std::string> names(tracts.begin(), tracts.end());
  for (const auto& t : tracts) {
    if (t.size() < 3 || t.compare(t.size() - 2, 2, "_l") != 0) continue;
    const std::string base = t.substr(0, t.size() - 2);
    const std::string left = base + "_l", right = base + "_r";
    if (!names.count(right)) continue;
    require(!names.count(base), ErrorCode::InvalidArgument, "tract '" + base + "' exists next to its homologues");
    const bool weighted = in.has(left + ".volume") && in.has(right + ".volume");
    std::vector<double> vl(in.rows(), 1.0), vr(in.rows(), 1.0);
    if (weighted) {
      vl = in.column(left + ".volume");
      vr = in.column(right + ".volume");
    }
    for (const auto& m : in.measures(left)) {
      if (!in.has(right + "." + m)) continue;
      const auto a = in.column(left + "." + m), b = in.column(right + "." + m);
      std::vector<double> merged(in.rows());
      for (std::size_t r = 0; r < in.rows(); ++r) {
        if (m == "volume") {
          merged[r] = a[r] + b[r];
        } else {
          const double w = vl[r] + vr[r];
          require(w > 0, ErrorCode::InvalidArgument, "zero combined volume for tract '" + base + "'");
          merged[r] = (a[r] * vl[r] + b[r] * vr[r]) / w;
        }
      }
      out.set(base + "." + m, merged);
    }
    for (const auto& m : in.measures(left)) out.erase(left + "." + m);
    for (const auto& m : in.measures(right)) out.erase(right + "." + m);
  }
  return out;
}

struct AssociationRow {
  std::string tract;
  std::string measure;
  std::size_t n = 0;
  double beta = 0;  // per year of age
  double se = 0;
  double p = 1;
  bool significant = false;
};

struct AssociationReport {
  int model = 1;
  double alpha = 0.05;
  std::size_t n_tests = 0;
  double threshold = 0;
  std::vector<AssociationRow> rows;

  /// Coefficients and standard errors are printed in units of 1e-3.
  CsvTable to_csv(unsigned seed) const {
    CsvTable t({"tract", "measure", "model", "n", "beta_x1e-3", "se_x1e-3", "p", "significant", "threshold", "seed"});
    for (const auto& r : rows)
      t.add_row({r.tract, r.measure, std::to_string(model), std::to_string(r.n), CsvTable::fmt(r.beta * 1e3),
                 CsvTable::fmt(r.se * 1e3), CsvTable::fmt(r.p), r.significant ? "1" : "0", CsvTable::fmt(threshold),
                 std::to_string(seed)});
    return t;
  }
};

struct AssociationOptions {
  std::vector<std::string> outcomes = {"FA", "MD", "L1", "RD", "MO"};
  double alpha = 0.05;
  std::size_t n_tests = 0;  // 0: one test per regression in the report
};

/// Regresses each tract measure on age, sex and ICV (model 1), plus the tract
/// volume (model 2), and flags the age coefficient at the Bonferroni threshold.
inline AssociationReport age_association_report(const StudyTable& table, int model,
                                                const AssociationOptions& opts = {}) {
  require(model == 1 || model == 2, ErrorCode::InvalidArgument, "model must be 1 or 2");
  const auto age = table.column("age"), sex = table.column("sex"), icv = table.column("icv");
  const std::size_t n = table.rows();
  AssociationReport rep;
  rep.model = model;
  rep.alpha = opts.alpha;
  for (const auto& tract : table.tracts()) {
    for (const auto& m : opts.outcomes) {
      const std::string col = tract + "." + m;
      if (!table.has(col)) continue;
      const auto y = table.column(col);
      const std::size_t p = model == 1 ? 4 : 5;
      Eigen::MatrixXd X(n, p);
      std::vector<double> vol;
      if (model == 2) vol = table.column(tract + ".volume");
      for (std::size_t r = 0; r < n; ++r) {
        X(r, 0) = 1.0;
        X(r, 1) = age[r];
        X(r, 2) = sex[r];
        X(r, 3) = icv[r];
        if (model == 2) X(r, 4) = vol[r];
      }
      const OlsResult fit = ols_fit(Eigen::Map<const Eigen::VectorXd>(y.data(), Eigen::Index(n)), X);
      rep.rows.push_back({tract, m, n, fit.beta(1), fit.se(1), fit.p(1), false});
    }
  }
  rep.n_tests = opts.n_tests ? opts.n_tests : std::max<std::size_t>(1, rep.rows.size());
  rep.threshold = bonferroni(opts.alpha, rep.n_tests);
  for (auto& r : rep.rows) r.significant = r.p < rep.threshold;
  return rep;
}

/// Subjects split by the values of a text column, groups in sorted label order.
struct GroupedColumn {
  std::vector<std::string> labels;
  Groups groups;
};

inline GroupedColumn split_by(const StudyTable& table, const std::string& group_column, const std::string& value_column) {
  const auto& g = table.text(group_column);
  const auto v = table.column(value_column);
  std::map<std::string, std::vector<double>> by;
  for (std::size_t r = 0; r < table.rows(); ++r) by[g[r]].push_back(v[r]);
  GroupedColumn out;
  for (auto& [label, values] : by) {
    out.labels.push_back(label);
    out.groups.push_back(std::move(values));
  }
  return out;
}

/// Long-format comparison table: one "anova" row and one row per group pair
/// for every tract measure.
inline CsvTable group_comparison_report(const StudyTable& table, const std::string& group_column,
                                        const std::vector<std::string>& outcomes, WelchChoice welch, unsigned seed,
                                        double alpha = 0.05) {
  CsvTable out({"tract", "measure", "test", "group_a", "group_b", "statistic", "df1", "df2", "p_raw", "p",
                "levene_p", "seed"});
  for (const auto& tract : table.tracts()) {
    for (const auto& m : outcomes) {
      const std::string col = tract + "." + m;
      if (!table.has(col)) continue;
      const auto grouped = split_by(table, group_column, col);
      const GroupComparison c = compare_groups(grouped.groups, welch, alpha);
      const std::string lev = CsvTable::fmt(c.levene.p), sd = std::to_string(seed);
      out.add_row({tract, m, std::string("anova_") + std::string(to_string(c.anova.variant)), "", "",
                   CsvTable::fmt(c.anova.f), CsvTable::fmt(c.anova.df1), CsvTable::fmt(c.anova.df2),
                   CsvTable::fmt(c.anova.p), CsvTable::fmt(c.anova.p), lev, sd});
      for (const auto& pr : c.pairs)
        out.add_row({tract, m, std::string(to_string(c.posthoc_variant)), grouped.labels[pr.i], grouped.labels[pr.j],
                     CsvTable::fmt(pr.statistic), "", CsvTable::fmt(pr.df), CsvTable::fmt(pr.p_raw),
                     CsvTable::fmt(pr.p), lev, sd});
    }
  }
  return out;
}

}  // namespace n4n::stats
