#pragma once

// Subcommand front-end. Exit codes: 0 success, 1 usage error, 2 data error.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "n4n/core/csv.hpp"
#include "n4n/core/error.hpp"
#include "n4n/core/fileio.hpp"
#include "n4n/core/parallel.hpp"
#include "n4n/dti/metrics.hpp"
#include "n4n/eval/metrics.hpp"
#include "n4n/net/checkpoint.hpp"
#include "n4n/net/config.hpp"
#include "n4n/net/dataset.hpp"
#include "n4n/net/gradcheck.hpp"
#include "n4n/net/segment.hpp"
#include "n4n/net/trainer.hpp"
#include "n4n/stats/study.hpp"
#include "n4n/tensorfit/fit.hpp"
#include "n4n/tensorfit/scheme.hpp"
#include "n4n/volume/nifti.hpp"
#include "n4n/volume/volume.hpp"

namespace n4n::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

namespace detail {

struct Io {
  std::ostream& out;
  std::ostream& err;
};

/// Manifest paths are taken relative to the manifest's own directory.
inline std::string resolve(const fs::path& manifest, const std::string& p) {
  const fs::path q(p);
  if (q.is_absolute()) return q.string();
  return (manifest.parent_path() / q).lexically_normal().string();
}

inline Mask load_mask(const std::string& path) { return Mask::threshold(nifti::load(path), 0.5f); }

inline nlohmann::json box_json(const BoundingBox& b, std::uint64_t seed) {
  return {{"lo", b.lo}, {"hi", b.hi}, {"extent", b.extents()}, {"seed", seed}};
}

inline BoundingBox load_box(const std::string& path) {
  const std::string text = read_file(path);
  try {
    const auto j = nlohmann::json::parse(text);
    BoundingBox b;
    b.lo = j.at("lo").get<std::array<std::int64_t, 3>>();
    b.hi = j.at("hi").get<std::array<std::int64_t, 3>>();
    for (int a = 0; a < 3; ++a)
      require(b.lo[a] >= 0 && b.hi[a] >= b.lo[a], ErrorCode::ParseError, path + ": inverted or negative ROI box");
    return b;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, path + ": " + e.what());
  }
}

inline Affine load_transform(const std::string& path) {
  const auto rows = n4n::detail::read_number_rows(path);
  require(rows.size() == 4, ErrorCode::ParseError, path + ": expected a 4x4 matrix");
  Affine a;
  for (int r = 0; r < 4; ++r) {
    require(rows[r].size() == 4, ErrorCode::ParseError, path + ": expected a 4x4 matrix");
    for (int c = 0; c < 4; ++c) a(r, c) = rows[r][c];
  }
  return a;
}

inline void write_json(const std::string& path, const nlohmann::json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

inline std::string seed_line(std::uint64_t seed) { return "# seed " + std::to_string(seed) + "\n"; }

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

inline TensorField field_from(const Volume& tensor) {
  require(tensor.rank() == 4 && tensor.channels() == 6, ErrorCode::ShapeMismatch,
          "tensor volume must have 6 channels");
  return TensorField{tensor, tensor.like(1), std::vector<std::uint8_t>(tensor.spatial_size(), 0)};
}

inline Mask nonzero_tensor_mask(const Volume& tensor) {
  Volume m = tensor.like(1, Dtype::UInt8);
  const std::size_t n = tensor.spatial_size();
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t c = 0; c < tensor.channels(); ++c)
      if (tensor.values()[c * n + v] != 0.0f) {
        m.values()[v] = 1.0f;
        break;
      }
  return Mask(std::move(m));
}

}  // namespace detail

struct Options {
  unsigned jobs = 1;
  std::uint64_t seed = 42;

  // fit-tensor
  std::string dwi, bval, bvec, mask, out;
  bool lm = true;
  double outlier_thresh = 0.1;
  bool normalize = false;

  // scalars
  std::string tensor, out_prefix;

  // roi
  std::vector<std::string> masks;
  std::string manifest;
  std::int64_t margin = 0;
  std::size_t multiple = 1;

  // train / segment / gradcheck
  std::string config, checkpoint, roi, resume, last, curve, label;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed_override;
  double threshold = 0.5;
  std::string out_prob, out_mask;
  double tol = 1e-4;
  std::size_t size = 16, batch = 2, entries = 256;

  // eval / rescan
  std::string pred, ref, r2_out;

  // regress / group-compare
  std::string table, outcomes, group_column = "group", welch = "auto";
  int model = 1;
  double alpha = 0.05;
  std::size_t n_tests = 0;
  bool no_average = false;
};

// ---- subcommands ----------------------------------------------------------------------

inline int cmd_fit_tensor(const Options& o, detail::Io io) {
  const DiffusionScheme scheme = read_scheme(o.bval, o.bvec);
  const Volume dwi = nifti::load(o.dwi);
  const Mask mask = detail::load_mask(o.mask);
  const unsigned jobs = resolve_jobs(o.jobs);
  TensorField t = fit_loglinear(dwi, scheme, mask, jobs);
  if (o.lm) t = fit_lm(dwi, scheme, mask, t, {}, jobs);
  t = outlier_zero(std::move(t), o.outlier_thresh);
  if (o.normalize) t = normalize_scan(std::move(t), mask);
  nifti::save(t.tensor, o.out);
  std::size_t flagged = 0;
  for (auto f : t.flags) flagged += f != kFlagNone;
  io.out << "fit-tensor: " << mask.count() << " voxels, " << flagged << " flagged, seed " << o.seed << "\n";
  return kExitOk;
}

inline int cmd_scalars(const Options& o, detail::Io io) {
  const Volume tensor = nifti::load(o.tensor);
  const TensorField field = detail::field_from(tensor);
  const Mask mask = o.mask.empty() ? detail::nonzero_tensor_mask(tensor) : detail::load_mask(o.mask);
  const ScalarMaps m = scalar_maps(field, mask);
  const std::pair<const char*, const Volume*> maps[] = {
      {"FA", &m.fa}, {"MD", &m.md}, {"L1", &m.l1}, {"RD", &m.rd}, {"MO", &m.mo}};
  for (const auto& [name, vol] : maps) nifti::save(*vol, o.out_prefix + name + ".nii");
  io.out << "scalars: " << mask.count() << " voxels, " << m.clamped_fa << " FA values clamped, seed " << o.seed
         << "\n";
  return kExitOk;
}

inline int cmd_roi(const Options& o, detail::Io io) {
  std::vector<std::string> paths = o.masks;
  if (!o.manifest.empty()) {
    const CsvTable t = CsvTable::load(o.manifest);
    for (std::size_t r = 0; r < t.rows(); ++r) paths.push_back(detail::resolve(o.manifest, t.at(r, "label")));
  }
  require(!paths.empty(), ErrorCode::EmptyDataset, "no masks given");
  std::optional<BoundingBox> box;
  std::array<std::size_t, 3> grid{};
  for (const auto& p : paths) {
    const Mask m = detail::load_mask(p);
    const auto& v = m.volume();
    if (!box) grid = {v.nx(), v.ny(), v.nz()};
    require(std::array<std::size_t, 3>{v.nx(), v.ny(), v.nz()} == grid, ErrorCode::ShapeMismatch,
            p + ": mask grid differs from the first mask");
    if (m.count() == 0) continue;
    const BoundingBox b = bounding_box(m, o.margin);
    box = box ? box_union(*box, b) : b;
  }
  require(box.has_value(), ErrorCode::EmptyMask, "all masks are empty");
  BoundingBox b = *box;
  if (o.multiple > 1) b = fit_box_to_multiple(b, o.multiple, grid);
  detail::write_json(o.out, detail::box_json(b, o.seed));
  const auto e = b.extents();
  io.out << "roi: " << e[0] << "x" << e[1] << "x" << e[2] << " from " << paths.size() << " masks, seed " << o.seed
         << "\n";
  return kExitOk;
}

inline int cmd_train(const Options& o, detail::Io io) {
  std::optional<net::Checkpoint> resume;
  net::ArchConfig cfg;
  if (!o.resume.empty()) {
    resume = net::load_checkpoint(o.resume);
    cfg = resume->config;
  } else {
    cfg = o.config.empty() ? net::ArchConfig{} : net::load_config(o.config);
  }
  if (o.seed_override) cfg.seed = *o.seed_override;
  if (o.epochs) cfg.epochs = *o.epochs;

  const CsvTable t = CsvTable::load(o.manifest);
  std::vector<net::ManifestEntry> entries;
  for (std::size_t r = 0; r < t.rows(); ++r)
    entries.push_back({detail::resolve(o.manifest, t.at(r, "image")), detail::resolve(o.manifest, t.at(r, "label"))});
  require(!entries.empty(), ErrorCode::EmptyDataset, o.manifest + ": no training rows");

  const Volume first = nifti::load(entries.front().image);
  const std::array<std::size_t, 3> grid{first.nx(), first.ny(), first.nz()};
  BoundingBox box;
  if (!o.roi.empty()) {
    box = detail::load_box(o.roi);
  } else if (auto b = cfg.roi_box()) {
    box = *b;
  } else {
    std::optional<BoundingBox> u;
    for (const auto& e : entries) {
      const Mask m = detail::load_mask(e.label);
      if (m.count() == 0) continue;
      u = u ? box_union(*u, bounding_box(m)) : bounding_box(m);
    }
    require(u.has_value(), ErrorCode::EmptyMask, "every training label is empty");
    box = *u;
  }
  box = net::fit_roi(cfg, box, grid);
  if (resume)
    require(resume->config.roi_box() == box, ErrorCode::ShapeMismatch, "ROI differs from the resumed run");
  cfg.set_roi_box(box);

  net::NiftiDataset data(entries, box);
  CsvTable curve({"epoch", "train_loss", "val_loss", "train_dice", "lr", "seed"});
  net::TrainOptions opts;
  opts.last_checkpoint_path = o.last;
  opts.track_train_dice = true;
  opts.on_epoch = [&](const net::EpochReport& r) {
    io.out << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_loss " << r.val_loss << " dice "
           << r.train_dice << " lr " << r.lr << "\n";
    io.out.flush();
  };
  const net::TrainResult res = net::train(data, cfg, opts, resume ? &*resume : nullptr);
  for (std::size_t e = 0; e < res.train_loss.size(); ++e)
    curve.add_row({std::to_string(e + 1), CsvTable::fmt(res.train_loss[e]), CsvTable::fmt(res.val_loss[e]),
                   CsvTable::fmt(res.train_dice[e]), "", std::to_string(cfg.seed)});
  net::save_checkpoint(o.checkpoint, res.best);
  if (!o.curve.empty()) curve.save(o.curve);
  io.out << "train: best epoch " << res.best.state.best_epoch << " of " << res.train_loss.size() << ", seed "
         << cfg.seed << "\n";
  return kExitOk;
}

inline int cmd_segment(const Options& o, detail::Io io) {
  const net::Checkpoint ck = net::load_checkpoint(o.checkpoint);
  auto model = net::network_from(ck);
  const Volume tensor = nifti::load(o.tensor);
  BoundingBox box{{0, 0, 0},
                  {std::int64_t(tensor.nx()) - 1, std::int64_t(tensor.ny()) - 1, std::int64_t(tensor.nz()) - 1}};
  if (!o.roi.empty())
    box = detail::load_box(o.roi);
  else if (auto b = ck.config.roi_box())
    box = *b;
  const net::Segmentation s = net::segment(*model, tensor, box, o.threshold);
  if (!o.out_prob.empty()) nifti::save(s.probability, o.out_prob);
  nifti::save(s.mask.volume(), o.out_mask);
  io.out << "segment: " << s.mask.count() << " tract voxels, seed " << ck.config.seed;
  if (!o.label.empty()) io.out << ", dice " << eval::dice(s.mask, detail::load_mask(o.label));
  io.out << "\n";
  return kExitOk;
}

inline int cmd_eval(const Options& o, detail::Io io) {
  const CsvTable pred = CsvTable::load(o.pred), ref = CsvTable::load(o.ref);
  std::map<std::pair<std::string, std::string>, std::string> ref_paths;
  for (std::size_t r = 0; r < ref.rows(); ++r)
    ref_paths[{ref.at(r, "subject"), ref.at(r, "tract")}] = detail::resolve(o.ref, ref.at(r, "mask"));
  struct Job {
    std::string subject, tract, pred, ref, transform;
    double dice = 0, kappa = 0;
  };
  std::vector<Job> jobs;
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    const auto key = std::make_pair(pred.at(r, "subject"), pred.at(r, "tract"));
    auto it = ref_paths.find(key);
    require(it != ref_paths.end(), ErrorCode::ParseError,
            "no reference for subject '" + key.first + "' tract '" + key.second + "'");
    Job j{key.first, key.second, detail::resolve(o.pred, pred.at(r, "mask")), it->second, ""};
    if (pred.has("transform") && !pred.at(r, "transform").empty())
      j.transform = detail::resolve(o.pred, pred.at(r, "transform"));
    jobs.push_back(std::move(j));
  }
  std::sort(jobs.begin(), jobs.end(), [](const Job& a, const Job& b) {
    return std::tie(a.subject, a.tract) < std::tie(b.subject, b.tract);
  });
  std::optional<BoundingBox> box;
  if (!o.roi.empty()) box = detail::load_box(o.roi);
  parallel_for(jobs.size(), resolve_jobs(o.jobs), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      Job& j = jobs[i];
      const Mask r = detail::load_mask(j.ref);
      Mask p = detail::load_mask(j.pred);
      if (!j.transform.empty()) p = resample_nearest(p, r.volume(), detail::load_transform(j.transform));
      j.dice = eval::dice(p, r, box);
      j.kappa = eval::kappa(p, r);
    }
  });
  CsvTable out({"subject", "tract", "dice", "kappa", "seed"});
  for (const auto& j : jobs)
    out.add_row({j.subject, j.tract, CsvTable::fmt(j.dice), CsvTable::fmt(j.kappa), std::to_string(o.seed)});
  out.save(o.out);
  io.out << "eval: " << jobs.size() << " pairs, seed " << o.seed << "\n";
  return kExitOk;
}

inline int cmd_rescan(const Options& o, detail::Io io) {
  const CsvTable t = CsvTable::load(o.manifest);
  struct Job {
    std::string subject, tract;
    std::string mask1, mask2, tensor1, tensor2, transform;
    double dice = 0, kappa = 0;
    TractMeasures m1, m2;
  };
  std::vector<Job> jobs;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    Job j;
    j.subject = t.at(r, "subject");
    j.tract = t.at(r, "tract");
    j.mask1 = detail::resolve(o.manifest, t.at(r, "mask1"));
    j.mask2 = detail::resolve(o.manifest, t.at(r, "mask2"));
    j.tensor1 = detail::resolve(o.manifest, t.at(r, "tensor1"));
    j.tensor2 = detail::resolve(o.manifest, t.at(r, "tensor2"));
    if (t.has("transform") && !t.at(r, "transform").empty())
      j.transform = detail::resolve(o.manifest, t.at(r, "transform"));
    jobs.push_back(std::move(j));
  }
  std::sort(jobs.begin(), jobs.end(), [](const Job& a, const Job& b) {
    return std::tie(a.subject, a.tract) < std::tie(b.subject, b.tract);
  });
  parallel_for(jobs.size(), resolve_jobs(o.jobs), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      Job& j = jobs[i];
      const Mask s1 = detail::load_mask(j.mask1), s2 = detail::load_mask(j.mask2);
      auto measures = [&](const Mask& m, const std::string& tensor_path) {
        const Volume tensor = nifti::load(tensor_path);
        const ScalarMaps maps = scalar_maps(detail::field_from(tensor), m);
        return tract_measures(maps, m, j.subject, j.tract);
      };
      j.m1 = measures(s1, j.tensor1);
      j.m2 = measures(s2, j.tensor2);
      const Mask aligned = j.transform.empty() ? s2 : resample_nearest(s2, s1.volume(), detail::load_transform(j.transform));
      j.dice = eval::dice(s1, aligned);
      j.kappa = eval::kappa(s1, aligned);
    }
  });

  const std::string sd = std::to_string(o.seed);
  CsvTable out({"subject", "tract", "dice", "kappa", "eps_FA", "eps_MD", "eps_vol", "FA1", "FA2", "MD1", "MD2",
                "vol1_ml", "vol2_ml", "seed"});
  std::map<std::string, std::vector<const Job*>> by_tract;
  for (const auto& j : jobs) {
    out.add_row({j.subject, j.tract, CsvTable::fmt(j.dice), CsvTable::fmt(j.kappa),
                 CsvTable::fmt(eval::rescan_epsilon(j.m1.fa, j.m2.fa)),
                 CsvTable::fmt(eval::rescan_epsilon(j.m1.md, j.m2.md)),
                 CsvTable::fmt(eval::rescan_epsilon(j.m1.volume_ml, j.m2.volume_ml)), CsvTable::fmt(j.m1.fa),
                 CsvTable::fmt(j.m2.fa), CsvTable::fmt(j.m1.md), CsvTable::fmt(j.m2.md),
                 CsvTable::fmt(j.m1.volume_ml), CsvTable::fmt(j.m2.volume_ml), sd});
    by_tract[j.tract].push_back(&j);
  }
  out.save(o.out);

  CsvTable r2({"tract", "measure", "n", "r2", "seed"});
  for (const auto& [tract, list] : by_tract) {
    const std::pair<const char*, double TractMeasures::*> fields[] = {
        {"FA", &TractMeasures::fa}, {"MD", &TractMeasures::md}, {"volume", &TractMeasures::volume_ml}};
    for (const auto& [name, field] : fields) {
      std::vector<std::pair<double, double>> pairs;
      for (const Job* j : list) pairs.emplace_back(j->m1.*field, j->m2.*field);
      std::string value = "NA";
      if (pairs.size() >= 3) {
        try {
          value = CsvTable::fmt(eval::rescan_r2(pairs));
        } catch (const Error& e) {
          if (e.code() != ErrorCode::DegenerateVariance) throw;
        }
      }
      r2.add_row({tract, name, std::to_string(pairs.size()), value, sd});
    }
  }
  const std::string r2_path = o.r2_out.empty() ? (fs::path(o.out).replace_extension("").string() + "_r2.csv") : o.r2_out;
  r2.save(r2_path);
  io.out << "rescan: " << jobs.size() << " pairs, seed " << o.seed << "\n";
  return kExitOk;
}

inline int cmd_regress(const Options& o, detail::Io io) {
  stats::StudyTable table = stats::StudyTable::load(o.table);
  if (!o.no_average) table = stats::average_homologous(table);
  stats::AssociationOptions opts;
  if (!o.outcomes.empty()) opts.outcomes = detail::split_list(o.outcomes);
  opts.alpha = o.alpha;
  opts.n_tests = o.n_tests;
  const auto rep = stats::age_association_report(table, o.model, opts);
  const std::string preamble = "# beta and se per year of age, in units of 1e-3; model " + std::to_string(o.model) +
                               "; bonferroni threshold " + CsvTable::fmt(rep.threshold) + " (" +
                               std::to_string(rep.n_tests) + " tests)\n" + detail::seed_line(o.seed);
  rep.to_csv(static_cast<unsigned>(o.seed)).save(o.out, preamble);
  std::size_t sig = 0;
  for (const auto& r : rep.rows) sig += r.significant;
  io.out << "regress: " << rep.rows.size() << " models, " << sig << " significant, seed " << o.seed << "\n";
  return kExitOk;
}

inline int cmd_group_compare(const Options& o, detail::Io io) {
  stats::StudyTable table = stats::StudyTable::load(o.table);
  if (!o.no_average) table = stats::average_homologous(table);
  const auto outcomes = o.outcomes.empty() ? std::vector<std::string>{"FA", "MD", "L1", "RD"}
                                           : detail::split_list(o.outcomes);
  const CsvTable out = stats::group_comparison_report(table, o.group_column, outcomes, stats::parse_welch(o.welch),
                                                      static_cast<unsigned>(o.seed), o.alpha);
  out.save(o.out, detail::seed_line(o.seed));
  io.out << "group-compare: " << out.rows() << " rows, seed " << o.seed << "\n";
  return kExitOk;
}

inline int cmd_gradcheck(const Options& o, detail::Io io) {
  net::ArchConfig cfg = o.config.empty() ? net::ArchConfig{} : net::load_config(o.config);
  if (o.seed_override) cfg.seed = *o.seed_override;
  net::NetworkGradCheckOptions opts;
  opts.side = o.size;
  opts.batch = o.batch;
  opts.tolerance = o.tol;
  opts.check.max_entries = o.entries;
  opts.check.seed = cfg.seed;
  const auto rep = net::network_grad_check(cfg, opts);
  const nlohmann::json j = {{"passed", rep.passed()},          {"max_rel_error", rep.max_rel_error},
                            {"tolerance", rep.tolerance},      {"checked", rep.checked},
                            {"skipped_kinks", rep.skipped},    {"worst", rep.worst},
                            {"variant", to_string(cfg.variant)}, {"depth", cfg.depth},
                            {"roi_side", opts.side},           {"seed", cfg.seed}};
  if (!o.out.empty()) detail::write_json(o.out, j);
  io.out << "gradcheck: " << (rep.passed() ? "PASS" : "FAIL") << " max_rel_error " << rep.max_rel_error
         << " (tol " << rep.tolerance << ", " << rep.checked << " entries, worst " << rep.worst << "), seed "
         << cfg.seed << "\n";
  return rep.passed() ? kExitOk : kExitData;
}

// ---- entry ------------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"n4n: diffusion tensor fitting, tract segmentation and tract statistics"};
  app.name("n4n");
  app.require_subcommand(1);
  Options o;
  app.add_option("--jobs", o.jobs, "Worker threads (N4N_THREADS overrides)")->check(CLI::PositiveNumber);
  app.add_option("--seed", o.seed, "Seed echoed into outputs")->default_val(42);

  auto* fit = app.add_subcommand("fit-tensor", "DWI + bval/bvec + mask -> tensor NIfTI");
  fit->add_option("--dwi", o.dwi, "4D DWI NIfTI")->required();
  fit->add_option("--bval", o.bval, "b-values text file")->required();
  fit->add_option("--bvec", o.bvec, "gradient directions text file")->required();
  fit->add_option("--mask", o.mask, "brain mask NIfTI")->required();
  fit->add_option("--out", o.out, "output tensor NIfTI")->required();
  fit->add_flag("--lm,!--no-lm", o.lm, "Levenberg-Marquardt refinement (default on)");
  fit->add_option("--outlier-thresh", o.outlier_thresh, "Frobenius norm above which tensors are zeroed")
      ->default_val(0.1);
  fit->add_flag("--normalize", o.normalize, "z-score the tensor volume over the mask");

  auto* sc = app.add_subcommand("scalars", "tensor -> FA/MD/L1/RD/MO NIfTIs");
  sc->add_option("--tensor", o.tensor, "6-channel tensor NIfTI")->required();
  sc->add_option("--mask", o.mask, "mask NIfTI (default: nonzero tensors)");
  sc->add_option("--out-prefix", o.out_prefix, "output path prefix; <prefix>FA.nii etc.")->required();

  auto* roi = app.add_subcommand("roi", "masks -> union bounding box JSON");
  roi->add_option("--mask", o.masks, "label NIfTI (repeatable)");
  roi->add_option("--manifest", o.manifest, "CSV with a 'label' column");
  roi->add_option("--margin", o.margin, "voxels added on every side")->default_val(0);
  roi->add_option("--multiple", o.multiple, "grow extents to a multiple of this")->default_val(1);
  roi->add_option("--out", o.out, "output JSON")->required();

  auto* tr = app.add_subcommand("train", "config + manifest of (image, label) -> checkpoint");
  tr->add_option("--config", o.config, "architecture/training JSON (default settings if omitted)");
  tr->add_option("--manifest", o.manifest, "CSV with 'image' and 'label' columns")->required();
  tr->add_option("--out", o.checkpoint, "best-model checkpoint")->required();
  tr->add_option("--roi", o.roi, "ROI JSON (default: union of label boxes)");
  tr->add_option("--epochs", o.epochs, "override the configured epoch count");
  tr->add_option("--train-seed", o.seed_override, "override the configured seed");
  tr->add_option("--last", o.last, "resumable checkpoint rewritten every epoch");
  tr->add_option("--resume", o.resume, "continue from a resumable checkpoint");
  tr->add_option("--curve", o.curve, "per-epoch loss/Dice CSV");

  auto* sg = app.add_subcommand("segment", "checkpoint + tensor -> probability and mask NIfTI");
  sg->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  sg->add_option("--tensor", o.tensor, "6-channel input NIfTI")->required();
  sg->add_option("--roi", o.roi, "ROI JSON (default: the checkpoint's ROI)");
  sg->add_option("--threshold", o.threshold, "mask = probability > threshold")->default_val(0.5);
  sg->add_option("--out-prob", o.out_prob, "probability NIfTI");
  sg->add_option("--out-mask", o.out_mask, "mask NIfTI")->required();
  sg->add_option("--label", o.label, "reference label; prints Dice");

  auto* ev = app.add_subcommand("eval", "pred/ref manifests -> Dice/kappa CSV");
  ev->add_option("--pred", o.pred, "CSV: subject,tract,mask[,transform]")->required();
  ev->add_option("--ref", o.ref, "CSV: subject,tract,mask")->required();
  ev->add_option("--roi", o.roi, "restrict Dice to this ROI JSON");
  ev->add_option("--out", o.out, "output CSV")->required();

  auto* rs = app.add_subcommand("rescan", "paired manifest -> epsilon and R^2 CSV");
  rs->add_option("--manifest", o.manifest, "CSV: subject,tract,mask1,mask2,tensor1,tensor2[,transform]")->required();
  rs->add_option("--out", o.out, "per-pair CSV")->required();
  rs->add_option("--r2-out", o.r2_out, "per-tract R^2 CSV (default <out>_r2.csv)");

  auto* rg = app.add_subcommand("regress", "study table -> age association report");
  rg->add_option("--table", o.table, "study CSV")->required();
  rg->add_option("--model", o.model, "1: age+sex+ICV, 2: plus tract volume")->default_val(1)->check(CLI::Range(1, 2));
  rg->add_option("--outcomes", o.outcomes, "comma list (default FA,MD,L1,RD,MO)");
  rg->add_option("--alpha", o.alpha, "family-wise alpha")->default_val(0.05);
  rg->add_option("--tests", o.n_tests, "Bonferroni test count (default: models in the report)");
  rg->add_flag("--no-average", o.no_average, "keep left/right tracts separate");
  rg->add_option("--out", o.out, "output CSV")->required();

  auto* gc = app.add_subcommand("group-compare", "study table -> ANOVA/post-hoc CSV");
  gc->add_option("--table", o.table, "study CSV")->required();
  gc->add_option("--group-column", o.group_column, "group label column")->default_val("group");
  gc->add_option("--outcomes", o.outcomes, "comma list (default FA,MD,L1,RD)");
  gc->add_option("--welch", o.welch, "auto|on|off")->default_val("auto")->check(CLI::IsMember({"auto", "on", "off"}));
  gc->add_option("--alpha", o.alpha, "alpha for the variance test")->default_val(0.05);
  gc->add_flag("--no-average", o.no_average, "keep left/right tracts separate");
  gc->add_option("--out", o.out, "output CSV")->required();

  auto* gk = app.add_subcommand("gradcheck", "config -> gradient check pass/fail report");
  gk->add_option("--config", o.config, "architecture JSON (default settings if omitted)");
  gk->add_option("--tol", o.tol, "max relative error")->default_val(1e-4);
  gk->add_option("--size", o.size, "cubic ROI side")->default_val(16);
  gk->add_option("--batch", o.batch, "batch size")->default_val(2);
  gk->add_option("--entries", o.entries, "sampled entries")->default_val(256);
  gk->add_option("--train-seed", o.seed_override, "override the configured seed");
  gk->add_option("--out", o.out, "JSON report");

  if (argc <= 1) {
    err << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
    err << (sub ? sub->help() : app.help());
    return kExitUsage;
  }

  detail::Io io{out, err};
  try {
    if (*fit) return cmd_fit_tensor(o, io);
    if (*sc) return cmd_scalars(o, io);
    if (*roi) return cmd_roi(o, io);
    if (*tr) return cmd_train(o, io);
    if (*sg) return cmd_segment(o, io);
    if (*ev) return cmd_eval(o, io);
    if (*rs) return cmd_rescan(o, io);
    if (*rg) return cmd_regress(o, io);
    if (*gc) return cmd_group_compare(o, io);
    if (*gk) return cmd_gradcheck(o, io);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace n4n::cli
