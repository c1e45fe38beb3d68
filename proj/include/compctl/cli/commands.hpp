#pragma once

#include "compctl/analysis/complexity.hpp"
#include "compctl/analysis/evaluation.hpp"
#include "compctl/analysis/phase.hpp"
#include "compctl/analysis/report.hpp"
#include "compctl/analysis/structure.hpp"
#include "compctl/cli/config.hpp"
#include "compctl/corpus/io.hpp"
#include "compctl/training/trainer.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace compctl::cli {

struct CommandOptions {
  bool force = false;
  /// Messages go here; null silences them.
  std::ostream* log = &std::cerr;
  /// Sweep cells trained concurrently.
  int jobs = 1;
};

namespace detail {

inline void say(const CommandOptions& o, const std::string& msg) {
  static std::mutex mu;
  if (o.log == nullptr) return;
  std::lock_guard<std::mutex> lock(mu);
  *o.log << msg << '\n';
}

inline json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw MissingInput("missing " + p.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw MissingInput("unreadable JSON: " + p.string());
  return j;
}

inline nlohmann::ordered_json ordered(const json& j) { return nlohmann::ordered_json::parse(j.dump()); }

inline void write_json(const fs::path& p, const nlohmann::ordered_json& j) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

inline std::string fmt(double v, const char* f = "%g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

enum class DirState { kFresh, kSameComplete, kSameIncomplete };

/// Decides what to do with an output directory guarded by `marker`, which
/// records the config hash of whatever produced the directory.
inline DirState claim_dir(const fs::path& dir, const fs::path& marker, const std::string& hash,
                          const CommandOptions& o) {
  if (fs::exists(marker)) {
    const json m = read_json(marker);
    const bool same = m.value("config_hash", "") == hash;
    if (same && !o.force) return m.value("status", "") == "complete" ? DirState::kSameComplete : DirState::kSameIncomplete;
    if (!same && !o.force) {
      throw Refused(dir.string() + " holds output of config " + m.value("config_hash", "?") + "; use --force");
    }
    fs::remove_all(dir);
  } else if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!o.force) throw Refused(dir.string() + " exists and is not a compctl output; use --force");
    fs::remove_all(dir);
  }
  return DirState::kFresh;
}

}  // namespace detail

/// Writes the three JSONL splits and the dataset manifest to <output>/data.
inline int cmd_gen_data(const ExperimentConfig& cfg, const CommandOptions& o) {
  const fs::path dir = resolve_output(cfg.output_dir()) / "data";
  const std::string hash = cfg.hash();
  if (detail::claim_dir(dir, dir / "config.json", hash, o) == detail::DirState::kSameComplete) {
    detail::say(o, "gen-data: " + dir.string() + " is up to date");
    return kOk;
  }
  const corpus::DatasetBundle b = corpus::build_datasets(cfg.data(), cfg.table());
  corpus::export_bundle(b, dir);
  nlohmann::ordered_json marker{{"config_hash", hash}, {"status", "complete"}, {"config", detail::ordered(cfg.doc)}};
  detail::write_json(dir / "config.json", marker);
  detail::say(o, "gen-data: wrote " + std::to_string(b.train.size() + b.id_test.size() + b.ood_test.size()) +
                     " examples to " + dir.string());
  return kOk;
}

inline nlohmann::ordered_json run_manifest(const ExperimentConfig& cfg, const std::string& status) {
  const corpus::MappingTable table = cfg.table();
  return {{"format", "compctl-run"},
          {"config_hash", cfg.hash()},
          {"status", status},
          {"model_config", model::to_json(cfg.model())},
          {"train_config", training::to_json(cfg.train())},
          {"data_config", detail::ordered(cfg.doc.at("data"))},
          {"data_seed", training::data_seed(cfg.train().master_seed)},
          {"perturbation", corpus::perturbation_json(table)},
          {"config", detail::ordered(cfg.doc)}};
}

struct TrainOutcome {
  int code = kOk;
  fs::path dir;
  bool skipped = false;
};

/// Trains into the config's output directory. An identical completed run is
/// left alone; an interrupted one resumes from its latest checkpoint.
inline TrainOutcome train_into(const ExperimentConfig& cfg, const fs::path& dir, const CommandOptions& o) {
  TrainOutcome out{kOk, dir, false};
  const auto state = detail::claim_dir(dir, dir / "run_manifest.json", cfg.hash(), o);
  if (state == detail::DirState::kSameComplete) {
    out.skipped = true;
    detail::say(o, "train: " + dir.string() + " is up to date");
    return out;
  }
  fs::create_directories(dir);
  detail::write_json(dir / "config.json", detail::ordered(cfg.doc));
  detail::write_json(dir / "run_manifest.json", run_manifest(cfg, "running"));

  const corpus::DatasetBundle data = corpus::build_datasets(cfg.data(), cfg.table());
  training::RunOptions ro;
  ro.out_dir = dir;
  ro.resume = state == detail::DirState::kSameIncomplete;
  ro.meta = {{"config_hash", cfg.hash()}, {"experiment", detail::ordered(cfg.doc)}};
  const std::string tag = dir.filename().string();
  ro.on_epoch = [&](const training::TrainEpoch& t, const training::EpochRecord* r) {
    std::string line = tag + " epoch " + std::to_string(t.epoch) + " loss " + detail::fmt(t.train_loss, "%.4f") +
                       " acc " + detail::fmt(t.train_acc, "%.3f");
    if (r != nullptr) {
      line += " id " + detail::fmt(r->id_acc, "%.3f") + " ood " + detail::fmt(r->ood_acc, "%.3f") + " commut " +
              detail::fmt(r->commut_prob, "%.3f");
    }
    detail::say(o, line);
  };
  try {
    const training::RunResult run = training::train_run(data, cfg.model(), cfg.train(), ro);
    auto m = run_manifest(cfg, "complete");
    if (!run.records.empty()) {
      const auto& r = run.records.back();
      m["final"] = {{"epoch", r.epoch},     {"train_loss", r.train_loss}, {"train_acc", r.train_acc},
                    {"id_acc", r.id_acc},   {"ood_acc", r.ood_acc},       {"commut_prob", r.commut_prob}};
    }
    detail::write_json(dir / "run_manifest.json", m);
  } catch (const training::NumericFailure& e) {
    auto m = run_manifest(cfg, "failed");
    m["diagnostic"] = e.diagnostic();
    detail::write_json(dir / "run_manifest.json", m);
    detail::say(o, std::string("train: ") + e.what());
    out.code = kNumericFailure;
  }
  return out;
}

inline int cmd_train(const ExperimentConfig& cfg, const CommandOptions& o) {
  return train_into(cfg, resolve_output(cfg.output_dir()), o).code;
}

struct LoadedRun {
  model::LoadedCheckpoint checkpoint;
  ExperimentConfig config;
};

/// Loads a checkpoint written by cmd_train together with the experiment that
/// produced it; refuses when the two disagree.
inline LoadedRun load_run_checkpoint(const fs::path& ckpt) {
  if (!fs::exists(ckpt / "manifest.json")) throw MissingInput("no checkpoint at " + ckpt.string());
  model::LoadedCheckpoint loaded;
  try {
    loaded = model::load_checkpoint(ckpt);
  } catch (const std::exception& e) {
    throw Refused(std::string("checkpoint rejected: ") + e.what());
  }
  if (!loaded.manifest.contains("experiment")) throw Refused("checkpoint has no experiment config");
  ExperimentConfig cfg = make_config(loaded.manifest.at("experiment"));
  if (cfg.hash() != loaded.manifest.value("config_hash", "") || !(cfg.model() == loaded.params.config)) {
    throw Refused("checkpoint manifest does not match its experiment config");
  }
  return {std::move(loaded), std::move(cfg)};
}

/// ID/OOD accuracy, commutativity and phase label of a checkpoint on the data
/// its experiment defines.
inline nlohmann::ordered_json evaluate_checkpoint(const LoadedRun& run) {
  const corpus::DatasetBundle data = corpus::build_datasets(run.config.data(), run.config.table());
  const std::size_t cap = run.config.train().eval_cap;
  const auto& p = run.checkpoint.params;
  const double id = analysis::accuracy(p, analysis::capped(data.id_test, cap));
  const double ood = analysis::accuracy(p, analysis::capped(data.ood_test, cap));
  const double com = analysis::commutativity_probability(p, analysis::capped(data.ood_test, cap));
  const analysis::PhaseLabel label = analysis::classify_phase(id, ood, com);
  return {{"config_hash", run.config.hash()}, {"id_acc", id},     {"ood_acc", ood},
          {"commut_prob", com},               {"phase", label.phase}, {"commutativity_flag", label.flag_name()},
          {"stable_rank", analysis::stable_rank_report(p)},
          {"condensation", analysis::condensation_score(p)}};
}

inline int cmd_eval(const fs::path& ckpt, const fs::path& out_file, const CommandOptions& o) {
  const LoadedRun run = load_run_checkpoint(ckpt);
  const auto res = evaluate_checkpoint(run);
  if (!out_file.empty()) detail::write_json(out_file, res);
  if (o.log != nullptr) *o.log << res.dump(2) << '\n';
  return kOk;
}

inline int cmd_analyze(const fs::path& ckpt, const std::vector<std::string>& which, fs::path out_dir,
                       const CommandOptions& o) {
  const LoadedRun run = load_run_checkpoint(ckpt);
  std::vector<analysis::ReportKind> kinds;
  try {
    const json& names = which.empty() ? run.config.doc.at("analysis").at("reports") : json(which);
    for (const auto& n : names) kinds.push_back(analysis::report_from_name(n.get<std::string>()));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (out_dir.empty()) out_dir = ckpt.parent_path() / "analysis";
  const json& a = run.config.doc.at("analysis");
  analysis::ReportOptions ro;
  ro.seed = a.at("seed").get<std::uint64_t>();
  ro.n_per_pair = a.at("n_per_pair").get<std::size_t>();
  ro.samples_per_combo = a.at("samples_per_combo").get<std::size_t>();
  ro.svg = a.at("svg").get<bool>();
  const json& hist = run.checkpoint.manifest.at("history").at("records");
  if (!hist.empty()) {
    const auto& r = hist.back();
    ro.metrics = training::EpochRecord{r[0].get<int>(),    r[1].get<double>(), r[2].get<double>(), r[3].get<double>(),
                                       r[4].get<double>(), r[5].get<double>(), r[6].get<double>()};
  }
  analysis::write_analysis_report(out_dir, run.checkpoint.params, run.config.table(), kinds, ro);
  detail::say(o, "analyze: wrote " + (out_dir / "report.json").string());
  return kOk;
}

// ---------------------------------------------------------------- sweeps

struct SweepCell {
  std::string name;
  ExperimentConfig config;
  fs::path dir;
};

inline std::string number_tag(double v) {
  std::string s = detail::fmt(v);
  for (char& c : s) {
    if (c == '.') c = 'p';
    if (c == '-') c = 'm';
  }
  return s;
}

/// One cell per (gamma, weight decay, seed) of the sweep section.
inline std::vector<SweepCell> phase_cells(const ExperimentConfig& base) {
  const json& s = base.doc.at("sweep");
  const fs::path root = resolve_output(base.output_dir()) / "cells";
  std::vector<SweepCell> cells;
  for (const auto& g : s.at("gammas")) {
    for (const auto& wd : s.at("weight_decays")) {
      for (const auto& seed : s.at("seeds")) {
        json doc = base.doc;
        doc["model"]["init_rate"] = g;
        doc["train"]["weight_decay"] = wd;
        doc["train"]["master_seed"] = seed;
        const std::string name = "g" + number_tag(g.get<double>()) + "_wd" + number_tag(wd.get<double>()) + "_s" +
                                 std::to_string(seed.get<std::uint64_t>());
        doc["output_dir"] = (root / name).string();
        cells.push_back({name, make_config(std::move(doc)), root / name});
      }
    }
  }
  return cells;
}

struct ComplexityCellSpec {
  SweepCell cell;
  int k;
  double gamma;
  int trial;
  bool per_pair;
};

/// The (k, gamma, trial) grid of the complexity section plus the per-pair
/// runs (k = per_pair_k). Every cell trains on all 16 anchor pairs.
inline std::vector<ComplexityCellSpec> complexity_cells(const ExperimentConfig& base) {
  const json& c = base.doc.at("complexity");
  const fs::path root = resolve_output(base.output_dir()) / "cells";
  const auto seed = c.at("seed").get<std::uint64_t>();
  const int trials = c.at("trials").get<int>();
  std::vector<ComplexityCellSpec> out;
  auto add = [&](int k, double g, int t, bool per_pair) {
    json doc = base.doc;
    doc["model"]["init_rate"] = g;
    doc["data"]["perturbation_k"] = k;
    doc["data"]["pair_policy"] = "all_pairs";
    doc["train"]["master_seed"] = analysis::trial_seed(seed, t);
    const std::string name = "k" + std::to_string(k) + "_g" + number_tag(g) + "_t" + std::to_string(t);
    for (auto& existing : out) {
      if (existing.cell.name == name) {
        existing.per_pair = existing.per_pair || per_pair;
        return;
      }
    }
    doc["output_dir"] = (root / name).string();
    out.push_back({{name, make_config(std::move(doc)), root / name}, k, g, t, per_pair});
  };
  for (const auto& g : c.at("gammas")) {
    for (const auto& k : c.at("k_values")) {
      for (int t = 0; t < trials; ++t) add(k.get<int>(), g.get<double>(), t, false);
    }
  }
  for (const auto& g : c.at("per_pair_gammas")) {
    for (int t = 0; t < trials; ++t) add(c.at("per_pair_k").get<int>(), g.get<double>(), t, true);
  }
  return out;
}

/// Trains every cell (skipping completed ones), `jobs` at a time.
inline int run_cells(const std::vector<SweepCell>& cells, const CommandOptions& o) {
  std::atomic<std::size_t> next{0};
  std::atomic<int> worst{kOk};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) {
      try {
        const int code = train_into(cells[i].config, cells[i].dir, o).code;
        if (code != kOk) worst = code;
      } catch (const Refused& e) {
        detail::say(o, std::string("sweep: ") + e.what());
        worst = kRefused;
      }
    }
  };
  const int jobs = std::max(1, o.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return worst;
}

inline void write_sweep_manifest(const fs::path& root, const ExperimentConfig& base, const std::string& kind,
                                 const std::vector<SweepCell>& cells) {
  fs::create_directories(root);
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& c : cells) list.push_back({{"name", c.name}, {"config_hash", c.config.hash()}});
  detail::write_json(root / "sweep_manifest.json",
                     {{"format", "compctl-sweep"}, {"kind", kind}, {"config", detail::ordered(base.doc)}, {"cells", list}});
}

inline int cmd_sweep(const ExperimentConfig& base, const CommandOptions& o) {
  const auto cells = phase_cells(base);
  write_sweep_manifest(resolve_output(base.output_dir()), base, "phase", cells);
  return run_cells(cells, o);
}

/// Final metrics of a completed cell, or nullopt when it is missing,
/// incomplete or was produced by another config.
inline std::optional<json> completed_run(const SweepCell& c) {
  const fs::path m = c.dir / "run_manifest.json";
  if (!fs::exists(m)) return std::nullopt;
  json j = detail::read_json(m);
  if (j.value("status", "") != "complete" || j.value("config_hash", "") != c.config.hash()) return std::nullopt;
  return j;
}

struct PhaseRow {
  double gamma, weight_decay;
  std::uint64_t seed;
  double id_acc, ood_acc, commut_prob;
  analysis::PhaseLabel label;
  double stable_rank, condensation;
};

inline std::string phase_csv_header() {
  return "gamma,weight_decay,seed,id_acc,ood_acc,commut_prob,phase,commutativity_flag,stable_rank,condensation";
}

/// Per-cell table, per-(gamma, wd) means and an SVG heatmap of mean OOD
/// accuracy (hatched: ID < 0.9; triangle: commutativity < 0.7).
inline int cmd_phase_diagram(const ExperimentConfig& base, const CommandOptions& o) {
  const fs::path root = resolve_output(base.output_dir());
  std::vector<PhaseRow> rows;
  std::vector<std::string> missing;
  for (const SweepCell& c : phase_cells(base)) {
    const auto run = completed_run(c);
    if (!run) {
      missing.push_back(c.name);
      continue;
    }
    const auto& f = run->at("final");
    const model::LoadedCheckpoint ck = model::load_checkpoint(c.dir / "final");
    PhaseRow r{c.config.model().init_rate,
               c.config.train().weight_decay,
               c.config.train().master_seed,
               f.at("id_acc").get<double>(),
               f.at("ood_acc").get<double>(),
               f.at("commut_prob").get<double>(),
               {},
               analysis::stable_rank_report(ck.params),
               analysis::condensation_score(ck.params)};
    r.label = analysis::classify_phase(r.id_acc, r.ood_acc, r.commut_prob);
    rows.push_back(r);
  }
  fs::create_directories(root);
  {
    std::ofstream out(root / "phase_table.csv", std::ios::binary);
    out << phase_csv_header() << '\n';
    for (const auto& r : rows) {
      out << training::format_double(r.gamma) << ',' << training::format_double(r.weight_decay) << ',' << r.seed << ','
          << training::format_double(r.id_acc) << ',' << training::format_double(r.ood_acc) << ','
          << training::format_double(r.commut_prob) << ',' << r.label.phase << ',' << r.label.flag_name() << ','
          << training::format_double(r.stable_rank) << ',' << training::format_double(r.condensation) << '\n';
    }
  }
  struct Agg {
    double id = 0, ood = 0, com = 0, sr = 0, cond = 0;
    int n = 0;
  };
  std::map<std::pair<double, double>, Agg> agg;
  for (const auto& r : rows) {
    Agg& a = agg[{r.gamma, r.weight_decay}];
    a.id += r.id_acc, a.ood += r.ood_acc, a.com += r.commut_prob, a.sr += r.stable_rank, a.cond += r.condensation;
    ++a.n;
  }
  {
    std::ofstream out(root / "phase_mean.csv", std::ios::binary);
    out << "gamma,weight_decay,n,id_acc,ood_acc,commut_prob,phase,commutativity_flag,stable_rank,condensation\n";
    for (auto& [key, a] : agg) {
      const double n = a.n;
      const auto label = analysis::classify_phase(a.id / n, a.ood / n, a.com / n);
      out << training::format_double(key.first) << ',' << training::format_double(key.second) << ',' << a.n << ','
          << training::format_double(a.id / n) << ',' << training::format_double(a.ood / n) << ','
          << training::format_double(a.com / n) << ',' << label.phase << ',' << label.flag_name() << ','
          << training::format_double(a.sr / n) << ',' << training::format_double(a.cond / n) << '\n';
    }
  }
  // Heatmap: gamma on x, weight decay on y.
  {
    std::vector<double> gs, wds;
    for (auto& [key, a] : agg) {
      if (std::find(gs.begin(), gs.end(), key.first) == gs.end()) gs.push_back(key.first);
      if (std::find(wds.begin(), wds.end(), key.second) == wds.end()) wds.push_back(key.second);
    }
    std::sort(gs.begin(), gs.end());
    std::sort(wds.begin(), wds.end());
    const int cell = 60;
    std::ofstream svg(root / "phase_heatmap.svg", std::ios::binary);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 80 + cell * gs.size() << "\" height=\""
        << 60 + cell * wds.size() << "\">\n<defs><pattern id=\"h\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\">"
        << "<path d=\"M0,6 L6,0\" stroke=\"black\" stroke-width=\"1\"/></pattern></defs>\n";
    for (std::size_t xi = 0; xi < gs.size(); ++xi) {
      svg << "<text x=\"" << 80 + cell * xi + 10 << "\" y=\"" << 50 + cell * wds.size() << "\" font-size=\"11\">"
          << detail::fmt(gs[xi]) << "</text>\n";
      for (std::size_t yi = 0; yi < wds.size(); ++yi) {
        const auto it = agg.find({gs[xi], wds[yi]});
        if (it == agg.end()) continue;
        const Agg& a = it->second;
        const double ood = a.ood / a.n;
        const double x = 80 + cell * xi, y = 20 + cell * yi;
        svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb("
            << static_cast<int>(255 * ood) << ",40," << static_cast<int>(255 * (1 - ood)) << ")\"/>\n";
        if (a.id / a.n < analysis::kIdThreshold) {
          svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
              << "\" fill=\"url(#h)\"/>\n";
        }
        if (a.com / a.n < analysis::kCommutThreshold) {
          svg << "<polygon points=\"" << x + 30 << ',' << y + 15 << ' ' << x + 20 << ',' << y + 40 << ' ' << x + 40
              << ',' << y + 40 << "\" fill=\"white\"/>\n";
        }
      }
    }
    for (std::size_t yi = 0; yi < wds.size(); ++yi) {
      svg << "<text x=\"4\" y=\"" << 20 + cell * yi + 34 << "\" font-size=\"11\">wd " << detail::fmt(wds[yi])
          << "</text>\n";
    }
    svg << "</svg>\n";
  }
  nlohmann::ordered_json summary{{"cells_found", rows.size()}, {"missing", missing}};
  detail::write_json(root / "phase_diagram.json", summary);
  for (const auto& m : missing) detail::say(o, "phase-diagram: missing cell " + m);
  return missing.empty() ? kOk : kMissingInput;
}

/// Trains the complexity grid and writes per-cell, summary and per-pair
/// tables plus the Spearman correlation of mean epochs with k per gamma.
inline int cmd_complexity_sweep(const ExperimentConfig& base, const CommandOptions& o) {
  const auto specs = complexity_cells(base);
  std::vector<SweepCell> cells;
  for (const auto& s : specs) cells.push_back(s.cell);
  const fs::path root = resolve_output(base.output_dir());
  write_sweep_manifest(root, base, "complexity", cells);
  const int trained = run_cells(cells, o);

  const json& c = base.doc.at("complexity");
  const auto kind = c.at("kind").get<std::string>() == "loss" ? training::ThresholdKind::kLoss
                                                               : training::ThresholdKind::kPairAccuracy;
  const double theta = c.at("threshold").get<double>();
  const double pair_theta = c.at("pair_threshold").get<double>();
  std::vector<analysis::ComplexityCell> grid;
  std::vector<analysis::ComplexityCell> per_pair;
  std::vector<std::string> missing;
  for (const auto& s : specs) {
    if (!completed_run(s.cell)) {
      missing.push_back(s.cell.name);
      continue;
    }
    const auto hist = training::read_train_history_csv(s.cell.dir / "pair_accuracy.csv");
    analysis::ComplexityCell cell;
    cell.k = s.k;
    cell.gamma = s.gamma;
    cell.trial = s.trial;
    cell.master_seed = s.cell.config.train().master_seed;
    cell.perturbed = s.cell.config.table().perturbed_groups();
    std::vector<double> series;
    for (const auto& t : hist) series.push_back(kind == training::ThresholdKind::kLoss ? t.train_loss : t.train_acc);
    cell.epochs = analysis::epochs_needed(series, kind, theta);
    for (std::size_t p = 0; p < corpus::kPairCount; ++p) {
      std::vector<double> acc;
      for (const auto& t : hist) acc.push_back(t.pair_acc[p]);
      cell.pair_epochs[p] = analysis::epochs_needed(acc, training::ThresholdKind::kPairAccuracy, pair_theta);
    }
    bool in_grid = false;
    for (const auto& k : c.at("k_values")) in_grid = in_grid || k.get<int>() == s.k;
    bool grid_gamma = false;
    for (const auto& g : c.at("gammas")) grid_gamma = grid_gamma || g.get<double>() == s.gamma;
    if (in_grid && grid_gamma) grid.push_back(cell);
    if (s.per_pair) per_pair.push_back(cell);
  }

  auto epochs_str = [](const std::optional<int>& e) { return e ? std::to_string(*e) : std::string("NOT_REACHED"); };
  {
    std::ofstream out(root / "complexity_cells.csv", std::ios::binary);
    out << "k,gamma,trial,master_seed,epochs\n";
    for (const auto& g : grid) {
      out << g.k << ',' << training::format_double(g.gamma) << ',' << g.trial << ',' << g.master_seed << ','
          << epochs_str(g.epochs) << '\n';
    }
  }
  const auto summary = analysis::summarize_complexity(grid);
  {
    std::ofstream out(root / "complexity_summary.csv", std::ios::binary);
    out << "k,gamma,mean_epochs,std_epochs,reached,total\n";
    for (const auto& s : summary) {
      out << s.k << ',' << training::format_double(s.gamma) << ',' << training::format_double(s.mean_epochs) << ','
          << training::format_double(s.std_epochs) << ',' << s.reached << ',' << s.total << '\n';
    }
  }
  {
    std::ofstream out(root / "pair_epochs.csv", std::ios::binary);
    out << "k,gamma,trial,pair,epochs\n";
    for (const auto& g : per_pair) {
      for (std::size_t p = 0; p < corpus::kPairCount; ++p) {
        out << g.k << ',' << training::format_double(g.gamma) << ',' << g.trial << ','
            << corpus::AnchorPair::from_index(static_cast<int>(p)).name() << ',' << epochs_str(g.pair_epochs[p]) << '\n';
      }
    }
  }
  nlohmann::ordered_json res{{"threshold_kind", c.at("kind").get<std::string>()}, {"threshold", theta}, {"missing", missing}};
  nlohmann::ordered_json corr = nlohmann::ordered_json::object();
  for (const auto& g : c.at("gammas")) {
    std::vector<double> ks, means;
    for (const auto& s : summary) {
      if (s.gamma == g.get<double>() && !std::isnan(s.mean_epochs)) {
        ks.push_back(s.k);
        means.push_back(s.mean_epochs);
      }
    }
    nlohmann::ordered_json entry;
    entry["spearman"] = ks.size() >= 2 ? nlohmann::ordered_json(analysis::spearman(ks, means)) : nlohmann::ordered_json();
    if (!means.empty()) {
      entry["max_over_min"] = *std::max_element(means.begin(), means.end()) / *std::min_element(means.begin(), means.end());
    }
    corr[detail::fmt(g.get<double>())] = entry;
  }
  res["by_gamma"] = corr;
  detail::write_json(root / "complexity.json", res);
  for (const auto& m : missing) detail::say(o, "complexity-sweep: missing cell " + m);
  if (trained != kOk) return trained;
  return missing.empty() ? kOk : kMissingInput;
}

}  // namespace compctl::cli
