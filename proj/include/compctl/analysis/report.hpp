#pragma once

#include "compctl/analysis/masking.hpp"
#include "compctl/analysis/phase.hpp"
#include "compctl/analysis/structure.hpp"
#include "compctl/training/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace compctl::analysis {

namespace fs = std::filesystem;
using training::format_double;

inline void write_matrix_csv(const fs::path& path, const Tensor& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out << (c ? "," : "") << format_double(m.at(r, c));
    out << '\n';
  }
}

inline void write_embedding_csv(const fs::path& path, const std::vector<EmbeddingPoint>& pts) {
  std::ofstream out(path, std::ios::binary);
  out << "token,pc1,pc2\n";
  for (const auto& p : pts) out << p.token << ',' << format_double(p.pc1) << ',' << format_double(p.pc2) << '\n';
}

inline void write_pair_points_csv(const fs::path& path, const MaskedPairStudy& s) {
  std::ofstream out(path, std::ios::binary);
  out << "pair,pc1,pc2\n";
  for (std::size_t i = 0; i < s.pair_index.size(); ++i) {
    out << corpus::AnchorPair::from_index(s.pair_index[i]).name() << ',' << format_double(s.coords.at(i, 0)) << ','
        << format_double(s.coords.at(i, 1)) << '\n';
  }
}

inline void write_anchor_samples_csv(const fs::path& path, const MaskedSingleAnchorStudy& s) {
  std::ofstream out(path, std::ios::binary);
  out << "index,value,key,first_anchor\n";
  for (std::size_t i = 0; i < s.samples.size(); ++i) {
    out << i << ',' << s.samples[i].value << ',' << s.samples[i].key << ',' << corpus::name_of(s.samples[i].first)
        << '\n';
  }
}

// Minimal SVG renderers for a quick look at the CSV outputs.
namespace svg {

inline std::string color_for(int i, int n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "hsl(%d,70%%,45%%)", n > 0 ? 360 * i / n : 0);
  return buf;
}

struct Point {
  double x, y;
  int series;
  std::string label;
};

inline void scatter(const fs::path& path, const std::vector<Point>& pts, int n_series, const std::string& title) {
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!pts.empty()) {
    x0 = x1 = pts[0].x;
    y0 = y1 = pts[0].y;
    for (const auto& p : pts) {
      x0 = std::min(x0, p.x), x1 = std::max(x1, p.x), y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
    }
  }
  const double w = 480, h = 480, pad = 30;
  auto sx = [&](double x) { return pad + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * (w - 2 * pad); };
  auto sy = [&](double y) { return h - pad - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5) * (h - 2 * pad); };
  std::ofstream out(path, std::ios::binary);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  out << "<text x=\"10\" y=\"18\" font-size=\"13\">" << title << "</text>\n";
  for (const auto& p : pts) {
    out << "<circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.y) << "\" r=\"3\" fill=\"" << color_for(p.series, n_series)
        << "\"><title>" << p.label << "</title></circle>\n";
  }
  out << "</svg>\n";
}

/// Heatmap of values in [lo, hi] (blue -> red).
/// Matrices wider than 128 are drawn block-averaged so the file stays small.
inline void heatmap(const fs::path& path, const Tensor& m, double lo, double hi, const std::string& title) {
  const std::size_t block = (std::max(m.rows(), m.cols()) + 127) / 128;
  const std::size_t rows = (m.rows() + block - 1) / block, cols = (m.cols() + block - 1) / block;
  auto value = [&](std::size_t br, std::size_t bc) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t r = br * block; r < std::min(m.rows(), (br + 1) * block); ++r)
      for (std::size_t c = bc * block; c < std::min(m.cols(), (bc + 1) * block); ++c, ++n) sum += m.at(r, c);
    return sum / static_cast<double>(n);
  };
  const double cell = std::max(1.0, 480.0 / static_cast<double>(std::max<std::size_t>(1, cols)));
  std::ofstream out(path, std::ios::binary);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << cell * cols << "\" height=\""
      << cell * rows + 24 << "\">\n<text x=\"4\" y=\"16\" font-size=\"13\">" << title << "</text>\n";
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double t = std::clamp((value(r, c) - lo) / (hi - lo), 0.0, 1.0);
      out << "<rect x=\"" << c * cell << "\" y=\"" << 24 + r * cell << "\" width=\"" << cell << "\" height=\"" << cell
          << "\" fill=\"rgb(" << static_cast<int>(255 * t) << ",60," << static_cast<int>(255 * (1 - t)) << ")\"/>\n";
    }
  }
  out << "</svg>\n";
}

}  // namespace svg

enum class ReportKind { kCondensation, kStableRank, kEmbeddingPca, kMaskPair, kMaskAnchor };

inline const char* report_name(ReportKind k) {
  switch (k) {
    case ReportKind::kCondensation: return "condensation";
    case ReportKind::kStableRank: return "stable-rank";
    case ReportKind::kEmbeddingPca: return "embedding-pca";
    case ReportKind::kMaskPair: return "mask-pair";
    case ReportKind::kMaskAnchor: return "mask-anchor";
  }
  return "?";
}

inline ReportKind report_from_name(const std::string& s) {
  for (ReportKind k : {ReportKind::kCondensation, ReportKind::kStableRank, ReportKind::kEmbeddingPca,
                       ReportKind::kMaskPair, ReportKind::kMaskAnchor}) {
    if (s == report_name(k)) return k;
  }
  throw std::invalid_argument("unknown analysis '" + s + "'");
}

struct ReportOptions {
  std::uint64_t seed = 0;
  std::size_t n_per_pair = 50;
  std::size_t samples_per_combo = 2;
  bool svg = false;
  /// Metrics for the phase label; omitted from the report when absent.
  std::optional<training::EpochRecord> metrics;
};

/// Runs the selected analyses on one checkpoint and writes report.json plus
/// the CSV (and optionally SVG) side files into `dir`. Returns the JSON.
inline nlohmann::ordered_json write_analysis_report(const fs::path& dir, const model::ModelParams& params,
                                                    const corpus::MappingTable& table,
                                                    const std::vector<ReportKind>& kinds, const ReportOptions& opt) {
  fs::create_directories(dir);
  nlohmann::ordered_json rep;
  rep["format"] = "compctl-analysis";
  rep["model_config"] = model::to_json(params.config);
  if (opt.metrics) {
    const auto& m = *opt.metrics;
    const PhaseLabel label = classify_phase(m.id_acc, m.ood_acc, m.commut_prob);
    rep["phase"] = {{"phase", label.phase},
                    {"commutativity_flag", label.flag_name()},
                    {"id_acc", m.id_acc},
                    {"ood_acc", m.ood_acc},
                    {"commut_prob", m.commut_prob}};
  }
  for (ReportKind k : kinds) {
    switch (k) {
      case ReportKind::kCondensation: {
        const Tensor c = condensation_matrix(params);
        write_matrix_csv(dir / "condensation.csv", c);
        if (opt.svg) svg::heatmap(dir / "condensation.svg", c, -1.0, 1.0, "W_Q(1) row cosine");
        rep["condensation"] = {{"size", c.rows()}, {"mean_abs_offdiag", mean_abs_off_diagonal(c)},
                               {"csv", "condensation.csv"}};
        break;
      }
      case ReportKind::kStableRank:
        rep["stable_rank"] = {{"matrix", "layers.0.w_q"}, {"value", stable_rank_report(params)}};
        break;
      case ReportKind::kEmbeddingPca: {
        const auto pts = embedding_pca(params);
        write_embedding_csv(dir / "embedding_pca.csv", pts);
        if (opt.svg) {
          std::vector<svg::Point> sp;
          for (const auto& p : pts) sp.push_back({p.pc1, p.pc2, p.token % 7, std::to_string(p.token)});
          svg::scatter(dir / "embedding_pca.svg", sp, 7, "embedding PCA (tokens 20-100, colour = token mod 7)");
        }
        rep["embedding_pca"] = {{"points", pts.size()}, {"csv", "embedding_pca.csv"}};
        break;
      }
      case ReportKind::kMaskPair: {
        const MaskedPairStudy s = masked_pair_study(params, table, opt.n_per_pair, opt.seed);
        write_pair_points_csv(dir / "mask_pair_pca.csv", s);
        if (opt.svg) {
          std::vector<svg::Point> sp;
          for (std::size_t i = 0; i < s.pair_index.size(); ++i) {
            sp.push_back({s.coords.at(i, 0), s.coords.at(i, 1), s.pair_index[i],
                          corpus::AnchorPair::from_index(s.pair_index[i]).name()});
          }
          svg::scatter(dir / "mask_pair_pca.svg", sp, corpus::kPairCount, "key-masked outputs by anchor pair");
        }
        rep["mask_pair"] = {{"samples", s.pair_index.size()}, {"merge_score", s.merge_score},
                            {"csv", "mask_pair_pca.csv"}};
        break;
      }
      case ReportKind::kMaskAnchor: {
        const MaskedSingleAnchorStudy s = masked_single_anchor_study(params, opt.seed, opt.samples_per_combo);
        write_matrix_csv(dir / "mask_anchor_similarity.csv", s.similarity);
        write_anchor_samples_csv(dir / "mask_anchor_samples.csv", s);
        if (opt.svg) svg::heatmap(dir / "mask_anchor_similarity.svg", s.similarity, -1.0, 1.0, "a2-masked similarity");
        rep["mask_anchor"] = {{"samples", s.samples.size()}, {"contrast_score", s.contrast_score},
                              {"csv", "mask_anchor_similarity.csv"}};
        break;
      }
    }
  }
  std::ofstream(dir / "report.json", std::ios::binary) << rep.dump(2) << '\n';
  return rep;
}

}  // namespace compctl::analysis
