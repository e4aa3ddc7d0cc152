#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pagkit/csv.hpp"
#include "pagkit/error.hpp"
#include "pagkit/report.hpp"

namespace pagkit::report {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string esc(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double x) { return csv::format_number(x); }

class Svg {
 public:
  Svg(int width, int height, const SvgMeta& meta) {
    out_ << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
         << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\"" << height
         << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
         << "<metadata>"
         << esc(json{{"seed", meta.seed}, {"config_hash", meta.config_hash}, {"version", meta.version}}.dump())
         << "</metadata>\n"
         << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  }
  void text(double x, double y, std::string_view s, std::string_view anchor = "start", int size = 12) {
    out_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" text-anchor=\"" << anchor << "\" font-size=\"" << size
         << "\">" << esc(s) << "</text>\n";
  }
  void line(double x1, double y1, double x2, double y2, std::string_view stroke, std::string_view extra = "") {
    out_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
         << "\" stroke=\"" << stroke << "\"" << (extra.empty() ? "" : " ") << extra << "/>\n";
  }
  void rect(double x, double y, double w, double h, std::string_view fill, std::string_view extra = "") {
    out_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
         << "\" fill=\"" << fill << "\"" << (extra.empty() ? "" : " ") << extra << "/>\n";
  }
  void raw(std::string_view s) { out_ << s; }
  std::string finish() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  std::ostringstream out_;
};

}  // namespace

std::string svg_roc(std::span<const NamedCurve> curves, const SvgMeta& meta) {
  constexpr double x0 = 60, y0 = 420, side = 360;
  Svg svg(560, 480, meta);
  svg.text(280, 24, "ROC curves", "middle", 14);
  svg.rect(x0, y0 - side, side, side, "none", "stroke=\"black\"");
  for (int i = 0; i <= 5; ++i) {
    const double t = i / 5.0;
    svg.line(x0 + t * side, y0, x0 + t * side, y0 + 5, "black");
    svg.text(x0 + t * side, y0 + 18, num(t), "middle", 10);
    svg.line(x0 - 5, y0 - t * side, x0, y0 - t * side, "black");
    svg.text(x0 - 8, y0 - t * side + 4, num(t), "end", 10);
  }
  svg.line(x0, y0, x0 + side, y0 - side, "#999999", "stroke-dasharray=\"4 4\"");
  svg.text(x0 + side / 2, y0 + 36, "False positive rate", "middle");
  svg.raw("<text x=\"18\" y=\"" + num(y0 - side / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
          num(y0 - side / 2) + ")\">True positive rate</text>\n");
  // data-space polylines: the points attribute holds (fpr, tpr) verbatim
  svg.raw("<g transform=\"translate(" + num(x0) + ' ' + num(y0) + ") scale(" + num(side) + ' ' + num(-side) + ")\">\n");
  for (std::size_t i = 0; i < curves.size(); ++i) {
    std::string pts;
    for (const auto& p : curves[i].points) {
      if (!pts.empty()) pts += ' ';
      pts += num(p.fpr) + ',' + num(p.tpr);
    }
    svg.raw("<polyline data-name=\"" + esc(curves[i].name) + "\" fill=\"none\" stroke=\"" + kPalette[i % 6] +
            "\" stroke-width=\"2\" vector-effect=\"non-scaling-stroke\" points=\"" + pts + "\"/>\n");
  }
  svg.raw("</g>\n");
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const double y = 60 + 18.0 * static_cast<double>(i);
    svg.line(x0 + side + 12, y, x0 + side + 30, y, kPalette[i % 6], "stroke-width=\"2\"");
    svg.text(x0 + side + 34, y + 4, curves[i].name, "start", 10);
    svg.text(x0 + side + 34, y + 16, "AUC " + csv::format_fixed(curves[i].auc, 3), "start", 10);
  }
  return svg.finish();
}

std::string svg_histograms(const std::string& title,
                           const std::vector<std::pair<std::string, std::vector<double>>>& groups, const SvgMeta& meta) {
  constexpr double x0 = 60, y0 = 360, w = 420, h = 280;
  constexpr int bins = 20;
  Svg svg(640, 420, meta);
  svg.text(320, 24, title, "middle", 14);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& [_, v] : groups) {
    for (double x : v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  if (!std::isfinite(lo)) {
    lo = -1.0;
    hi = 1.0;
  } else if (hi - lo < 1e-9) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / bins;
  std::vector<std::vector<double>> density(groups.size(), std::vector<double>(bins, 0.0));
  double peak = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& v = groups[g].second;
    for (double x : v) {
      const int b = std::clamp(static_cast<int>((x - lo) / width), 0, bins - 1);
      density[g][static_cast<std::size_t>(b)] += 1.0 / (static_cast<double>(v.size()) * width);
    }
    for (double d : density[g]) peak = std::max(peak, d);
  }
  if (peak <= 0.0) peak = 1.0;
  svg.rect(x0, y0 - h, w, h, "none", "stroke=\"black\"");
  for (int i = 0; i <= 4; ++i) {
    const double t = i / 4.0;
    svg.line(x0 + t * w, y0, x0 + t * w, y0 + 5, "black");
    svg.text(x0 + t * w, y0 + 18, csv::format_fixed(lo + t * (hi - lo), 1), "middle", 10);
  }
  svg.text(x0 + w / 2, y0 + 36, "PAG (years)", "middle");
  svg.raw("<text x=\"18\" y=\"" + num(y0 - h / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
          num(y0 - h / 2) + ")\">Density</text>\n");
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto* colour = kPalette[g % 6];
    for (int b = 0; b < bins; ++b) {
      const double d = density[g][static_cast<std::size_t>(b)];
      if (d <= 0.0) continue;
      const double bh = h * d / peak;
      svg.rect(x0 + w * b / bins, y0 - bh, w / bins, bh, colour, "fill-opacity=\"0.45\" stroke=\"" + std::string(colour) + "\"");
    }
    const double ly = 60 + 18.0 * static_cast<double>(g);
    svg.rect(x0 + w + 14, ly - 9, 12, 12, colour, "fill-opacity=\"0.45\"");
    svg.text(x0 + w + 32, ly + 1, groups[g].first + " (n = " + std::to_string(groups[g].second.size()) + ")", "start", 11);
    if (groups[g].second.empty()) {
      svg.text(x0 + w / 2, y0 - h / 2 + 18.0 * static_cast<double>(g), groups[g].first + ": n = 0", "middle", 13);
    }
  }
  return svg.finish();
}

std::string svg_confusion_grid(std::span<const ConfusionCell> cells, const SvgMeta& meta) {
  std::vector<std::string> models;
  std::vector<double> fprs;
  for (const auto& c : cells) {
    if (std::find(models.begin(), models.end(), c.model) == models.end()) models.push_back(c.model);
    if (std::find(fprs.begin(), fprs.end(), c.cm.fpr_target) == fprs.end()) fprs.push_back(c.cm.fpr_target);
  }
  constexpr double cell = 150, pad = 20, left = 140, top = 60;
  const int width = static_cast<int>(left + static_cast<double>(fprs.size()) * (cell + pad) + pad);
  const int height = static_cast<int>(top + static_cast<double>(std::max<std::size_t>(models.size(), 1)) * (cell + pad) + pad);
  Svg svg(width, height, meta);
  svg.text(width / 2.0, 24, "Confusion matrices by operating point", "middle", 14);
  if (cells.empty()) svg.text(width / 2.0, top + 40, "no operating points", "middle");
  for (std::size_t j = 0; j < fprs.size(); ++j) {
    svg.text(left + static_cast<double>(j) * (cell + pad) + cell / 2, top - 8, "FPR @ " + csv::format_fixed(fprs[j], 2),
             "middle");
  }
  for (std::size_t i = 0; i < models.size(); ++i) {
    svg.text(left - 10, top + static_cast<double>(i) * (cell + pad) + cell / 2, models[i], "end", 11);
  }
  for (const auto& c : cells) {
    const auto i = static_cast<double>(std::find(models.begin(), models.end(), c.model) - models.begin());
    const auto j = static_cast<double>(std::find(fprs.begin(), fprs.end(), c.cm.fpr_target) - fprs.begin());
    const double x = left + j * (cell + pad);
    const double y = top + i * (cell + pad);
    const double half = cell / 2;
    const std::size_t vals[4] = {c.cm.tp, c.cm.fn, c.cm.fp, c.cm.tn};
    const char* names[4] = {"TP", "FN", "FP", "TN"};
    const char* fills[4] = {"#c7e9c0", "#fdd0a2", "#fdd0a2", "#c7e9c0"};
    for (int k = 0; k < 4; ++k) {
      const double cx = x + (k % 2) * half;
      const double cy = y + (k / 2) * half;
      svg.rect(cx, cy, half, half, fills[k], "stroke=\"black\"");
      svg.text(cx + half / 2, cy + half / 2 - 4, names[k], "middle", 10);
      svg.text(cx + half / 2, cy + half / 2 + 12, std::to_string(vals[k]), "middle", 13);
    }
    svg.text(x + half, y + cell + 14, "TPR " + csv::format_fixed(c.cm.achieved_tpr, 2), "middle", 10);
  }
  return svg.finish();
}

namespace {

std::vector<double> values_of(const json& group) { return group.at("values").get<std::vector<double>>(); }

}  // namespace

void cmd_plot(const RunConfig& cfg) {
  const Layout layout{cfg.out_dir};
  if (!fs::exists(layout.bundle())) fail(ErrorCode::IoError, "missing analysis bundle " + layout.bundle().string());
  json bundle;
  {
    std::ifstream in(layout.bundle());
    try {
      bundle = json::parse(in);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::ParseError, layout.bundle().string() + ": " + e.what());
    }
  }
  SvgMeta meta;
  const auto& prov = bundle.at("provenance");
  meta.seed = prov.at("seed").get<std::uint64_t>();
  meta.config_hash = prov.at("config_hash").get<std::string>();
  meta.version = prov.at("version").get<std::string>();

  const auto& groups = bundle.at("pag_groups");
  write_output(cfg, layout.plots_dir() / "pag_distribution.svg",
               svg_histograms("PAG by group", {{"ncsPC", values_of(groups.at("ncsPC"))}, {"csPC", values_of(groups.at("csPC"))}},
                              meta));
  write_output(cfg, layout.plots_dir() / "pag_subgroup.svg",
               svg_histograms("PAG: ncsPC vs csPC with PI-RADS <= 2",
                              {{"ncsPC", values_of(groups.at("ncsPC"))},
                               {"csPC, PI-RADS <= 2", values_of(groups.at("csPC_pirads_le2"))}},
                              meta));

  std::vector<NamedCurve> curves;
  for (const auto& [name, roc] : bundle.at("roc").items()) {
    if (roc.contains("error")) continue;
    NamedCurve c;
    c.name = name;
    c.auc = roc.at("auc").get<double>();
    for (const auto& p : roc.at("points")) c.points.push_back({p.at(0).get<double>(), p.at(1).get<double>(), 0.0});
    curves.push_back(std::move(c));
  }
  write_output(cfg, layout.plots_dir() / "roc.svg", svg_roc(curves, meta));

  std::vector<ConfusionCell> cells;
  for (const auto& c : bundle.at("confusion_matrices")) {
    ConfusionCell cell;
    cell.model = c.at("model").get<std::string>();
    cell.cm.fpr_target = c.at("fpr_target").get<double>();
    cell.cm.tp = c.at("tp").get<std::size_t>();
    cell.cm.fp = c.at("fp").get<std::size_t>();
    cell.cm.tn = c.at("tn").get<std::size_t>();
    cell.cm.fn = c.at("fn").get<std::size_t>();
    cell.cm.achieved_tpr = c.at("achieved_tpr").get<double>();
    cell.cm.achieved_fpr = c.at("achieved_fpr").get<double>();
    cells.push_back(cell);
  }
  write_output(cfg, layout.plots_dir() / "confusion_matrices.svg", svg_confusion_grid(cells, meta));
}

}  // namespace pagkit::report
