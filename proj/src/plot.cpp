#include "focusft/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "focusft/tensor.hpp"

namespace focusft {

namespace {

// Heatmaps larger than this are averaged down so the SVG stays small.
constexpr int kMaxHeatmapCells = 512;

}  // namespace

void svg_heatmap(const std::vector<double>& matrix, int t,
                 const std::vector<int>& boundaries, const std::string& path) {
  check(static_cast<std::size_t>(t) * t == matrix.size(), "svg_heatmap: size mismatch");
  const int bucket = (t + kMaxHeatmapCells - 1) / kMaxHeatmapCells;
  const int cells = (t + bucket - 1) / bucket;
  std::vector<double> grid(static_cast<std::size_t>(cells) * cells, 0.0);
  std::vector<int> counts(grid.size(), 0);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < t; ++j) {
      const std::size_t g = static_cast<std::size_t>(i / bucket) * cells + j / bucket;
      grid[g] += matrix[static_cast<std::size_t>(i) * t + j];
      counts[g] += 1;
    }
  }
  double mx = 0.0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    grid[g] /= counts[g];
    mx = std::max(mx, grid[g]);
  }
  if (mx <= 0.0) mx = 1.0;

  const double cell_px = std::max(1.0, 512.0 / cells);
  const double size = cells * cell_px;
  std::ofstream out(path);
  check(out.good(), "svg_heatmap: cannot open " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size
      << "\" height=\"" << size << "\" viewBox=\"0 0 " << size << " " << size
      << "\">\n";
  out << "<rect width=\"" << size << "\" height=\"" << size
      << "\" fill=\"white\"/>\n";
  for (int i = 0; i < cells; ++i) {
    for (int j = 0; j < cells; ++j) {
      const double v = grid[static_cast<std::size_t>(i) * cells + j] / mx;
      if (v <= 0.0) continue;
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
      out << "<rect x=\"" << j * cell_px << "\" y=\"" << i * cell_px
          << "\" width=\"" << cell_px << "\" height=\"" << cell_px
          << "\" fill=\"rgb(" << shade << "," << shade << "," << shade
          << ")\"/>\n";
    }
  }
  for (int b : boundaries) {
    const double p = static_cast<double>(b) / t * size;
    out << "<line x1=\"" << p << "\" y1=\"0\" x2=\"" << p << "\" y2=\"" << size
        << "\" stroke=\"red\" stroke-width=\"0.5\"/>\n";
    out << "<line x1=\"0\" y1=\"" << p << "\" x2=\"" << size << "\" y2=\"" << p
        << "\" stroke=\"red\" stroke-width=\"0.5\"/>\n";
  }
  out << "</svg>\n";
  check(out.good(), "svg_heatmap: write failed");
}

void svg_line_plot(const std::vector<double>& xs,
                   const std::vector<PlotSeries>& series,
                   const std::string& x_label, const std::string& y_label,
                   const std::string& path) {
  check(!xs.empty() && !series.empty(), "svg_line_plot: empty input");
  double xmin = xs.front(), xmax = xs.front();
  for (double x : xs) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
  }
  double ymin = series[0].ys.front(), ymax = ymin;
  for (const auto& s : series) {
    check(s.ys.size() == xs.size(), "svg_line_plot: series length mismatch");
    for (double y : s.ys) {
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;

  const double w = 640, h = 400, ml = 60, mr = 20, mt = 20, mb = 50;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
  auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ofstream out(path);
  check(out.good(), "svg_line_plot: cannot open " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
      << "\" height=\"" << h << "\">\n";
  out << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr
      << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
      << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << (w / 2) << "\" y=\"" << h - 12
      << "\" text-anchor=\"middle\" font-size=\"13\">" << x_label << "</text>\n";
  out << "<text x=\"16\" y=\"" << (h / 2)
      << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
      << (h / 2) << ")\">" << y_label << "</text>\n";
  out << "<text x=\"" << ml - 6 << "\" y=\"" << py(ymin)
      << "\" text-anchor=\"end\" font-size=\"10\">" << ymin << "</text>\n";
  out << "<text x=\"" << ml - 6 << "\" y=\"" << py(ymax)
      << "\" text-anchor=\"end\" font-size=\"10\">" << ymax << "</text>\n";
  out << "<text x=\"" << px(xmin) << "\" y=\"" << h - mb + 14
      << "\" text-anchor=\"middle\" font-size=\"10\">" << xmin << "</text>\n";
  out << "<text x=\"" << px(xmax) << "\" y=\"" << h - mb + 14
      << "\" text-anchor=\"middle\" font-size=\"10\">" << xmax << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = colors[si % 6];
    out << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i)
      out << px(xs[i]) << "," << py(series[si].ys[i]) << " ";
    out << "\"/>\n";
    out << "<text x=\"" << w - mr - 4 << "\" y=\"" << mt + 14 * (si + 1)
        << "\" text-anchor=\"end\" font-size=\"11\" fill=\"" << color << "\">"
        << series[si].label << "</text>\n";
  }
  out << "</svg>\n";
  check(out.good(), "svg_line_plot: write failed");
}

}  // namespace focusft
