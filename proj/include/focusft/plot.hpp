#pragma once

#include <string>
#include <vector>

namespace focusft {

// Minimal dependency-free SVG emission for the analysis figures.

// Grayscale heatmap of a T x T row-major matrix (0 = white, max = black)
// with optional vertical/horizontal boundary lines at the given indices.
void svg_heatmap(const std::vector<double>& matrix, int t,
                 const std::vector<int>& boundaries, const std::string& path);

struct PlotSeries {
  std::string label;
  std::vector<double> ys;
};

// Simple line plot; all series share xs.
void svg_line_plot(const std::vector<double>& xs,
                   const std::vector<PlotSeries>& series,
                   const std::string& x_label, const std::string& y_label,
                   const std::string& path);

}  // namespace focusft
