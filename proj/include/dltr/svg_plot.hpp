#pragma once

// Minimal standalone SVG line plots for the run artifacts (path overlay,
// lateral error vs arclength, eigenvalue-spectrum timeline).

#include <string>
#include <vector>

namespace dltr {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
};

struct PlotOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 720;
  int height = 480;
  bool equal_aspect = false;
  bool log_y = false;  // plots log10(max(y, floor))
};

void write_svg_plot(const std::string& path,
                    const std::vector<PlotSeries>& series,
                    const PlotOptions& options);

}  // namespace dltr
