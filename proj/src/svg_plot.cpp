#include "dltr/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dltr {

namespace {

constexpr double kLogFloor = 1e-12;

double tick_step(double span) {
  if (span <= 0.0) return 1.0;
  const double raw = span / 6.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double norm = raw / mag;
  if (norm < 1.5) return mag;
  if (norm < 3.5) return 2.0 * mag;
  if (norm < 7.5) return 5.0 * mag;
  return 10.0 * mag;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

void write_svg_plot(const std::string& path,
                    const std::vector<PlotSeries>& series,
                    const PlotOptions& options) {
  double xmin = std::numeric_limits<double>::max(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      const double y =
          options.log_y ? std::log10(std::max(s.y[i], kLogFloor)) : s.y[i];
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmin > xmax) {
    xmin = 0.0;
    xmax = 1.0;
    ymin = 0.0;
    ymax = 1.0;
  }
  if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
  if (ymax - ymin < 1e-12) ymax = ymin + 1.0;

  const double ml = 60.0, mr = 20.0, mt = 40.0, mb = 50.0;
  double pw = options.width - ml - mr;
  double ph = options.height - mt - mb;
  if (options.equal_aspect) {
    const double sx = pw / (xmax - xmin);
    const double sy = ph / (ymax - ymin);
    const double s = std::min(sx, sy);
    const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
    xmin = cx - 0.5 * pw / s;
    xmax = cx + 0.5 * pw / s;
    ymin = cy - 0.5 * ph / s;
    ymax = cy + 0.5 * ph / s;
  }

  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + (ymax - y) / (ymax - ymin) * ph; };

  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_svg_plot: cannot open " + path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << options.width
    << "\" height=\"" << options.height << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << options.width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
       "font-family=\"sans-serif\" font-size=\"15\">"
    << options.title << "</text>\n";

  // Axes and grid.
  const double xstep = tick_step(xmax - xmin);
  const double ystep = tick_step(ymax - ymin);
  for (double x = std::ceil(xmin / xstep) * xstep; x <= xmax + 1e-9;
       x += xstep) {
    f << "<line x1=\"" << px(x) << "\" y1=\"" << mt << "\" x2=\"" << px(x)
      << "\" y2=\"" << mt + ph << "\" stroke=\"#dddddd\"/>\n";
    f << "<text x=\"" << px(x) << "\" y=\"" << mt + ph + 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"11\">"
      << fmt(x) << "</text>\n";
  }
  for (double y = std::ceil(ymin / ystep) * ystep; y <= ymax + 1e-9;
       y += ystep) {
    f << "<line x1=\"" << ml << "\" y1=\"" << py(y) << "\" x2=\"" << ml + pw
      << "\" y2=\"" << py(y) << "\" stroke=\"#dddddd\"/>\n";
    f << "<text x=\"" << ml - 6 << "\" y=\"" << py(y) + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << fmt(y) << "</text>\n";
  }
  f << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw
    << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"black\"/>\n";
  f << "<text x=\"" << ml + pw / 2 << "\" y=\"" << options.height - 10
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
    << options.x_label << "</text>\n";
  f << "<text x=\"16\" y=\"" << mt + ph / 2
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
       "transform=\"rotate(-90 16 "
    << mt + ph / 2 << ")\">" << options.y_label << "</text>\n";

  // Series.
  double legend_y = mt + 14;
  for (const auto& s : series) {
    f << "<polyline fill=\"none\" stroke=\"" << s.color
      << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      const double y =
          options.log_y ? std::log10(std::max(s.y[i], kLogFloor)) : s.y[i];
      f << px(s.x[i]) << ',' << py(y) << ' ';
    }
    f << "\"/>\n";
    if (!s.label.empty()) {
      f << "<line x1=\"" << ml + pw - 110 << "\" y1=\"" << legend_y
        << "\" x2=\"" << ml + pw - 90 << "\" y2=\"" << legend_y
        << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
      f << "<text x=\"" << ml + pw - 84 << "\" y=\"" << legend_y + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.label
        << "</text>\n";
      legend_y += 16;
    }
  }
  f << "</svg>\n";
}

}  // namespace dltr
