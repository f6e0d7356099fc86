#pragma once

// Plain-text report artifacts: CSV tables and standalone SVG line plots.

#include <filesystem>
#include <string>
#include <vector>

namespace ebm {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// One <polyline> per series, with axes, tick labels and a legend.
std::string svg_line_plot(const std::vector<PlotSeries>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label);

// Quotes a CSV field when it contains a separator, quote or newline.
std::string csv_field(const std::string& text);
std::string format_real(double value);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace ebm
