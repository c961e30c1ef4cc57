#pragma once
// Hand-rolled SVG line charts; one polyline per series, no plotting deps.

#include <string>
#include <utility>
#include <vector>

namespace flm {

struct SeriesData {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

std::string render_line_chart(const std::vector<SeriesData>& series, const std::string& title,
                              const std::string& x_label, const std::string& y_label);

void write_line_chart(const std::string& path, const std::vector<SeriesData>& series,
                      const std::string& title, const std::string& x_label,
                      const std::string& y_label);

}  // namespace flm
