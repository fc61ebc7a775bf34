#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace gstein {

// In-memory RFC-4180 table with a header row.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;  // throws ArgumentError when absent
  double number(std::size_t row, const std::string& name) const;
};

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

std::string to_csv(const CsvTable& table);
CsvTable parse_csv(const std::string& text);
void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> err;  // optional half-width error bars
};

// Standalone SVG line chart.
std::string line_plot_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                          const std::vector<PlotSeries>& series);

// Fixed-width text table; the first row is the header.
std::string render_table(const std::vector<std::vector<std::string>>& cells);

}  // namespace gstein
