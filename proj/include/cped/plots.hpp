#pragma once

// SVG learning curves from one or more metrics.csv files.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cped::harness {

struct MetricsTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::optional<double>>> rows;  // empty cells are nullopt
};

MetricsTable parse_metrics_csv(const std::string& text, const std::string& source);
MetricsTable read_metrics_csv(const std::filesystem::path& path);

struct Curve {
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> std;  // population std across runs
  std::size_t runs = 0;
};

// Aligns runs by row index. Rows where no run has a value are dropped.
Curve aggregate(const std::vector<MetricsTable>& runs, const std::string& column);

// Band drawn only when curve.runs > 1.
std::string render_svg(const Curve& curve, const std::string& title, const std::string& y_label);

// One <column>.svg per metric column with at least one value; returns the files.
std::vector<std::filesystem::path> emit_plots(const std::vector<std::filesystem::path>& run_dirs,
                                              const std::filesystem::path& out_dir);

}  // namespace cped::harness
