#include "cped/plots.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cped/error.hpp"

namespace cped::harness {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(4);
  o << v;
  return o.str();
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace

MetricsTable parse_metrics_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  MetricsTable t;
  if (!std::getline(in, line) || line.empty()) {
    throw ValidationError(source + ": empty metrics file (0 rows)");
  }
  t.header = split(line);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != t.header.size()) {
      throw ValidationError(source + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(t.header.size()) + " cells, got " +
                            std::to_string(cells.size()));
    }
    std::vector<std::optional<double>> row;
    for (const std::string& c : cells) {
      if (c.empty()) {
        row.emplace_back();
        continue;
      }
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc() || ptr != c.data() + c.size()) {
        throw ValidationError(source + ":" + std::to_string(line_no) + ": not a number: '" + c + "'");
      }
      row.emplace_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  if (t.rows.empty()) throw ValidationError(source + ": metrics file has 0 data rows");
  return t;
}

MetricsTable read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_metrics_csv(buf.str(), path.string());
}

Curve aggregate(const std::vector<MetricsTable>& runs, const std::string& column) {
  Curve c;
  c.runs = runs.size();
  std::size_t longest = 0;
  for (const auto& r : runs) longest = std::max(longest, r.rows.size());
  for (std::size_t i = 0; i < longest; ++i) {
    std::vector<double> vals;
    double x = static_cast<double>(i);
    for (const auto& r : runs) {
      const auto it = std::find(r.header.begin(), r.header.end(), column);
      if (it == r.header.end() || i >= r.rows.size()) continue;
      const auto& cell = r.rows[i][static_cast<std::size_t>(it - r.header.begin())];
      if (cell) vals.push_back(*cell);
      if (!r.header.empty() && r.header[0] == "epoch" && r.rows[i][0]) x = *r.rows[i][0];
    }
    if (vals.empty()) continue;
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    c.x.push_back(x);
    c.mean.push_back(mean);
    c.std.push_back(std::sqrt(var / static_cast<double>(vals.size())));
  }
  return c;
}

std::string render_svg(const Curve& c, const std::string& title, const std::string& y_label) {
  const double w = 640, h = 400, left = 70, right = 20, top = 40, bottom = 50;
  const bool band = c.runs > 1;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!c.x.empty()) {
    x0 = *std::min_element(c.x.begin(), c.x.end());
    x1 = *std::max_element(c.x.begin(), c.x.end());
    y0 = y1 = c.mean[0];
    for (std::size_t i = 0; i < c.x.size(); ++i) {
      const double s = band ? c.std[i] : 0.0;
      y0 = std::min(y0, c.mean[i] - s);
      y1 = std::max(y1, c.mean[i] + s);
    }
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) {
    y0 -= 1;
    y1 += 1;
  }
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (w - left - right); };
  auto py = [&](double y) { return top + (y1 - y) / (y1 - y0) * (h - top - bottom); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"15\">"
    << escape(title) << "</text>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\""
    << h - bottom << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    o << "<text x=\"" << px(xv) << "\" y=\"" << h - bottom + 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(xv)
      << "</text>\n";
    o << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(yv)
      << "</text>\n";
  }
  o << "<text x=\"" << w / 2 << "\" y=\"" << h - 12
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch</text>\n";
  o << "<text x=\"16\" y=\"" << h / 2 << "\" transform=\"rotate(-90 16 " << h / 2
    << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << escape(y_label)
    << "</text>\n";
  if (band && !c.x.empty()) {
    o << "<polygon class=\"band\" fill=\"steelblue\" fill-opacity=\"0.25\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < c.x.size(); ++i) o << px(c.x[i]) << ',' << py(c.mean[i] + c.std[i]) << ' ';
    for (std::size_t i = c.x.size(); i-- > 0;) o << px(c.x[i]) << ',' << py(c.mean[i] - c.std[i]) << ' ';
    o << "\"/>\n";
  }
  if (!c.x.empty()) {
    o << "<polyline class=\"mean\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < c.x.size(); ++i) o << px(c.x[i]) << ',' << py(c.mean[i]) << ' ';
    o << "\"/>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::vector<std::filesystem::path> emit_plots(const std::vector<std::filesystem::path>& run_dirs,
                                              const std::filesystem::path& out_dir) {
  if (run_dirs.empty()) throw ValidationError("plot: no run directories given");
  std::vector<MetricsTable> runs;
  for (const auto& d : run_dirs) runs.push_back(read_metrics_csv(d / "metrics.csv"));
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t col = 1; col < runs[0].header.size(); ++col) {
    const std::string& name = runs[0].header[col];
    const Curve c = aggregate(runs, name);
    if (c.x.empty()) continue;
    const std::string title =
        name + (runs.size() > 1 ? " (mean +- std over " + std::to_string(runs.size()) + " runs)" : "");
    const auto path = out_dir / (name + ".svg");
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out << render_svg(c, title, name);
    written.push_back(path);
  }
  return written;
}

}  // namespace cped::harness
