#include "psseg/ribbon.hpp"

#include <array>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "psseg/metrics.hpp"

namespace psseg {

namespace {

constexpr std::array<const char*, 20> kPalette = {
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
    "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78", "#98df8a", "#ff9896",
    "#c5b0d5", "#c49c94", "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string escape(const std::string& s) {
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

}  // namespace

std::string class_color(Label label) {
  if (label < 0) throw std::invalid_argument("class_color: negative label");
  return kPalette[static_cast<std::size_t>(label) % kPalette.size()];
}

std::string render_ribbon_svg(const std::vector<RibbonRow>& rows,
                              const std::vector<std::string>& vocabulary,
                              const RibbonOptions& o) {
  if (rows.empty()) throw std::invalid_argument("ribbon: no rows");
  const std::size_t T = rows.front().labels.size();
  if (T == 0) throw std::invalid_argument("ribbon: empty label sequence");
  for (const auto& r : rows) {
    if (r.labels.size() != T)
      throw std::invalid_argument("ribbon: row '" + r.name + "' has " +
                                  std::to_string(r.labels.size()) + " frames, expected " +
                                  std::to_string(T));
    for (Label l : r.labels)
      if (l < 0 || static_cast<std::size_t>(l) >= vocabulary.size())
        throw std::invalid_argument("ribbon: label " + std::to_string(l) + " has no legend entry");
  }

  const double band_width = static_cast<double>(T) * o.pixels_per_frame;
  const double rows_height = static_cast<double>(rows.size()) * (o.band_height + o.row_gap);
  const double legend_row = o.legend_swatch + 6.0;
  const double width = o.label_width + band_width + 10.0;
  const double height = rows_height + static_cast<double>(vocabulary.size()) * legend_row + 10.0;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\""
      << num(height) << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double y = static_cast<double>(r) * (o.band_height + o.row_gap);
    svg << "  <text x=\"0\" y=\"" << num(y + o.band_height * 0.7) << "\">"
        << escape(rows[r].name) << "</text>\n";
    for (const auto& s : metrics::to_segments(rows[r].labels)) {
      svg << "  <rect class=\"segment\" data-row=\"" << r << "\" data-label=\"" << s.label
          << "\" data-start=\"" << s.start << "\" data-end=\"" << s.end << "\" x=\""
          << num(o.label_width + static_cast<double>(s.start) * o.pixels_per_frame) << "\" y=\""
          << num(y) << "\" width=\"" << num(static_cast<double>(s.length()) * o.pixels_per_frame)
          << "\" height=\"" << num(o.band_height) << "\" fill=\"" << class_color(s.label)
          << "\"/>\n";
    }
  }
  for (std::size_t c = 0; c < vocabulary.size(); ++c) {
    const double y = rows_height + static_cast<double>(c) * legend_row;
    svg << "  <rect class=\"legend\" data-label=\"" << c << "\" x=\"0\" y=\"" << num(y)
        << "\" width=\"" << num(o.legend_swatch) << "\" height=\"" << num(o.legend_swatch)
        << "\" fill=\"" << class_color(static_cast<Label>(c)) << "\"/>\n";
    svg << "  <text x=\"" << num(o.legend_swatch + 4.0) << "\" y=\"" << num(y + o.legend_swatch - 2.0)
        << "\">" << escape(vocabulary[c]) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace psseg
