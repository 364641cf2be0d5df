#include "modnet/svg.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "modnet/errors.hpp"

namespace modnet {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // x: examples seen, y: mean accuracy
};

}  // namespace

void write_curve_svg(const std::string& path, const std::vector<CurveRow>& rows,
                     const std::string& title) {
  if (rows.empty()) throw DataError("no rows to plot");

  // seed-average accuracy per (topology, per_class, examples_seen)
  std::map<std::tuple<std::string, int, long>, std::pair<double, int>> cells;
  for (const CurveRow& r : rows) {
    auto& cell = cells[{r.topology, r.per_class, r.examples_seen}];
    cell.first += r.test_accuracy;
    cell.second += 1;
  }
  std::map<std::pair<std::string, int>, Series> series;
  double x_max = 1;
  for (const auto& [key, acc] : cells) {
    const auto& [topology, per_class, examples] = key;
    Series& s = series[{topology, per_class}];
    if (s.label.empty()) s.label = topology + " n=" + std::to_string(per_class);
    s.points.push_back({static_cast<double>(examples), acc.first / acc.second});
    x_max = std::max(x_max, static_cast<double>(examples));
  }

  const double W = 720, H = 440, ml = 60, mr = 170, mt = 36, mb = 46;
  const double pw = W - ml - mr, ph = H - mt - mb;
  auto xpix = [&](double x) { return ml + pw * x / x_max; };
  auto ypix = [&](double y) { return mt + ph * (1.0 - y); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty())
    svg << "<text x=\"" << ml << "\" y=\"22\" font-family=\"sans-serif\" font-size=\"15\">"
        << title << "</text>\n";

  // axes and gridlines at 0.25 accuracy steps
  for (int i = 0; i <= 4; ++i) {
    const double y = i / 4.0;
    svg << "<line x1=\"" << ml << "\" y1=\"" << ypix(y) << "\" x2=\"" << ml + pw << "\" y2=\""
        << ypix(y) << "\" stroke=\"#dddddd\"/>\n"
        << "<text x=\"" << ml - 8 << "\" y=\"" << ypix(y) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << y
        << "</text>\n";
  }
  for (int i = 0; i <= 4; ++i) {
    const double x = x_max * i / 4.0;
    svg << "<text x=\"" << xpix(x) << "\" y=\"" << mt + ph + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << static_cast<long>(x) << "</text>\n";
  }
  svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">examples seen"
      << "</text>\n"
      << "<text x=\"16\" y=\"" << mt + ph / 2
      << "\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 "
      << mt + ph / 2 << ")\" text-anchor=\"middle\">test accuracy</text>\n"
      << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#333333\"/>\n";

  int color = 0, legend_row = 0;
  for (auto& [key, s] : series) {
    std::sort(s.points.begin(), s.points.end());
    const char* stroke = kPalette[color++ % (sizeof kPalette / sizeof *kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1.6\" points=\"";
    for (auto [x, y] : s.points) svg << xpix(x) << ',' << ypix(y) << ' ';
    svg << "\"/>\n";
    const double ly = mt + 14 + 18 * legend_row++;
    svg << "<line x1=\"" << ml + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw + 34
        << "\" y2=\"" << ly << "\" stroke=\"" << stroke << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << ml + pw + 40 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.label << "</text>\n";
  }
  svg << "</svg>\n";

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out << svg.str();
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move " + path + " into place: " + ec.message());
}

}  // namespace modnet
