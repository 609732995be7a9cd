#pragma once

// Birth-death diagram rendering for a single neuron.

#include <cstdio>
#include <string>

#include "topoprune/zero_ph.hpp"

namespace topoprune {

// Finite deaths are plotted at birth 0, the surviving component on a dashed
// infinity line above them, and r_f circled. `scale` = 2 switches to
// distance units.
inline std::string birth_death_svg(const ZeroDimResult& result, double scale = 1.0,
                                   const std::string& title = "Birth-Death diagram") {
  constexpr double kSize = 420, kMargin = 60;
  const double plot = kSize - 2 * kMargin;
  const double r_f = result.r_f * scale;
  const double top = r_f > 0.0 ? r_f * 1.15 : 1.0;  // finite range; infinity line sits above it
  const double inf_y = kMargin - 20;
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return std::string(buf);
  };
  auto y_of = [&](double v) { return kMargin + plot * (1.0 - v / top); };
  auto x_of = [&](double v) { return kMargin + plot * (v / top); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"420\" height=\"420\" "
                    "font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"420\" height=\"420\" fill=\"white\"/>\n";
  svg += "<text x=\"" + num(kMargin) + "\" y=\"18\">" + title + "</text>\n";
  // axes and diagonal
  svg += "<line x1=\"" + num(kMargin) + "\" y1=\"" + num(kMargin + plot) + "\" x2=\"" + num(kMargin + plot) +
         "\" y2=\"" + num(kMargin + plot) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + num(kMargin) + "\" y1=\"" + num(inf_y) + "\" x2=\"" + num(kMargin) + "\" y2=\"" +
         num(kMargin + plot) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + num(kMargin) + "\" y1=\"" + num(kMargin + plot) + "\" x2=\"" + num(kMargin + plot) +
         "\" y2=\"" + num(kMargin) + "\" stroke=\"gray\" stroke-width=\"0.5\"/>\n";
  svg += "<line class=\"infinity\" x1=\"" + num(kMargin) + "\" y1=\"" + num(inf_y) + "\" x2=\"" +
         num(kMargin + plot) + "\" y2=\"" + num(inf_y) + "\" stroke=\"black\" stroke-dasharray=\"6,4\"/>\n";
  svg += "<text x=\"" + num(kMargin + plot + 4) + "\" y=\"" + num(inf_y + 4) + "\">inf</text>\n";
  svg += "<text x=\"" + num(kMargin + plot / 2) + "\" y=\"" + num(kSize - 15) +
         "\" text-anchor=\"middle\">Birth time</text>\n";
  svg += "<text x=\"15\" y=\"" + num(kMargin + plot / 2) + "\" transform=\"rotate(-90 15," +
         num(kMargin + plot / 2) + ")\" text-anchor=\"middle\">Death time</text>\n";

  for (const auto& [birth, death] : birth_death_points(result)) {
    const double y = std::isinf(death) ? inf_y : y_of(death * scale);
    svg += "<circle class=\"pair\" cx=\"" + num(x_of(birth * scale)) + "\" cy=\"" + num(y) +
           "\" r=\"3\" fill=\"#1f77b4\"/>\n";
  }
  if (!result.deaths.empty()) {
    svg += "<circle class=\"rf\" cx=\"" + num(x_of(0.0)) + "\" cy=\"" + num(y_of(r_f)) +
           "\" r=\"8\" fill=\"none\" stroke=\"red\" stroke-width=\"2\"/>\n";
  }
  svg += "<text x=\"" + num(kMargin + 14) + "\" y=\"" + num(y_of(r_f) + 4) + "\" fill=\"red\">r_f = " +
         format_value(r_f) + "</text>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace topoprune
