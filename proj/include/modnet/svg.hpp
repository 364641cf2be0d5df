#pragma once

#include <string>
#include <vector>

#include "modnet/train.hpp"

namespace modnet {

/// Renders learning curves as an SVG line chart: accuracy vs examples
/// seen, one line per (topology, per_class) group, seed-averaged.
void write_curve_svg(const std::string& path, const std::vector<CurveRow>& rows,
                     const std::string& title = "");

}  // namespace modnet
