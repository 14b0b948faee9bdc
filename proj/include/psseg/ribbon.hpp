// Qualitative timeline ribbons: one colored band per label sequence, written as SVG.
#pragma once

#include <string>
#include <vector>

#include "psseg/feature_store.hpp"

namespace psseg {

struct RibbonRow {
  std::string name;
  std::vector<Label> labels;
};

struct RibbonOptions {
  double pixels_per_frame = 1.0;
  double band_height = 24.0;
  double row_gap = 8.0;
  double label_width = 120.0;
  double legend_swatch = 12.0;
};

// Fixed palette keyed by class index (cycles after 20 classes).
std::string class_color(Label label);

// All rows must share the same length. Each segment becomes one <rect> with
// x = label_width + start * pixels_per_frame and width = length * pixels_per_frame.
std::string render_ribbon_svg(const std::vector<RibbonRow>& rows,
                              const std::vector<std::string>& vocabulary,
                              const RibbonOptions& options = {});

}  // namespace psseg
