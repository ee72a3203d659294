#pragma once

#include <filesystem>
#include <string>

#include "atlas_istn/image.hpp"
#include "atlas_istn/metrics.hpp"

namespace atlas_istn::plots {

// 2x2 confusion matrix as a heat map: rows true [NC, HLHS], columns predicted.
// Cells are shaded by the row-normalised rate and labelled with the counts.
RgbImage render_confusion(const eval::Confusion& confusion, const std::string& title);

void write_confusion_png(const std::filesystem::path& path, const eval::Confusion& confusion, const std::string& title);

// Draws upper-case text with the built-in 5x7 font; unknown glyphs render blank.
void draw_text(RgbImage& img, int x, int y, const std::string& text, Rgb color, int scale = 1);
int text_width(const std::string& text, int scale = 1);

}  // namespace atlas_istn::plots
