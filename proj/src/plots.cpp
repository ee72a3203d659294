#include "atlas_istn/plots.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>

#include "atlas_istn/image_io.hpp"

namespace atlas_istn::plots {

namespace {

// Rows top to bottom, 5 bits per row with the leftmost pixel in bit 4.
using Glyph = std::array<std::uint8_t, 7>;

const std::map<char, Glyph>& font() {
    static const std::map<char, Glyph> f = {
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
        {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
        {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
        {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
        {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
        {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
        {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
        {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
        {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
        {' ', {0, 0, 0, 0, 0, 0, 0}},
    };
    return f;
}

void fill_rect(RgbImage& img, int x0, int y0, int w, int h, Rgb c) {
    for (int y = std::max(0, y0); y < std::min(img.height(), y0 + h); ++y)
        for (int x = std::max(0, x0); x < std::min(img.width(), x0 + w); ++x) img(y, x) = c;
}

}  // namespace

int text_width(const std::string& text, int scale) { return static_cast<int>(text.size()) * 6 * scale - scale; }

void draw_text(RgbImage& img, int x, int y, const std::string& text, Rgb color, int scale) {
    for (char ch : text) {
        auto it = font().find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
        if (it != font().end()) {
            for (int r = 0; r < 7; ++r)
                for (int c = 0; c < 5; ++c)
                    if (it->second[r] & (0x10 >> c)) fill_rect(img, x + c * scale, y + r * scale, scale, scale, color);
        }
        x += 6 * scale;
    }
}

RgbImage render_confusion(const eval::Confusion& cm, const std::string& title) {
    constexpr int cell = 90, left = 80, top = 70, scale = 2;
    const int width = std::max(left + 2 * cell + 20, text_width(title, scale) + 20);
    RgbImage img(top + 2 * cell + 50, width, Rgb{255, 255, 255});
    const Rgb ink{20, 20, 20};
    draw_text(img, 10, 10, title, ink, scale);
    const char* names[2] = {"NC", "HLHS"};
    draw_text(img, left + cell - text_width("PREDICTED", 1) / 2, top - 30, "PREDICTED", ink, 1);
    draw_text(img, 8, top + cell - 3, "TRUE", ink, 1);
    for (int k = 0; k < 2; ++k) {
        draw_text(img, left + k * cell + (cell - text_width(names[k], scale)) / 2, top - 18, names[k], ink, scale);
        draw_text(img, left - 6 - text_width(names[k], scale), top + k * cell + cell / 2 - 7, names[k], ink, scale);
    }
    for (int t = 0; t < 2; ++t) {
        const double row = static_cast<double>(cm.counts[t][0] + cm.counts[t][1]);
        for (int p = 0; p < 2; ++p) {
            const double rate = row > 0 ? cm.counts[t][p] / row : 0.0;
            const auto shade = static_cast<std::uint8_t>(255 - std::lround(200 * rate));
            const Rgb bg{shade, shade, 255};
            fill_rect(img, left + p * cell, top + t * cell, cell - 2, cell - 2, bg);
            const std::string label = std::to_string(cm.counts[t][p]);
            const Rgb fg = rate > 0.5 ? Rgb{255, 255, 255} : ink;
            draw_text(img, left + p * cell + (cell - text_width(label, 3)) / 2, top + t * cell + cell / 2 - 11, label,
                      fg, 3);
        }
    }
    return img;
}

void write_confusion_png(const std::filesystem::path& path, const eval::Confusion& cm, const std::string& title) {
    io::write_rgb_png(path, render_confusion(cm, title));
}

}  // namespace atlas_istn::plots
