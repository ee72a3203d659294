#include "atlas_istn/image_io.hpp"

#include <png.h>
#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

namespace atlas_istn::io {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    return f;
}

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
    auto* what = static_cast<std::string*>(png_get_error_ptr(png));
    if (what) *what = msg;
    png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

enum class PixelKind { Gray, Palette, Rgb };

void write_png(const std::filesystem::path& path, int height, int width, PixelKind kind, const std::uint8_t* rows,
               int bytes_per_pixel) {
    auto file = open_file(path, "wb");
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("writing '" + path.string() + "': " + err);
    }
    png_init_io(png, file.get());
    // Fixed compression settings so repeated writes are byte-identical.
    png_set_compression_level(png, 6);
    const int color_type = kind == PixelKind::Gray      ? PNG_COLOR_TYPE_GRAY
                           : kind == PixelKind::Palette ? PNG_COLOR_TYPE_PALETTE
                                                        : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::array<png_color, kNumClasses> palette{};
    if (kind == PixelKind::Palette) {
        for (int i = 0; i < kNumClasses; ++i) {
            palette[i] = {kLabelPalette[i].r, kLabelPalette[i].g, kLabelPalette[i].b};
        }
        png_set_PLTE(png, info, palette.data(), kNumClasses);
        // libpng rejects out-of-palette indices on read unless told otherwise;
        // class-id validation happens one layer up.
        png_set_check_for_invalid_index(png, 0);
    }
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(width) * bytes_per_pixel;
    for (int y = 0; y < height; ++y) {
        png_write_row(png, const_cast<png_bytep>(rows + y * stride));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Reads an 8-bit single-channel PNG (gray or palette) without any colour
// conversion, returning raw sample values.
Grid2D<std::uint8_t> read_single_channel(const std::filesystem::path& path, bool expect_palette) {
    auto file = open_file(path, "rb");
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    Grid2D<std::uint8_t> out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("reading '" + path.string() + "': " + err);
    }
    png_init_io(png, file.get());
    png_set_check_for_invalid_index(png, 0);
    png_read_info(png, info);
    const auto width = static_cast<int>(png_get_image_width(png, info));
    const auto height = static_cast<int>(png_get_image_height(png, info));
    const int color_type = png_get_color_type(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const bool ok = bit_depth == 8 && (expect_palette ? color_type == PNG_COLOR_TYPE_PALETTE
                                                      : color_type == PNG_COLOR_TYPE_GRAY);
    if (!ok) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("'" + path.string() + "': expected 8-bit " + (expect_palette ? "indexed" : "grayscale") +
                      " PNG");
    }
    out = Grid2D<std::uint8_t>(height, width);
    for (int y = 0; y < height; ++y) {
        png_read_row(png, out.data() + static_cast<std::size_t>(y) * width, nullptr);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

}  // namespace

void write_gray_png(const std::filesystem::path& path, const GrayImage& image) {
    write_png(path, image.height(), image.width(), PixelKind::Gray, image.data(), 1);
}

GrayImage read_gray_png(const std::filesystem::path& path) { return read_single_channel(path, false); }

void write_label_png(const std::filesystem::path& path, const LabelMap& labels) {
    for (auto v : labels.values()) {
        if (v >= kNumClasses) throw InvalidArgument("write_label_png: unknown class id " + std::to_string(v));
    }
    write_png(path, labels.height(), labels.width(), PixelKind::Palette, labels.data(), 1);
}

void write_indexed_png_unchecked(const std::filesystem::path& path, const LabelMap& labels) {
    write_png(path, labels.height(), labels.width(), PixelKind::Palette, labels.data(), 1);
}

LabelMap read_label_png(const std::filesystem::path& path) { return read_single_channel(path, true); }

void write_rgb_png(const std::filesystem::path& path, const RgbImage& image) {
    static_assert(sizeof(Rgb) == 3);
    write_png(path, image.height(), image.width(), PixelKind::Rgb, reinterpret_cast<const std::uint8_t*>(image.data()),
              3);
}

std::uint32_t crc32_bytes(std::span<const std::uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

std::uint32_t crc32_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    uLong crc = crc32(0L, Z_NULL, 0);
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        const auto n = in.gcount();
        if (n > 0) crc = crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(n));
    }
    return static_cast<std::uint32_t>(crc);
}

void write_npy_f32(const std::filesystem::path& path, std::span<const float> values,
                   std::span<const std::int64_t> shape) {
    std::int64_t count = 1;
    std::ostringstream dims;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        count *= shape[i];
        dims << shape[i] << (shape.size() == 1 ? "," : (i + 1 < shape.size() ? ", " : ""));
    }
    if (count != static_cast<std::int64_t>(values.size())) throw InvalidArgument("write_npy_f32: shape/size mismatch");
    std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + dims.str() + "), }";
    // magic(6) + version(2) + len(2) + header, padded to 64 bytes, newline-terminated
    const std::size_t total = 10 + header.size() + 1;
    header.append((64 - total % 64) % 64, ' ');
    header.push_back('\n');
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write("\x93NUMPY\x01\x00", 8);
    const auto len = static_cast<std::uint16_t>(header.size());
    const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
    out.write(len_bytes, 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

std::vector<float> read_npy_f32(const std::filesystem::path& path, std::vector<std::int64_t>* shape) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    char magic[10];
    in.read(magic, 10);
    if (!in || std::memcmp(magic, "\x93NUMPY\x01\x00", 8) != 0) throw IoError("'" + path.string() + "': not an npy file");
    const std::size_t hlen = static_cast<unsigned char>(magic[8]) | (static_cast<unsigned char>(magic[9]) << 8);
    std::string header(hlen, '\0');
    in.read(header.data(), static_cast<std::streamsize>(hlen));
    if (header.find("'<f4'") == std::string::npos || header.find("'fortran_order': False") == std::string::npos) {
        throw IoError("'" + path.string() + "': only little-endian float32 C-order arrays are supported");
    }
    const auto lp = header.find('(');
    const auto rp = header.find(')');
    std::vector<std::int64_t> dims;
    std::int64_t count = 1;
    std::istringstream ss(header.substr(lp + 1, rp - lp - 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.find_first_not_of(' ') == std::string::npos) continue;
        dims.push_back(std::stoll(tok));
        count *= dims.back();
    }
    std::vector<float> values(static_cast<std::size_t>(count));
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!in) throw IoError("'" + path.string() + "': truncated npy payload");
    if (shape) *shape = std::move(dims);
    return values;
}

}  // namespace atlas_istn::io
