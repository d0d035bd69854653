#include <png.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "cyclegc/imaging.hpp"

namespace cyclegc {

namespace {

struct PngWriter {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;

    explicit PngWriter(const std::string& path) {
        fp = std::fopen(path.c_str(), "wb");
        if (!fp) throw FormatError("cannot open for writing: " + path);
        png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            close();
            throw FormatError("libpng init failed: " + path);
        }
    }
    ~PngWriter() { close(); }
    void close() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        png = nullptr;
        info = nullptr;
        if (fp) std::fclose(fp);
        fp = nullptr;
    }
};

struct PngReader {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;

    explicit PngReader(const std::string& path) {
        fp = std::fopen(path.c_str(), "rb");
        if (!fp) throw FormatError("cannot open for reading: " + path);
        png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            close();
            throw FormatError("libpng init failed: " + path);
        }
    }
    ~PngReader() { close(); }
    void close() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        png = nullptr;
        info = nullptr;
        if (fp) std::fclose(fp);
        fp = nullptr;
    }
};

}  // namespace

void write_png16(const std::string& path, const ImageGrid& g) {
    std::vector<std::uint16_t> row(static_cast<std::size_t>(g.w));
    PngWriter w(path);
    if (setjmp(png_jmpbuf(w.png))) throw FormatError("png write error: " + path);
    png_init_io(w.png, w.fp);
    png_set_IHDR(w.png, w.info, g.w, g.h, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    png_set_swap(w.png);  // host is little-endian, PNG wants network order
    for (int r = 0; r < g.h; ++r) {
        for (int c = 0; c < g.w; ++c) {
            double v = g.at(r, c);
            v = std::min(255.0, std::max(0.0, v));
            row[static_cast<std::size_t>(c)] =
                static_cast<std::uint16_t>(std::lround(v / 255.0 * 65535.0));
        }
        png_write_row(w.png, reinterpret_cast<png_bytep>(row.data()));
    }
    png_write_end(w.png, nullptr);
}

ImageGrid read_png16(const std::string& path, Modality modality) {
    PngReader rd(path);
    if (setjmp(png_jmpbuf(rd.png))) throw FormatError("png read error: " + path);
    png_init_io(rd.png, rd.fp);
    png_read_info(rd.png, rd.info);
    png_uint_32 width, height;
    int bit_depth, color_type;
    png_get_IHDR(rd.png, rd.info, &width, &height, &bit_depth, &color_type, nullptr, nullptr,
                 nullptr);
    if (color_type != PNG_COLOR_TYPE_GRAY || bit_depth != 16)
        throw FormatError("expected 16-bit grayscale PNG: " + path);
    png_set_swap(rd.png);
    ImageGrid g(static_cast<int>(height), static_cast<int>(width), modality);
    std::vector<std::uint16_t> row(width);
    for (png_uint_32 r = 0; r < height; ++r) {
        png_read_row(rd.png, reinterpret_cast<png_bytep>(row.data()), nullptr);
        for (png_uint_32 c = 0; c < width; ++c)
            g.at(static_cast<int>(r), static_cast<int>(c)) = row[c] / 65535.0 * 255.0;
    }
    return g;
}

void write_png_labels(const std::string& path, const LabelGrid& g) {
    // Fixed 16-entry palette; class ids index into it directly.
    static const png_color kPalette[16] = {
        {0, 0, 0},       {230, 25, 75},   {60, 180, 75},   {255, 225, 25},
        {0, 130, 200},   {245, 130, 48},  {145, 30, 180},  {70, 240, 240},
        {240, 50, 230},  {210, 245, 60},  {250, 190, 190}, {0, 128, 128},
        {170, 110, 40},  {255, 250, 200}, {128, 0, 0},     {128, 128, 128}};
    std::vector<std::uint8_t> row(static_cast<std::size_t>(g.w));
    PngWriter w(path);
    if (setjmp(png_jmpbuf(w.png))) throw FormatError("png write error: " + path);
    png_init_io(w.png, w.fp);
    png_set_IHDR(w.png, w.info, g.w, g.h, 8, PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_PLTE(w.png, w.info, const_cast<png_color*>(kPalette), 16);
    png_write_info(w.png, w.info);
    for (int r = 0; r < g.h; ++r) {
        for (int c = 0; c < g.w; ++c) {
            const int v = g.at(r, c);
            if (v < 0 || v > 15) throw FormatError("label id out of palette range");
            row[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(v);
        }
        png_write_row(w.png, row.data());
    }
    png_write_end(w.png, nullptr);
}

LabelGrid read_png_labels(const std::string& path, const std::vector<std::string>& class_names) {
    PngReader rd(path);
    if (setjmp(png_jmpbuf(rd.png))) throw FormatError("png read error: " + path);
    png_init_io(rd.png, rd.fp);
    png_read_info(rd.png, rd.info);
    png_uint_32 width, height;
    int bit_depth, color_type;
    png_get_IHDR(rd.png, rd.info, &width, &height, &bit_depth, &color_type, nullptr, nullptr,
                 nullptr);
    if (color_type != PNG_COLOR_TYPE_PALETTE || bit_depth != 8)
        throw FormatError("expected 8-bit indexed PNG: " + path);
    LabelGrid g(static_cast<int>(height), static_cast<int>(width), class_names);
    std::vector<std::uint8_t> row(width);
    for (png_uint_32 r = 0; r < height; ++r) {
        png_read_row(rd.png, row.data(), nullptr);
        for (png_uint_32 c = 0; c < width; ++c)
            g.at(static_cast<int>(r), static_cast<int>(c)) = row[c];
    }
    return g;
}

void write_png_mask(const std::string& path, const std::vector<std::uint8_t>& mask, int h, int w) {
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w));
    PngWriter wr(path);
    if (setjmp(png_jmpbuf(wr.png))) throw FormatError("png write error: " + path);
    png_init_io(wr.png, wr.fp);
    png_set_IHDR(wr.png, wr.info, w, h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c)
            row[static_cast<std::size_t>(c)] =
                mask[static_cast<std::size_t>(r) * w + c] ? 255 : 0;
        png_write_row(wr.png, row.data());
    }
    png_write_end(wr.png, nullptr);
}

std::vector<std::uint8_t> read_png_mask(const std::string& path, int& h, int& w) {
    PngReader rd(path);
    if (setjmp(png_jmpbuf(rd.png))) throw FormatError("png read error: " + path);
    png_init_io(rd.png, rd.fp);
    png_read_info(rd.png, rd.info);
    png_uint_32 width, height;
    int bit_depth, color_type;
    png_get_IHDR(rd.png, rd.info, &width, &height, &bit_depth, &color_type, nullptr, nullptr,
                 nullptr);
    if (color_type != PNG_COLOR_TYPE_GRAY || bit_depth != 8)
        throw FormatError("expected 8-bit grayscale mask PNG: " + path);
    h = static_cast<int>(height);
    w = static_cast<int>(width);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(h) * w);
    std::vector<std::uint8_t> row(width);
    for (png_uint_32 r = 0; r < height; ++r) {
        png_read_row(rd.png, row.data(), nullptr);
        for (png_uint_32 c = 0; c < width; ++c)
            mask[static_cast<std::size_t>(r) * w + c] = row[c] >= 128 ? 1 : 0;
    }
    return mask;
}

}  // namespace cyclegc
