#include "biospix/pngio.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

namespace biospix {

namespace {

struct PngReader {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;

    explicit PngReader(const std::string& path) {
        fp = std::fopen(path.c_str(), "rb");
        if (!fp) throw IoError("png: cannot open " + path);
        png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            close();
            throw IoError("png: allocation failure reading " + path);
        }
    }
    ~PngReader() { close(); }
    void close() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
        png = nullptr;
        info = nullptr;
        fp = nullptr;
    }
};

struct PngWriter {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;

    explicit PngWriter(const std::string& path) {
        fp = std::fopen(path.c_str(), "wb");
        if (!fp) throw IoError("png: cannot open " + path + " for writing");
        png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            close();
            throw IoError("png: allocation failure writing " + path);
        }
    }
    ~PngWriter() { close(); }
    void close() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
        png = nullptr;
        info = nullptr;
        fp = nullptr;
    }
};

}  // namespace

Tensor<float> load_image_rgb(const std::string& path) {
    PngReader r(path);
    if (setjmp(png_jmpbuf(r.png))) throw IoError("png: failed to read " + path);
    png_init_io(r.png, r.fp);
    png_read_info(r.png, r.info);

    png_set_palette_to_rgb(r.png);
    png_set_expand_gray_1_2_4_to_8(r.png);
    png_set_strip_16(r.png);
    png_set_strip_alpha(r.png);
    png_set_gray_to_rgb(r.png);
    png_read_update_info(r.png, r.info);

    const int h = static_cast<int>(png_get_image_height(r.png, r.info));
    const int w = static_cast<int>(png_get_image_width(r.png, r.info));
    if (png_get_channels(r.png, r.info) != 3 || png_get_bit_depth(r.png, r.info) != 8)
        throw IoError("png: " + path + " did not reduce to 8-bit RGB");

    std::vector<png_byte> row(static_cast<std::size_t>(w) * 3);
    Tensor<float> img = Tensor<float>::zeros({1, 3, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        png_read_row(r.png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.data()[c * plane + static_cast<std::int64_t>(y) * w + x] =
                    static_cast<float>(row[static_cast<std::size_t>(x) * 3 + c] / 255.0);
    }
    png_read_end(r.png, nullptr);
    return img;
}

void save_image_rgb(const std::string& path, const Tensor<float>& img) {
    if (img.ndim() != 4 || img.dim(0) != 1 || img.dim(1) != 3)
        throw ShapeError("save_image_rgb: expected [1, 3, H, W], got " + shape_str(img.shape()));
    const int h = img.dim(2), w = img.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;

    PngWriter wr(path);
    if (setjmp(png_jmpbuf(wr.png))) throw IoError("png: failed to write " + path);
    png_init_io(wr.png, wr.fp);
    png_set_IHDR(wr.png, wr.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);
    std::vector<png_byte> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(
                    static_cast<double>(img.data()[c * plane + static_cast<std::int64_t>(y) * w + x]), 0.0,
                    1.0);
                row[static_cast<std::size_t>(x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
            }
        png_write_row(wr.png, row.data());
    }
    png_write_end(wr.png, nullptr);
}

LabelMap load_label_png(const std::string& path) {
    PngReader r(path);
    if (setjmp(png_jmpbuf(r.png))) throw IoError("png: failed to read " + path);
    png_init_io(r.png, r.fp);
    png_read_info(r.png, r.info);

    if (png_get_color_type(r.png, r.info) != PNG_COLOR_TYPE_GRAY)
        throw IoError("png: label map " + path + " must be grayscale");
    const int depth = png_get_bit_depth(r.png, r.info);
    if (depth != 8 && depth != 16) throw IoError("png: label map " + path + " must be 8- or 16-bit");
    const int h = static_cast<int>(png_get_image_height(r.png, r.info));
    const int w = static_cast<int>(png_get_image_width(r.png, r.info));

    LabelMap m(h, w);
    std::vector<png_byte> row(static_cast<std::size_t>(w) * (depth / 8));
    for (int y = 0; y < h; ++y) {
        png_read_row(r.png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            m.at(y, x) = depth == 8 ? row[static_cast<std::size_t>(x)]
                                    : (row[static_cast<std::size_t>(x) * 2] << 8) |
                                          row[static_cast<std::size_t>(x) * 2 + 1];
    }
    png_read_end(r.png, nullptr);
    return m;
}

static void save_label_png_impl(const std::string& path, int h, int w, const std::vector<int>& v) {
    for (int id : v)
        if (id < 0 || id > 65535) throw IoError("png: id " + std::to_string(id) + " exceeds 16-bit range");
    PngWriter wr(path);
    if (setjmp(png_jmpbuf(wr.png))) throw IoError("png: failed to write " + path);
    png_init_io(wr.png, wr.fp);
    png_set_IHDR(wr.png, wr.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 16,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);
    std::vector<png_byte> row(static_cast<std::size_t>(w) * 2);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int id = v[static_cast<std::size_t>(y) * w + x];
            row[static_cast<std::size_t>(x) * 2] = static_cast<png_byte>(id >> 8);
            row[static_cast<std::size_t>(x) * 2 + 1] = static_cast<png_byte>(id & 0xff);
        }
        png_write_row(wr.png, row.data());
    }
    png_write_end(wr.png, nullptr);
}

void save_label_png(const std::string& path, const LabelMap& m) { save_label_png_impl(path, m.h, m.w, m.v); }
void save_label_png(const std::string& path, const SuperpixelMap& m) {
    save_label_png_impl(path, m.h, m.w, m.v);
}

void save_gray_png(const std::string& path, const FieldMap& f, double lo, double hi) {
    if (!(hi > lo)) throw ParamError("save_gray_png: need hi > lo");
    PngWriter wr(path);
    if (setjmp(png_jmpbuf(wr.png))) throw IoError("png: failed to write " + path);
    png_init_io(wr.png, wr.fp);
    png_set_IHDR(wr.png, wr.info, static_cast<png_uint_32>(f.w), static_cast<png_uint_32>(f.h), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);
    std::vector<png_byte> row(static_cast<std::size_t>(f.w));
    for (int y = 0; y < f.h; ++y) {
        for (int x = 0; x < f.w; ++x) {
            const double v = std::clamp((f.at(y, x) - lo) / (hi - lo), 0.0, 1.0);
            row[static_cast<std::size_t>(x)] = static_cast<png_byte>(std::lround(v * 255.0));
        }
        png_write_row(wr.png, row.data());
    }
    png_write_end(wr.png, nullptr);
}

}  // namespace biospix
