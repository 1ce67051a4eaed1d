#pragma once

#include <png.h>

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bldg/common.hpp"
#include "bldg/geometry.hpp"

namespace bldg {

// Affine pixel->world map: x = a + b*col + c*row, y = d + e*col + f*row.
// Integer (col, row) addresses the sample point of that pixel.
struct Geotransform {
    double a = 0.0, b = 1.0, c = 0.0;
    double d = 0.0, e = 0.0, f = 1.0;

    double det() const { return b * f - c * e; }

    void validate() const {
        require(std::isfinite(a) && std::isfinite(b) && std::isfinite(c) && std::isfinite(d) &&
                    std::isfinite(e) && std::isfinite(f),
                "geotransform has non-finite coefficients");
        require(det() != 0.0, "geotransform is singular");
    }

    Point pixel_to_world(double col, double row) const {
        return {a + b * col + c * row, d + e * col + f * row};
    }
};

inline std::pair<double, double> world_to_pixel(const Geotransform& t, const Point& p) {
    t.validate();
    const double inv = 1.0 / t.det();
    const double dx = p.x - t.a;
    const double dy = p.y - t.d;
    return {(dx * t.f - dy * t.c) * inv, (dy * t.b - dx * t.e) * inv};
}

// 8-bit RGB image with georeference; interleaved row-major RGB bytes.
struct RasterImage {
    int width = 0;
    int height = 0;
    Geotransform transform;
    std::vector<std::uint8_t> pixels;  // height * width * 3

    void validate() const {
        require(width >= 1 && height >= 1, "raster must be at least 1x1");
        require(pixels.size() == static_cast<std::size_t>(width) * height * 3,
                "raster pixel buffer size mismatch");
        transform.validate();
    }

    const std::uint8_t* at(int col, int row) const {
        return pixels.data() + (static_cast<std::size_t>(row) * width + col) * 3;
    }
    std::uint8_t* at(int col, int row) {
        return pixels.data() + (static_cast<std::size_t>(row) * width + col) * 3;
    }
};

namespace detail {

struct PngReadCtx {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngReadCtx() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

struct PngWriteCtx {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngWriteCtx() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

}  // namespace detail

// Reads an 8-bit PNG, expanding gray/palette/alpha variants to plain RGB.
inline void read_png_rgb8(const std::string& path, int& width, int& height,
                          std::vector<std::uint8_t>& pixels) {
    detail::PngReadCtx ctx;
    ctx.fp = std::fopen(path.c_str(), "rb");
    require(ctx.fp != nullptr, "cannot open PNG for reading: ", path);
    std::array<unsigned char, 8> sig{};
    require(std::fread(sig.data(), 1, 8, ctx.fp) == 8 && !png_sig_cmp(sig.data(), 0, 8),
            "not a PNG file: ", path);
    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(ctx.png != nullptr, "png_create_read_struct failed");
    ctx.info = png_create_info_struct(ctx.png);
    require(ctx.info != nullptr, "png_create_info_struct failed");
    if (setjmp(png_jmpbuf(ctx.png))) fail("PNG decode failed: ", path);
    png_init_io(ctx.png, ctx.fp);
    png_set_sig_bytes(ctx.png, 8);
    png_read_info(ctx.png, ctx.info);

    png_set_expand(ctx.png);
    png_set_strip_16(ctx.png);
    png_set_strip_alpha(ctx.png);
    png_set_gray_to_rgb(ctx.png);
    png_read_update_info(ctx.png, ctx.info);

    width = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
    height = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
    require(png_get_channels(ctx.png, ctx.info) == 3, "PNG did not decode to RGB: ", path);
    require(png_get_bit_depth(ctx.png, ctx.info) == 8, "PNG did not decode to 8-bit: ", path);

    pixels.assign(static_cast<std::size_t>(width) * height * 3, 0);
    std::vector<png_bytep> rows(height);
    for (int r = 0; r < height; ++r)
        rows[r] = pixels.data() + static_cast<std::size_t>(r) * width * 3;
    png_read_image(ctx.png, rows.data());
    png_read_end(ctx.png, nullptr);
}

inline void write_png_rgb8(const std::string& path, int width, int height,
                           const std::vector<std::uint8_t>& pixels) {
    require(pixels.size() == static_cast<std::size_t>(width) * height * 3,
            "write_png_rgb8: pixel buffer size mismatch");
    detail::PngWriteCtx ctx;
    ctx.fp = std::fopen(path.c_str(), "wb");
    require(ctx.fp != nullptr, "cannot open PNG for writing: ", path);
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(ctx.png != nullptr, "png_create_write_struct failed");
    ctx.info = png_create_info_struct(ctx.png);
    require(ctx.info != nullptr, "png_create_info_struct failed");
    if (setjmp(png_jmpbuf(ctx.png))) fail("PNG encode failed: ", path);
    png_init_io(ctx.png, ctx.fp);
    png_set_IHDR(ctx.png, ctx.info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);
    std::vector<png_bytep> rows(height);
    for (int r = 0; r < height; ++r)
        rows[r] = const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(r) * width * 3);
    png_write_image(ctx.png, rows.data());
    png_write_end(ctx.png, nullptr);
}

// Sidecar JSON: {"geotransform": [a, b, c, d, e, f]}
inline std::string sidecar_path(const std::string& png_path) {
    std::filesystem::path p(png_path);
    p.replace_extension(".json");
    return p.string();
}

inline void write_raster(const std::string& png_path, const RasterImage& img) {
    img.validate();
    write_png_rgb8(png_path, img.width, img.height, img.pixels);
    nlohmann::json j;
    j["geotransform"] = {img.transform.a, img.transform.b, img.transform.c,
                         img.transform.d, img.transform.e, img.transform.f};
    std::ofstream out(sidecar_path(png_path), std::ios::binary);
    require(out.good(), "cannot write raster sidecar: ", sidecar_path(png_path));
    out << j.dump(2) << "\n";
}

inline RasterImage load_raster(const std::string& png_path) {
    RasterImage img;
    read_png_rgb8(png_path, img.width, img.height, img.pixels);
    const std::string sc = sidecar_path(png_path);
    std::ifstream in(sc, std::ios::binary);
    require(in.good(), "missing raster sidecar: ", sc);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail("malformed raster sidecar ", sc, ": ", e.what());
    }
    require(j.contains("geotransform") && j["geotransform"].is_array() &&
                j["geotransform"].size() == 6,
            "raster sidecar must hold a 6-element geotransform: ", sc);
    const auto& g = j["geotransform"];
    img.transform = {g[0].get<double>(), g[1].get<double>(), g[2].get<double>(),
                     g[3].get<double>(), g[4].get<double>(), g[5].get<double>()};
    img.validate();
    return img;
}

constexpr int kCropSize = 128;
constexpr int kCropChannels = 3;
constexpr int kCropValues = kCropSize * kCropSize * kCropChannels;  // 49152

// 128x128x3 float crop in [0,1], row-major HWC.
struct Crop {
    std::array<float, kCropValues> values{};
};

namespace detail {

// Bilinear sample of one channel at continuous pixel coords; taps outside
// the raster contribute 0 (zero padding).
inline double bilinear_sample(const RasterImage& img, double col, double row, int ch) {
    const int c0 = static_cast<int>(std::floor(col));
    const int r0 = static_cast<int>(std::floor(row));
    const double fc = col - c0;
    const double fr = row - r0;
    auto tap = [&](int cc, int rr) -> double {
        if (cc < 0 || rr < 0 || cc >= img.width || rr >= img.height) return 0.0;
        return img.at(cc, rr)[ch];
    };
    const double top = tap(c0, r0) * (1.0 - fc) + tap(c0 + 1, r0) * fc;
    const double bot = tap(c0, r0 + 1) * (1.0 - fc) + tap(c0 + 1, r0 + 1) * fc;
    return top * (1.0 - fr) + bot * fr;
}

}  // namespace detail

// Resamples the source window under `env` to a 128x128 crop, bilinear in
// both directions, scaled from 8-bit to [0,1]. Output sample u covers the
// window fraction (u + 0.5)/128; with a window exactly aligned to a
// 128-pixel block the result equals source/255.
inline Crop extract_crop(const RasterImage& raster, const Envelope& env) {
    raster.validate();
    env.validate();

    const auto [c0, r0] = world_to_pixel(raster.transform, {env.min.x, env.min.y});
    const auto [c1, r1] = world_to_pixel(raster.transform, {env.max.x, env.max.y});
    const double col_lo = std::min(c0, c1), col_hi = std::max(c0, c1);
    const double row_lo = std::min(r0, r1), row_hi = std::max(r0, r1);

    const double inter_w = std::min<double>(col_hi, raster.width) - std::max(col_lo, 0.0);
    const double inter_h = std::min<double>(row_hi, raster.height) - std::max(row_lo, 0.0);
    require(inter_w > 0.0 && inter_h > 0.0,
            "crop window has no positive pixel extent inside the raster");

    Crop crop;
    const double sx = (col_hi - col_lo) / kCropSize;
    const double sy = (row_hi - row_lo) / kCropSize;
    float* out = crop.values.data();
    for (int v = 0; v < kCropSize; ++v) {
        const double row = row_lo + (v + 0.5) * sy - 0.5;
        for (int u = 0; u < kCropSize; ++u) {
            const double col = col_lo + (u + 0.5) * sx - 0.5;
            for (int ch = 0; ch < kCropChannels; ++ch) {
                const double val = detail::bilinear_sample(raster, col, row, ch) / 255.0;
                *out++ = static_cast<float>(std::clamp(val, 0.0, 1.0));
            }
        }
    }
    return crop;
}

}  // namespace bldg
