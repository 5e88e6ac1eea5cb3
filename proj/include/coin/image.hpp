#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "coin/errors.hpp"
#include "coin/tensor.hpp"

namespace coin {

/// Row-major 2-D grid.
template <typename V>
struct Grid {
    int h = 0;
    int w = 0;
    std::vector<V> px;

    Grid() = default;
    Grid(int rows, int cols, V fill = V{}) : h(rows), w(cols), px(static_cast<std::size_t>(rows) * cols, fill) {}

    V& operator()(int r, int c) { return px[static_cast<std::size_t>(r) * w + c]; }
    const V& operator()(int r, int c) const { return px[static_cast<std::size_t>(r) * w + c]; }
    [[nodiscard]] std::size_t size() const { return px.size(); }
    [[nodiscard]] bool same_shape(const Grid& o) const { return h == o.h && w == o.w; }

    friend bool operator==(const Grid&, const Grid&) = default;
};

using Image = Grid<float>;
using Mask = Grid<std::uint8_t>;

inline std::size_t area(const Mask& m) {
    return static_cast<std::size_t>(std::count_if(m.px.begin(), m.px.end(), [](auto v) { return v != 0; }));
}

template <typename V>
void require_same_shape(const Grid<V>& a, const Grid<V>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": " + std::to_string(a.h) + "x" + std::to_string(a.w) +
                         " vs " + std::to_string(b.h) + "x" + std::to_string(b.w));
    }
}

/// Round to the nearest 8-bit level.
inline float quantize8(float v) {
    return static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
}

/// Bilinear resize with pixel-center alignment (edge samples clamp).
inline Image resize_bilinear(const Image& src, int oh, int ow) {
    if (src.h == oh && src.w == ow) return src;
    Image out(oh, ow);
    const double sy = static_cast<double>(src.h) / oh;
    const double sx = static_cast<double>(src.w) / ow;
    for (int r = 0; r < oh; ++r) {
        double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, src.h - 1.0);
        int y0 = static_cast<int>(y);
        int y1 = std::min(y0 + 1, src.h - 1);
        double fy = y - y0;
        for (int c = 0; c < ow; ++c) {
            double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, src.w - 1.0);
            int x0 = static_cast<int>(x);
            int x1 = std::min(x0 + 1, src.w - 1);
            double fx = x - x0;
            double v = (1 - fy) * ((1 - fx) * src(y0, x0) + fx * src(y0, x1)) +
                       fy * ((1 - fx) * src(y1, x0) + fx * src(y1, x1));
            out(r, c) = static_cast<float>(v);
        }
    }
    return out;
}

/// Masks resize through bilinear coverage and a 0.5 cut.
inline Mask resize_mask(const Mask& src, int oh, int ow) {
    if (src.h == oh && src.w == ow) return src;
    Image f(src.h, src.w);
    for (std::size_t i = 0; i < src.size(); ++i) f.px[i] = src.px[i] ? 1.0f : 0.0f;
    Image r = resize_bilinear(f, oh, ow);
    Mask out(oh, ow);
    for (std::size_t i = 0; i < out.size(); ++i) out.px[i] = r.px[i] >= 0.5f;
    return out;
}

/// Sample (r, c) with bilinear interpolation, zero outside the grid.
inline double sample_bilinear(const Image& img, double r, double c) {
    const int r0 = static_cast<int>(std::floor(r));
    const int c0 = static_cast<int>(std::floor(c));
    const double fr = r - r0;
    const double fc = c - c0;
    auto get = [&](int y, int x) -> double {
        return (y < 0 || x < 0 || y >= img.h || x >= img.w) ? 0.0 : img(y, x);
    };
    return (1 - fr) * ((1 - fc) * get(r0, c0) + fc * get(r0, c0 + 1)) +
           fr * ((1 - fc) * get(r0 + 1, c0) + fc * get(r0 + 1, c0 + 1));
}

// ---- PNG ---------------------------------------------------------------

namespace detail {
inline void png_check(png_image& img, int ok, const std::filesystem::path& p, const char* what) {
    if (!ok) {
        std::string msg = std::string(what) + " " + p.string() + ": " + img.message;
        png_image_free(&img);
        throw IoError(msg);
    }
}
}  // namespace detail

/// Read any PNG as 8-bit grayscale.
inline Grid<std::uint8_t> read_png_gray8(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    detail::png_check(img, png_image_begin_read_from_file(&img, path.c_str()), path, "cannot read");
    img.format = PNG_FORMAT_GRAY;
    Grid<std::uint8_t> g(static_cast<int>(img.height), static_cast<int>(img.width));
    detail::png_check(img, png_image_finish_read(&img, nullptr, g.px.data(), 0, nullptr), path,
                      "cannot decode");
    return g;
}

inline void write_png_gray8(const std::filesystem::path& path, const Grid<std::uint8_t>& g) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(g.w);
    img.height = static_cast<png_uint_32>(g.h);
    img.format = PNG_FORMAT_GRAY;
    detail::png_check(img, png_image_write_to_file(&img, path.c_str(), 0, g.px.data(), 0, nullptr), path,
                      "cannot write");
}

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};
using RgbImage = Grid<Rgb>;

inline void write_png_rgb(const std::filesystem::path& path, const RgbImage& im) {
    static_assert(sizeof(Rgb) == 3);
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(im.w);
    img.height = static_cast<png_uint_32>(im.h);
    img.format = PNG_FORMAT_RGB;
    detail::png_check(img, png_image_write_to_file(&img, path.c_str(), 0, im.px.data(), 0, nullptr), path,
                      "cannot write");
}

inline Image read_image(const std::filesystem::path& path) {
    auto g = read_png_gray8(path);
    Image out(g.h, g.w);
    for (std::size_t i = 0; i < g.size(); ++i) out.px[i] = g.px[i] / 255.0f;
    return out;
}

inline void write_image(const std::filesystem::path& path, const Image& im) {
    Grid<std::uint8_t> g(im.h, im.w);
    for (std::size_t i = 0; i < im.size(); ++i)
        g.px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(im.px[i], 0.0f, 1.0f) * 255.0f));
    write_png_gray8(path, g);
}

/// Nonzero pixels are foreground.
inline Mask read_mask(const std::filesystem::path& path) {
    auto g = read_png_gray8(path);
    Mask m(g.h, g.w);
    for (std::size_t i = 0; i < g.size(); ++i) m.px[i] = g.px[i] != 0;
    return m;
}

inline void write_mask(const std::filesystem::path& path, const Mask& m) {
    Grid<std::uint8_t> g(m.h, m.w);
    for (std::size_t i = 0; i < m.size(); ++i) g.px[i] = m.px[i] ? 255 : 0;
    write_png_gray8(path, g);
}

/// Map [0,1] to a black-red-yellow-white ramp.
inline Rgb heat_color(float v) {
    const float t = std::clamp(v, 0.0f, 1.0f) * 3.0f;
    auto u8 = [](float x) { return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0f, 1.0f) * 255.0f)); };
    return {u8(t), u8(t - 1.0f), u8(t - 2.0f)};
}

inline RgbImage heatmap(const Image& im) {
    RgbImage out(im.h, im.w);
    for (std::size_t i = 0; i < im.size(); ++i) out.px[i] = heat_color(im.px[i]);
    return out;
}

inline RgbImage gray_to_rgb(const Image& im) {
    RgbImage out(im.h, im.w);
    for (std::size_t i = 0; i < im.size(); ++i) {
        auto v = static_cast<std::uint8_t>(std::lround(std::clamp(im.px[i], 0.0f, 1.0f) * 255.0f));
        out.px[i] = {v, v, v};
    }
    return out;
}

// ---- batching -------------------------------------------------------------

/// Stack equally sized images into an (N,1,H,W) tensor.
template <typename T>
Tensor<T> stack(const std::vector<const Image*>& images) {
    if (images.empty()) throw ShapeError("stack: empty image list");
    const int h = images.front()->h;
    const int w = images.front()->w;
    Tensor<T> t(Shape{static_cast<int>(images.size()), 1, h, w});
    for (std::size_t n = 0; n < images.size(); ++n) {
        if (images[n]->h != h || images[n]->w != w) throw ShapeError("stack: images differ in size");
        std::copy(images[n]->px.begin(), images[n]->px.end(), t.sample_ptr(static_cast<int>(n)));
    }
    return t;
}

template <typename T>
Image unstack(const Tensor<T>& t, int n) {
    Image im(t.shape().h, t.shape().w);
    const T* p = t.sample_ptr(n);
    for (std::size_t i = 0; i < im.size(); ++i) im.px[i] = static_cast<float>(p[i]);
    return im;
}

}  // namespace coin
