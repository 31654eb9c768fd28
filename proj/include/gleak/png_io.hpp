#ifndef GLEAK_PNG_IO_HPP
#define GLEAK_PNG_IO_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gleak/errors.hpp"
#include "gleak/tensor.hpp"

// 8-bit RGB PNG in and out. Gray and RGBA files are widened/flattened to RGB
// on read. Values map linearly between [0,1] and 0..255; writes clip first.

namespace gleak::pngio {

// interleaved RGB rows, top to bottom; implemented in png_io.cpp over libpng
std::vector<std::uint8_t> read_rgb8(const std::string& path, std::size_t& width,
                                    std::size_t& height);
void write_rgb8(const std::string& path, const std::vector<std::uint8_t>& rgb, std::size_t width,
                std::size_t height);

template <class T>
Tensor<T> read_image(const std::string& path) {
    std::size_t w = 0, h = 0;
    auto rgb = read_rgb8(path, w, h);
    Tensor<T> img({3, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img.at3(c, y, x) = T(double(rgb[(y * w + x) * 3 + c]) / 255.0);
    return img;
}

template <class T>
void write_image(const std::string& path, const Tensor<T>& img) {
    if (img.ndim() != 3 || img.shape[0] != 3)
        throw ShapeError("write_image: want {3,H,W}, got " + shape_str(img.shape));
    const std::size_t h = img.shape[1], w = img.shape[2];
    std::vector<std::uint8_t> rgb(h * w * 3);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                double v = double(img.at3(c, y, x));
                if (!(v > 0.0)) v = 0.0;
                if (v > 1.0) v = 1.0;
                rgb[(y * w + x) * 3 + c] = std::uint8_t(std::lround(v * 255.0));
            }
    write_rgb8(path, rgb, w, h);
}

} // namespace gleak::pngio

#endif
