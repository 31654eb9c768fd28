#include "gleak/plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>

#include "gleak/png_io.hpp"
#include "gleak/tensor.hpp"

namespace gleak::plot {

namespace {

constexpr int W = 640, H = 400;
constexpr int ML = 64, MR = 16, MT = 28, MB = 34; // margins

struct Rgb {
    double r, g, b;
};

const Rgb kPalette[] = {
    {0.13, 0.36, 0.82}, {0.85, 0.26, 0.16}, {0.10, 0.58, 0.30}, {0.58, 0.22, 0.70},
    {0.90, 0.60, 0.10}, {0.15, 0.65, 0.65},
};

// 3x5 glyphs, 5 rows of 3 bits, top row in the high bits
std::uint16_t glyph(char ch) {
    auto g = [](unsigned a, unsigned b, unsigned c, unsigned d, unsigned e) {
        return std::uint16_t(a << 12 | b << 9 | c << 6 | d << 3 | e);
    };
    switch (ch) {
        case '0': return g(7, 5, 5, 5, 7);
        case '1': return g(2, 6, 2, 2, 7);
        case '2': return g(7, 1, 7, 4, 7);
        case '3': return g(7, 1, 7, 1, 7);
        case '4': return g(5, 5, 7, 1, 1);
        case '5': return g(7, 4, 7, 1, 7);
        case '6': return g(7, 4, 7, 5, 7);
        case '7': return g(7, 1, 1, 2, 2);
        case '8': return g(7, 5, 7, 5, 7);
        case '9': return g(7, 5, 7, 1, 7);
        case '.': return g(0, 0, 0, 0, 2);
        case '-': return g(0, 0, 7, 0, 0);
        case '+': return g(0, 2, 7, 2, 0);
        case ':': return g(0, 2, 0, 2, 0);
        case '_': return g(0, 0, 0, 0, 7);
        case '/': return g(1, 1, 2, 4, 4);
        case 'a': return g(7, 5, 7, 5, 5);
        case 'b': return g(6, 5, 6, 5, 6);
        case 'c': return g(7, 4, 4, 4, 7);
        case 'd': return g(6, 5, 5, 5, 6);
        case 'e': return g(7, 4, 7, 4, 7);
        case 'f': return g(7, 4, 7, 4, 4);
        case 'g': return g(7, 4, 5, 5, 7);
        case 'h': return g(5, 5, 7, 5, 5);
        case 'i': return g(7, 2, 2, 2, 7);
        case 'j': return g(1, 1, 1, 5, 7);
        case 'k': return g(5, 5, 6, 5, 5);
        case 'l': return g(4, 4, 4, 4, 7);
        case 'm': return g(5, 7, 7, 5, 5);
        case 'n': return g(6, 5, 5, 5, 5);
        case 'o': return g(7, 5, 5, 5, 7);
        case 'p': return g(7, 5, 7, 4, 4);
        case 'q': return g(7, 5, 5, 7, 1);
        case 'r': return g(7, 5, 6, 5, 5);
        case 's': return g(7, 4, 7, 1, 7);
        case 't': return g(7, 2, 2, 2, 2);
        case 'u': return g(5, 5, 5, 5, 7);
        case 'v': return g(5, 5, 5, 5, 2);
        case 'w': return g(5, 5, 7, 7, 5);
        case 'x': return g(5, 5, 2, 5, 5);
        case 'y': return g(5, 5, 2, 2, 2);
        case 'z': return g(7, 1, 2, 4, 7);
        default: return 0;
    }
}

struct Canvas {
    Tensor<double> img{std::vector<std::size_t>{3, H, W}};

    Canvas() { img.data.assign(img.numel(), 1.0); }

    void put(int x, int y, const Rgb& c) {
        if (x < 0 || x >= W || y < 0 || y >= H) return;
        img.at3(0, std::size_t(y), std::size_t(x)) = c.r;
        img.at3(1, std::size_t(y), std::size_t(x)) = c.g;
        img.at3(2, std::size_t(y), std::size_t(x)) = c.b;
    }

    void line(double x0, double y0, double x1, double y1, const Rgb& c) {
        const double dx = x1 - x0, dy = y1 - y0;
        const int n = 1 + int(std::max(std::fabs(dx), std::fabs(dy)));
        for (int i = 0; i <= n; ++i) {
            const double t = double(i) / double(n);
            const int x = int(std::lround(x0 + t * dx));
            const int y = int(std::lround(y0 + t * dy));
            put(x, y, c);
            put(x + 1, y, c); // cheap thickness
        }
    }

    void text(int x, int y, const std::string& s, const Rgb& c, int scale = 1) {
        int cx = x;
        for (char raw : s) {
            const char ch = char(std::tolower((unsigned char)raw));
            const std::uint16_t bits = glyph(ch);
            for (int ry = 0; ry < 5; ++ry)
                for (int rx = 0; rx < 3; ++rx)
                    if (bits >> (14 - ry * 3 - rx) & 1)
                        for (int sy = 0; sy < scale; ++sy)
                            for (int sx = 0; sx < scale; ++sx)
                                put(cx + rx * scale + sx, y + ry * scale + sy, c);
            cx += 4 * scale;
        }
    }
};

std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

} // namespace

void render_curves(const std::string& path, const std::string& title,
                   const std::vector<Series>& series, bool log_y) {
    Canvas cv;
    const Rgb axis{0.25, 0.25, 0.25}, grid{0.88, 0.88, 0.88}, ink{0.1, 0.1, 0.1};

    double ymin = 1e300, ymax = -1e300;
    std::size_t nmax = 0;
    auto tr = [&](double v) {
        return log_y ? std::log10(std::max(v, 1e-300)) : v;
    };
    for (const auto& s : series) {
        nmax = std::max(nmax, s.y.size());
        for (double v : s.y) {
            if (!std::isfinite(v)) continue;
            ymin = std::min(ymin, tr(v));
            ymax = std::max(ymax, tr(v));
        }
    }
    if (nmax == 0 || ymin > ymax) {
        ymin = 0;
        ymax = 1;
        nmax = 1;
    }
    if (ymax - ymin < 1e-12) {
        ymin -= 0.5;
        ymax += 0.5;
    }

    const double px0 = ML, px1 = W - MR, py0 = H - MB, py1 = MT;
    auto sx = [&](double i) {
        return px0 + (px1 - px0) * (nmax > 1 ? i / double(nmax - 1) : 0.5);
    };
    auto sy = [&](double v) { return py0 + (py1 - py0) * (v - ymin) / (ymax - ymin); };

    for (int k = 0; k <= 4; ++k) {
        const double v = ymin + (ymax - ymin) * k / 4.0;
        const double y = sy(v);
        cv.line(px0, y, px1, y, grid);
        const double label = log_y ? std::pow(10.0, v) : v;
        cv.text(4, int(y) - 2, fmt_tick(label), ink);
        const double xi = double(nmax - 1) * k / 4.0;
        const double x = sx(xi);
        cv.line(x, py0, x, py1, grid);
        cv.text(int(x) - 6, H - MB + 8, fmt_tick(xi + 1), ink);
    }
    cv.line(px0, py0, px1, py0, axis);
    cv.line(px0, py0, px0, py1, axis);
    cv.text(ML, 8, title, ink, 2);
    if (log_y) cv.text(W - MR - 60, 8, "log scale", ink);

    for (std::size_t si = 0; si < series.size(); ++si) {
        const Rgb& c = kPalette[si % (sizeof kPalette / sizeof kPalette[0])];
        const auto& y = series[si].y;
        for (std::size_t i = 0; i + 1 < y.size(); ++i) {
            if (!std::isfinite(y[i]) || !std::isfinite(y[i + 1])) continue;
            cv.line(sx(double(i)), sy(tr(y[i])), sx(double(i + 1)), sy(tr(y[i + 1])), c);
        }
        cv.text(ML + 8, MT + 4 + int(si) * 8, series[si].name, c);
    }

    pngio::write_image(path, cv.img);
}

} // namespace gleak::plot
