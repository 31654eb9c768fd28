#ifndef GLEAK_KERNELS_HPP
#define GLEAK_KERNELS_HPP

#include <cstddef>
#include <vector>
#include <omp.h>

namespace gleak::kern {

// Parallel execution policy. Every kernel computes each output element as an
// independent pure function of the inputs with a fixed inner summation order,
// so the OpenMP variants are bitwise identical to the serial ones at any
// thread count. Tests in test_kernels.cpp assert exactly that.
enum class Par { automatic, serial, omp };

inline Par& par_mode() {
    static Par mode = Par::automatic;
    return mode;
}

inline bool use_omp(std::size_t work) {
    switch (par_mode()) {
        case Par::serial: return false;
        case Par::omp: return true;
        default: return work >= (std::size_t(1) << 14) && omp_get_max_threads() > 1;
    }
}

template <class F>
inline void par_for(std::size_t n, bool omp_on, F&& body) {
    if (omp_on) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < (long long)n; ++i) body((std::size_t)i);
    } else {
        for (std::size_t i = 0; i < n; ++i) body(i);
    }
}

// ---------------------------------------------------------------------------
// Blocked Kahan reductions. Work is split into fixed 4096-element blocks;
// each block is summed with Kahan compensation in index order and the block
// partials are folded in block order, again compensated. The decomposition is
// independent of the execution policy, which keeps results bit-stable and the
// rounding error at the few-ulp level even for long vectors.
// ---------------------------------------------------------------------------

inline constexpr std::size_t kReduceBlock = 4096;

template <class T, class Term>
T blocked_reduce(std::size_t n, bool omp_on, Term term) {
    if (n == 0) return T(0);
    const std::size_t nb = (n + kReduceBlock - 1) / kReduceBlock;
    std::vector<T> bs(nb), bc(nb);
    par_for(nb, omp_on && nb > 1, [&](std::size_t b) {
        const std::size_t lo = b * kReduceBlock;
        const std::size_t hi = lo + kReduceBlock < n ? lo + kReduceBlock : n;
        T s = T(0), c = T(0);
        for (std::size_t i = lo; i < hi; ++i) {
            T y = term(i) - c;
            T t = s + y;
            c = (t - s) - y;
            s = t;
        }
        bs[b] = s;
        bc[b] = -c;
    });
    T s = T(0), c = T(0);
    auto fold = [&](T v) {
        T y = v - c;
        T t = s + y;
        c = (t - s) - y;
        s = t;
    };
    for (std::size_t b = 0; b < nb; ++b) {
        fold(bs[b]);
        fold(bc[b]);
    }
    return s;
}

template <class T>
T sum(const T* a, std::size_t n, bool omp_on) {
    return blocked_reduce<T>(n, omp_on, [&](std::size_t i) { return a[i]; });
}

template <class T>
T dot(const T* a, const T* b, std::size_t n, bool omp_on) {
    return blocked_reduce<T>(n, omp_on, [&](std::size_t i) { return a[i] * b[i]; });
}

template <class T>
T squared_diff_sum(const T* a, const T* b, std::size_t n, bool omp_on) {
    return blocked_reduce<T>(n, omp_on, [&](std::size_t i) {
        T d = a[i] - b[i];
        return d * d;
    });
}

// ---------------------------------------------------------------------------
// 2-d convolution family, layout {C,H,W} for images and {Co,Ci,Kh,Kw} for
// kernels, square stride/padding. The three kernels are mutual adjoints:
//   conv2d        x,w -> y
//   conv2d_igrad  gy,w -> gx   (transposed convolution)
//   conv2d_kgrad  gy,x -> gw
// ---------------------------------------------------------------------------

struct ConvDims {
    std::size_t ci, h, w;       // input
    std::size_t co, kh, kw;     // filters
    std::size_t stride, pad;
    std::size_t oh() const { return (h + 2 * pad - kh) / stride + 1; }
    std::size_t ow() const { return (w + 2 * pad - kw) / stride + 1; }
};

template <class T>
void conv2d(const T* x, const T* w, T* y, const ConvDims& d, Par p = Par::automatic) {
    const std::size_t OH = d.oh(), OW = d.ow();
    const std::size_t n = d.co * OH * OW;
    const bool omp_on = (p == Par::automatic) ? use_omp(n * d.ci * d.kh * d.kw) : (p == Par::omp);
    par_for(n, omp_on, [&](std::size_t idx) {
        const std::size_t ow_ = idx % OW;
        const std::size_t oh_ = (idx / OW) % OH;
        const std::size_t co_ = idx / (OW * OH);
        T acc = T(0);
        const long hb = (long)(oh_ * d.stride) - (long)d.pad;
        const long wb = (long)(ow_ * d.stride) - (long)d.pad;
        for (std::size_t ci_ = 0; ci_ < d.ci; ++ci_) {
            const T* xp = x + ci_ * d.h * d.w;
            const T* wp = w + ((co_ * d.ci + ci_) * d.kh) * d.kw;
            for (std::size_t i = 0; i < d.kh; ++i) {
                const long hh = hb + (long)i;
                if (hh < 0 || hh >= (long)d.h) continue;
                for (std::size_t j = 0; j < d.kw; ++j) {
                    const long ww = wb + (long)j;
                    if (ww < 0 || ww >= (long)d.w) continue;
                    acc += xp[hh * (long)d.w + ww] * wp[i * d.kw + j];
                }
            }
        }
        y[idx] = acc;
    });
}

template <class T>
void conv2d_igrad(const T* gy, const T* w, T* gx, const ConvDims& d, Par p = Par::automatic) {
    const std::size_t OH = d.oh(), OW = d.ow();
    const std::size_t n = d.ci * d.h * d.w;
    const bool omp_on = (p == Par::automatic) ? use_omp(n * d.co * d.kh * d.kw) : (p == Par::omp);
    par_for(n, omp_on, [&](std::size_t idx) {
        const std::size_t b = idx % d.w;
        const std::size_t a = (idx / d.w) % d.h;
        const std::size_t ci_ = idx / (d.w * d.h);
        T acc = T(0);
        for (std::size_t co_ = 0; co_ < d.co; ++co_) {
            const T* gp = gy + co_ * OH * OW;
            const T* wp = w + ((co_ * d.ci + ci_) * d.kh) * d.kw;
            for (std::size_t i = 0; i < d.kh; ++i) {
                const long num_h = (long)a + (long)d.pad - (long)i;
                if (num_h < 0 || num_h % (long)d.stride) continue;
                const long oh_ = num_h / (long)d.stride;
                if (oh_ >= (long)OH) continue;
                for (std::size_t j = 0; j < d.kw; ++j) {
                    const long num_w = (long)b + (long)d.pad - (long)j;
                    if (num_w < 0 || num_w % (long)d.stride) continue;
                    const long ow_ = num_w / (long)d.stride;
                    if (ow_ >= (long)OW) continue;
                    acc += gp[oh_ * (long)OW + ow_] * wp[i * d.kw + j];
                }
            }
        }
        gx[idx] = acc;
    });
}

template <class T>
void conv2d_kgrad(const T* gy, const T* x, T* gw, const ConvDims& d, Par p = Par::automatic) {
    const std::size_t OH = d.oh(), OW = d.ow();
    const std::size_t n = d.co * d.ci * d.kh * d.kw;
    const bool omp_on = (p == Par::automatic) ? use_omp(n * OH * OW) : (p == Par::omp);
    par_for(n, omp_on, [&](std::size_t idx) {
        const std::size_t j = idx % d.kw;
        const std::size_t i = (idx / d.kw) % d.kh;
        const std::size_t ci_ = (idx / (d.kw * d.kh)) % d.ci;
        const std::size_t co_ = idx / (d.kw * d.kh * d.ci);
        const T* gp = gy + co_ * OH * OW;
        const T* xp = x + ci_ * d.h * d.w;
        T acc = T(0);
        for (std::size_t oh_ = 0; oh_ < OH; ++oh_) {
            const long hh = (long)(oh_ * d.stride) - (long)d.pad + (long)i;
            if (hh < 0 || hh >= (long)d.h) continue;
            for (std::size_t ow_ = 0; ow_ < OW; ++ow_) {
                const long ww = (long)(ow_ * d.stride) - (long)d.pad + (long)j;
                if (ww < 0 || ww >= (long)d.w) continue;
                acc += gp[oh_ * OW + ow_] * xp[hh * (long)d.w + ww];
            }
        }
        gw[idx] = acc;
    });
}

// ---------------------------------------------------------------------------
// Dense layer family: y = M v, y = M^T u, M = u v^T.
// ---------------------------------------------------------------------------

template <class T>
void matvec(const T* m, const T* v, T* y, std::size_t rows, std::size_t cols, Par p = Par::automatic) {
    const bool omp_on = (p == Par::automatic) ? use_omp(rows * cols) : (p == Par::omp);
    par_for(rows, omp_on, [&](std::size_t r) {
        const T* mp = m + r * cols;
        T acc = T(0);
        for (std::size_t c = 0; c < cols; ++c) acc += mp[c] * v[c];
        y[r] = acc;
    });
}

template <class T>
void matvec_t(const T* m, const T* u, T* y, std::size_t rows, std::size_t cols, Par p = Par::automatic) {
    const bool omp_on = (p == Par::automatic) ? use_omp(rows * cols) : (p == Par::omp);
    par_for(cols, omp_on, [&](std::size_t c) {
        T acc = T(0);
        for (std::size_t r = 0; r < rows; ++r) acc += m[r * cols + c] * u[r];
        y[c] = acc;
    });
}

template <class T>
void outer(const T* u, const T* v, T* m, std::size_t rows, std::size_t cols, Par p = Par::automatic) {
    const bool omp_on = (p == Par::automatic) ? use_omp(rows * cols) : (p == Par::omp);
    par_for(rows * cols, omp_on, [&](std::size_t idx) {
        m[idx] = u[idx / cols] * v[idx % cols];
    });
}

// ---------------------------------------------------------------------------
// Pooling / upsampling by an integer factor, layout {C,H,W}. sum_pool and
// upsample_nearest are mutual adjoints.
// ---------------------------------------------------------------------------

template <class T>
void sum_pool(const T* x, T* y, std::size_t c, std::size_t h, std::size_t w, std::size_t f,
              Par p = Par::automatic) {
    const std::size_t oh = h / f, ow = w / f;
    const std::size_t n = c * oh * ow;
    const bool omp_on = (p == Par::automatic) ? use_omp(n * f * f) : (p == Par::omp);
    par_for(n, omp_on, [&](std::size_t idx) {
        const std::size_t j = idx % ow;
        const std::size_t i = (idx / ow) % oh;
        const std::size_t ch = idx / (ow * oh);
        const T* xp = x + ch * h * w;
        T acc = T(0);
        for (std::size_t a = 0; a < f; ++a)
            for (std::size_t b = 0; b < f; ++b) acc += xp[(i * f + a) * w + (j * f + b)];
        y[idx] = acc;
    });
}

template <class T>
void upsample_nearest(const T* x, T* y, std::size_t c, std::size_t h, std::size_t w, std::size_t f,
                      Par p = Par::automatic) {
    const std::size_t oh = h * f, ow = w * f;
    const std::size_t n = c * oh * ow;
    const bool omp_on = (p == Par::automatic) ? use_omp(n) : (p == Par::omp);
    par_for(n, omp_on, [&](std::size_t idx) {
        const std::size_t j = idx % ow;
        const std::size_t i = (idx / ow) % oh;
        const std::size_t ch = idx / (ow * oh);
        y[idx] = x[(ch * h + i / f) * w + j / f];
    });
}

} // namespace gleak::kern

#endif
