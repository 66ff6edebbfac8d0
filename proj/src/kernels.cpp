#include "uad/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include "uad/error.hpp"

namespace uad::kernels {

namespace {

// Work below this many multiply-adds is not worth waking the thread team.
constexpr std::int64_t kParallelWork = 1 << 15;

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
    return (a + b - 1) / b;
}

// Rows [i0, i1) of C = op(A) op(B). Summation over k is always ascending so
// the result of a row does not depend on how rows are distributed.
template <class T>
void gemm_rows(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
               bool acc, std::int64_t i0, std::int64_t i1) {
    if (!acc)
        for (std::int64_t i = i0; i < i1; ++i) std::fill(c + i * n, c + (i + 1) * n, T(0));

    if (!tb) {
        // Four rows of C at a time share each loaded row of B.
        std::int64_t i = i0;
        for (; i + 4 <= i1; i += 4) {
            T* c0 = c + i * n;
            T* c1 = c0 + n;
            T* c2 = c1 + n;
            T* c3 = c2 + n;
            for (std::int64_t p = 0; p < k; ++p) {
                const T a0 = ta ? a[p * m + i] : a[i * k + p];
                const T a1 = ta ? a[p * m + i + 1] : a[(i + 1) * k + p];
                const T a2 = ta ? a[p * m + i + 2] : a[(i + 2) * k + p];
                const T a3 = ta ? a[p * m + i + 3] : a[(i + 3) * k + p];
                const T* br = b + p * n;
#pragma omp simd
                for (std::int64_t j = 0; j < n; ++j) {
                    const T bv = br[j];
                    c0[j] += a0 * bv;
                    c1[j] += a1 * bv;
                    c2[j] += a2 * bv;
                    c3[j] += a3 * bv;
                }
            }
        }
        for (; i < i1; ++i) {
            T* cr = c + i * n;
            for (std::int64_t p = 0; p < k; ++p) {
                const T av = ta ? a[p * m + i] : a[i * k + p];
                const T* br = b + p * n;
#pragma omp simd
                for (std::int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
            }
        }
        return;
    }

    // B stored n x k: each output is a dot product of contiguous rows.
    std::vector<T> arow;
    if (ta) arow.resize(static_cast<std::size_t>(k));
    for (std::int64_t i = i0; i < i1; ++i) {
        const T* ar;
        if (ta) {
            for (std::int64_t p = 0; p < k; ++p) arow[static_cast<std::size_t>(p)] = a[p * m + i];
            ar = arow.data();
        } else {
            ar = a + i * k;
        }
        T* cr = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) {
            const T* br = b + j * k;
            T s = 0;
#pragma omp simd reduction(+ : s)
            for (std::int64_t p = 0; p < k; ++p) s += ar[p] * br[p];
            cr[j] += s;
        }
    }
}

} // namespace

ConvGeometry conv_geometry(std::int64_t batch, std::int64_t h, std::int64_t w, std::int64_t cin, std::int64_t cout,
                           std::int64_t kernel, std::int64_t stride, Padding padding) {
    ConvGeometry g;
    g.batch = batch;
    g.in_h = h;
    g.in_w = w;
    g.in_c = cin;
    g.out_c = cout;
    g.kernel = kernel;
    g.stride = stride;
    if (padding == Padding::same) {
        g.out_h = ceil_div(h, stride);
        g.out_w = ceil_div(w, stride);
        const auto pad_h = std::max<std::int64_t>((g.out_h - 1) * stride + kernel - h, 0);
        const auto pad_w = std::max<std::int64_t>((g.out_w - 1) * stride + kernel - w, 0);
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
    } else {
        if (h < kernel || w < kernel)
            throw ShapeError("valid convolution needs input of at least the kernel size");
        g.out_h = (h - kernel) / stride + 1;
        g.out_w = (w - kernel) / stride + 1;
    }
    return g;
}

template <class T>
void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
          bool accumulate) {
    if (ta && tb) {
        // Rare; materialize B^T and fall through to the TN path.
        std::vector<T> bt(static_cast<std::size_t>(n * k));
        for (std::int64_t j = 0; j < n; ++j)
            for (std::int64_t p = 0; p < k; ++p) bt[static_cast<std::size_t>(p * n + j)] = b[j * k + p];
        gemm(true, false, m, n, k, a, bt.data(), c, accumulate);
        return;
    }
    const std::int64_t blocks = ceil_div(m, 4);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
    for (std::int64_t blk = 0; blk < blocks; ++blk) {
        const std::int64_t i0 = blk * 4;
        gemm_rows(ta, tb, m, n, k, a, b, c, accumulate, i0, std::min(m, i0 + 4));
    }
}

template <class T>
void batched_gemm(std::int64_t batch, bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
                  const T* b, T* c) {
    if (ta && tb) {
        for (std::int64_t s = 0; s < batch; ++s) gemm(ta, tb, m, n, k, a + s * m * k, b + s * k * n, c + s * m * n, false);
        return;
    }
    const std::int64_t blocks = ceil_div(m, 4);
#pragma omp parallel for schedule(static) if (batch * m * n * k > kParallelWork)
    for (std::int64_t job = 0; job < batch * blocks; ++job) {
        const std::int64_t s = job / blocks;
        const std::int64_t i0 = (job % blocks) * 4;
        gemm_rows(ta, tb, m, n, k, a + s * m * k, b + s * k * n, c + s * m * n, false, i0, std::min(m, i0 + 4));
    }
}

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, T* y) {
    const std::int64_t rows = g.batch * g.out_h;
    const std::int64_t work = rows * g.out_w * g.kernel * g.kernel * g.in_c * g.out_c;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (std::int64_t r = 0; r < rows; ++r) {
        const std::int64_t bi = r / g.out_h;
        const std::int64_t oy = r % g.out_h;
        for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            T* out = y + ((bi * g.out_h + oy) * g.out_w + ox) * g.out_c;
            std::fill(out, out + g.out_c, T(0));
            for (std::int64_t ky = 0; ky < g.kernel; ++ky) {
                const std::int64_t iy = oy * g.stride + ky - g.pad_top;
                if (iy < 0 || iy >= g.in_h) continue;
                for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
                    const std::int64_t ix = ox * g.stride + kx - g.pad_left;
                    if (ix < 0 || ix >= g.in_w) continue;
                    const T* in = x + ((bi * g.in_h + iy) * g.in_w + ix) * g.in_c;
                    const T* wk = w + (ky * g.kernel + kx) * g.in_c * g.out_c;
                    for (std::int64_t ci = 0; ci < g.in_c; ++ci) {
                        const T xv = in[ci];
                        const T* wr = wk + ci * g.out_c;
#pragma omp simd
                        for (std::int64_t co = 0; co < g.out_c; ++co) out[co] += xv * wr[co];
                    }
                }
            }
        }
    }
}

template <class T>
void conv2d_backward_data(const ConvGeometry& g, const T* dy, const T* w, T* dx) {
    const std::int64_t rows = g.batch * g.in_h;
    const std::int64_t work = rows * g.in_w * g.kernel * g.kernel * g.in_c * g.out_c / (g.stride * g.stride);
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (std::int64_t r = 0; r < rows; ++r) {
        const std::int64_t bi = r / g.in_h;
        const std::int64_t iy = r % g.in_h;
        for (std::int64_t ix = 0; ix < g.in_w; ++ix) {
            T* out = dx + ((bi * g.in_h + iy) * g.in_w + ix) * g.in_c;
            std::fill(out, out + g.in_c, T(0));
            for (std::int64_t ky = 0; ky < g.kernel; ++ky) {
                const std::int64_t ty = iy + g.pad_top - ky;
                if (ty < 0 || ty % g.stride != 0) continue;
                const std::int64_t oy = ty / g.stride;
                if (oy >= g.out_h) continue;
                for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
                    const std::int64_t tx = ix + g.pad_left - kx;
                    if (tx < 0 || tx % g.stride != 0) continue;
                    const std::int64_t ox = tx / g.stride;
                    if (ox >= g.out_w) continue;
                    const T* grad = dy + ((bi * g.out_h + oy) * g.out_w + ox) * g.out_c;
                    const T* wk = w + (ky * g.kernel + kx) * g.in_c * g.out_c;
                    for (std::int64_t ci = 0; ci < g.in_c; ++ci) {
                        const T* wr = wk + ci * g.out_c;
                        T s = 0;
#pragma omp simd reduction(+ : s)
                        for (std::int64_t co = 0; co < g.out_c; ++co) s += grad[co] * wr[co];
                        out[ci] += s;
                    }
                }
            }
        }
    }
}

template <class T>
void conv2d_backward_filter(const ConvGeometry& g, const T* x, const T* dy, T* dw) {
    const std::int64_t taps = g.kernel * g.kernel;
    const std::int64_t work = taps * g.batch * g.out_h * g.out_w * g.in_c * g.out_c;
    // One filter tap per task: each tap's slice of dw has a single writer.
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (std::int64_t tap = 0; tap < taps; ++tap) {
        const std::int64_t ky = tap / g.kernel;
        const std::int64_t kx = tap % g.kernel;
        T* wk = dw + tap * g.in_c * g.out_c;
        std::fill(wk, wk + g.in_c * g.out_c, T(0));
        for (std::int64_t bi = 0; bi < g.batch; ++bi) {
            for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                const std::int64_t iy = oy * g.stride + ky - g.pad_top;
                if (iy < 0 || iy >= g.in_h) continue;
                for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
                    const std::int64_t ix = ox * g.stride + kx - g.pad_left;
                    if (ix < 0 || ix >= g.in_w) continue;
                    const T* in = x + ((bi * g.in_h + iy) * g.in_w + ix) * g.in_c;
                    const T* grad = dy + ((bi * g.out_h + oy) * g.out_w + ox) * g.out_c;
                    for (std::int64_t ci = 0; ci < g.in_c; ++ci) {
                        const T xv = in[ci];
                        T* wr = wk + ci * g.out_c;
#pragma omp simd
                        for (std::int64_t co = 0; co < g.out_c; ++co) wr[co] += xv * grad[co];
                    }
                }
            }
        }
    }
}

void median_filter(const float* in, std::int64_t h, std::int64_t w, int k, float* out) {
    const int r = k / 2;
    const std::size_t mid = static_cast<std::size_t>(k * k / 2);
#pragma omp parallel if (h * w > 4096)
    {
        std::vector<float> window(static_cast<std::size_t>(k * k));
#pragma omp for schedule(static)
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                std::size_t n = 0;
                for (int dy = -r; dy <= r; ++dy) {
                    const std::int64_t yy = std::clamp<std::int64_t>(y + dy, 0, h - 1);
                    for (int dx = -r; dx <= r; ++dx) {
                        const std::int64_t xx = std::clamp<std::int64_t>(x + dx, 0, w - 1);
                        window[n++] = in[yy * w + xx];
                    }
                }
                std::nth_element(window.begin(), window.begin() + static_cast<std::ptrdiff_t>(mid), window.end());
                out[y * w + x] = window[mid];
            }
        }
    }
}

namespace reference {

template <class T>
void gemm(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
          bool accumulate) {
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
            T s = 0;
            for (std::int64_t p = 0; p < k; ++p) {
                const T av = ta ? a[p * m + i] : a[i * k + p];
                const T bv = tb ? b[j * k + p] : b[p * n + j];
                s += av * bv;
            }
            c[i * n + j] = accumulate ? c[i * n + j] + s : s;
        }
}

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, T* y) {
    for (std::int64_t bi = 0; bi < g.batch; ++bi)
        for (std::int64_t oy = 0; oy < g.out_h; ++oy)
            for (std::int64_t ox = 0; ox < g.out_w; ++ox)
                for (std::int64_t co = 0; co < g.out_c; ++co) {
                    T s = 0;
                    for (std::int64_t ky = 0; ky < g.kernel; ++ky)
                        for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
                            const std::int64_t iy = oy * g.stride + ky - g.pad_top;
                            const std::int64_t ix = ox * g.stride + kx - g.pad_left;
                            if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                            for (std::int64_t ci = 0; ci < g.in_c; ++ci)
                                s += x[((bi * g.in_h + iy) * g.in_w + ix) * g.in_c + ci] *
                                     w[((ky * g.kernel + kx) * g.in_c + ci) * g.out_c + co];
                        }
                    y[((bi * g.out_h + oy) * g.out_w + ox) * g.out_c + co] = s;
                }
}

template <class T>
void conv2d_backward_data(const ConvGeometry& g, const T* dy, const T* w, T* dx) {
    std::fill(dx, dx + g.batch * g.in_h * g.in_w * g.in_c, T(0));
    for (std::int64_t bi = 0; bi < g.batch; ++bi)
        for (std::int64_t oy = 0; oy < g.out_h; ++oy)
            for (std::int64_t ox = 0; ox < g.out_w; ++ox)
                for (std::int64_t ky = 0; ky < g.kernel; ++ky)
                    for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
                        const std::int64_t iy = oy * g.stride + ky - g.pad_top;
                        const std::int64_t ix = ox * g.stride + kx - g.pad_left;
                        if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                        for (std::int64_t ci = 0; ci < g.in_c; ++ci)
                            for (std::int64_t co = 0; co < g.out_c; ++co)
                                dx[((bi * g.in_h + iy) * g.in_w + ix) * g.in_c + ci] +=
                                    dy[((bi * g.out_h + oy) * g.out_w + ox) * g.out_c + co] *
                                    w[((ky * g.kernel + kx) * g.in_c + ci) * g.out_c + co];
                    }
}

template <class T>
void conv2d_backward_filter(const ConvGeometry& g, const T* x, const T* dy, T* dw) {
    std::fill(dw, dw + g.kernel * g.kernel * g.in_c * g.out_c, T(0));
    for (std::int64_t bi = 0; bi < g.batch; ++bi)
        for (std::int64_t oy = 0; oy < g.out_h; ++oy)
            for (std::int64_t ox = 0; ox < g.out_w; ++ox)
                for (std::int64_t ky = 0; ky < g.kernel; ++ky)
                    for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
                        const std::int64_t iy = oy * g.stride + ky - g.pad_top;
                        const std::int64_t ix = ox * g.stride + kx - g.pad_left;
                        if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                        for (std::int64_t ci = 0; ci < g.in_c; ++ci)
                            for (std::int64_t co = 0; co < g.out_c; ++co)
                                dw[((ky * g.kernel + kx) * g.in_c + ci) * g.out_c + co] +=
                                    x[((bi * g.in_h + iy) * g.in_w + ix) * g.in_c + ci] *
                                    dy[((bi * g.out_h + oy) * g.out_w + ox) * g.out_c + co];
                    }
}

void median_filter(const float* in, std::int64_t h, std::int64_t w, int k, float* out) {
    const int r = k / 2;
    std::vector<float> window;
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            window.clear();
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx)
                    window.push_back(in[std::clamp<std::int64_t>(y + dy, 0, h - 1) * w +
                                        std::clamp<std::int64_t>(x + dx, 0, w - 1)]);
            std::sort(window.begin(), window.end());
            out[y * w + x] = window[window.size() / 2];
        }
}

} // namespace reference

#define UAD_INSTANTIATE_KERNELS(T)                                                                              \
    template void gemm<T>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const T*, const T*, T*, bool); \
    template void batched_gemm<T>(std::int64_t, bool, bool, std::int64_t, std::int64_t, std::int64_t, const T*, \
                                  const T*, T*);                                                                \
    template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, T*);                               \
    template void conv2d_backward_data<T>(const ConvGeometry&, const T*, const T*, T*);                         \
    template void conv2d_backward_filter<T>(const ConvGeometry&, const T*, const T*, T*);                       \
    template void reference::gemm<T>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const T*, const T*, \
                                     T*, bool);                                                                 \
    template void reference::conv2d_forward<T>(const ConvGeometry&, const T*, const T*, T*);                    \
    template void reference::conv2d_backward_data<T>(const ConvGeometry&, const T*, const T*, T*);              \
    template void reference::conv2d_backward_filter<T>(const ConvGeometry&, const T*, const T*, T*);

UAD_INSTANTIATE_KERNELS(float)
UAD_INSTANTIATE_KERNELS(double)

#undef UAD_INSTANTIATE_KERNELS

} // namespace uad::kernels
