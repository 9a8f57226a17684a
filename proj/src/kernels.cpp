#include "neurodec/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace neurodec::kernels {

namespace {
// Below this many multiply-adds the fork/join costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

using Index = std::ptrdiff_t;
}  // namespace

void set_num_threads(int n) {
#ifdef _OPENMP
    omp_set_num_threads(std::max(1, n));
#else
    (void)n;
#endif
}

int num_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

// ---------------------------------------------------------------- serial

namespace serial {

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = accumulate ? c[i * n + j] + s : s;
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
            c[i * n + j] = accumulate ? c[i * n + j] + s : s;
        }
    }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
            c[i * n + j] = accumulate ? c[i * n + j] + s : s;
        }
    }
}

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        double* yr = y + r * cols;
        double mx = xr[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            z += yr[j];
        }
        for (std::size_t j = 0; j < cols; ++j) yr[j] /= z;
    }
}

void layer_norm_rows(const double* x, double* y, double* mean, double* rstd, std::size_t rows,
                     std::size_t cols, double eps) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        double mu = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mu += xr[j];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(cols);
        const double rs = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < cols; ++j) y[r * cols + j] = (xr[j] - mu) * rs;
        mean[r] = mu;
        rstd[r] = rs;
    }
}

void im2col(const double* x, double* cols, std::size_t h, std::size_t w, std::size_t c,
            std::size_t k, std::size_t stride, std::size_t pad) {
    const std::size_t ho = conv_out_size(h, k, stride, pad);
    const std::size_t wo = conv_out_size(w, k, stride, pad);
    const std::size_t width = k * k * c;
    for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
            double* row = cols + (oy * wo + ox) * width;
            for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const Index iy = static_cast<Index>(oy * stride + ky) - static_cast<Index>(pad);
                    const Index ix = static_cast<Index>(ox * stride + kx) - static_cast<Index>(pad);
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        double v = 0.0;
                        if (iy >= 0 && ix >= 0 && iy < static_cast<Index>(h) &&
                            ix < static_cast<Index>(w)) {
                            v = x[(static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c + ch];
                        }
                        row[(ky * k + kx) * c + ch] = v;
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, double* x, std::size_t h, std::size_t w, std::size_t c,
            std::size_t k, std::size_t stride, std::size_t pad) {
    const std::size_t ho = conv_out_size(h, k, stride, pad);
    const std::size_t wo = conv_out_size(w, k, stride, pad);
    const std::size_t width = k * k * c;
    std::fill(x, x + h * w * c, 0.0);
    for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
            const double* row = cols + (oy * wo + ox) * width;
            for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const Index iy = static_cast<Index>(oy * stride + ky) - static_cast<Index>(pad);
                    const Index ix = static_cast<Index>(ox * stride + kx) - static_cast<Index>(pad);
                    if (iy < 0 || ix < 0 || iy >= static_cast<Index>(h) || ix >= static_cast<Index>(w))
                        continue;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        x[(static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c + ch] +=
                            row[(ky * k + kx) * c + ch];
                    }
                }
            }
        }
    }
}

}  // namespace serial

// -------------------------------------------------------------- parallel

namespace parallel {

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    const bool par = m * k * n >= kParallelWork && m > 1;
#pragma omp parallel for schedule(static) if (par)
    for (Index ii = 0; ii < static_cast<Index>(m); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* ci = c + i * n;
        if (!accumulate) std::fill(ci, ci + n, 0.0);
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    // Transpose b once so the inner loop streams contiguously.
    std::vector<double> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    gemm_nn(a, bt.data(), c, m, k, n, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    const bool par = m * k * n >= kParallelWork && m > 1;
#pragma omp parallel for schedule(static) if (par)
    for (Index ii = 0; ii < static_cast<Index>(m); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* ci = c + i * n;
        if (!accumulate) std::fill(ci, ci + n, 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p * m + i];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
    const bool par = rows * cols >= kParallelWork && rows > 1;
#pragma omp parallel for schedule(static) if (par)
    for (Index rr = 0; rr < static_cast<Index>(rows); ++rr) {
        serial::softmax_rows(x + rr * static_cast<Index>(cols), y + rr * static_cast<Index>(cols), 1, cols);
    }
}

void layer_norm_rows(const double* x, double* y, double* mean, double* rstd, std::size_t rows,
                     std::size_t cols, double eps) {
    const bool par = rows * cols >= kParallelWork && rows > 1;
#pragma omp parallel for schedule(static) if (par)
    for (Index rr = 0; rr < static_cast<Index>(rows); ++rr) {
        const auto r = static_cast<std::size_t>(rr);
        serial::layer_norm_rows(x + r * cols, y + r * cols, mean + r, rstd + r, 1, cols, eps);
    }
}

void im2col(const double* x, double* cols, std::size_t h, std::size_t w, std::size_t c,
            std::size_t k, std::size_t stride, std::size_t pad) {
    const std::size_t ho = conv_out_size(h, k, stride, pad);
    const std::size_t wo = conv_out_size(w, k, stride, pad);
    const std::size_t width = k * k * c;
    const bool par = ho * wo * width >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
    for (Index oyy = 0; oyy < static_cast<Index>(ho); ++oyy) {
        const auto oy = static_cast<std::size_t>(oyy);
        for (std::size_t ox = 0; ox < wo; ++ox) {
            double* row = cols + (oy * wo + ox) * width;
            for (std::size_t ky = 0; ky < k; ++ky) {
                const Index iy = static_cast<Index>(oy * stride + ky) - static_cast<Index>(pad);
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const Index ix = static_cast<Index>(ox * stride + kx) - static_cast<Index>(pad);
                    double* dst = row + (ky * k + kx) * c;
                    if (iy < 0 || ix < 0 || iy >= static_cast<Index>(h) || ix >= static_cast<Index>(w)) {
                        std::fill(dst, dst + c, 0.0);
                    } else {
                        const double* src =
                            x + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
                        std::memcpy(dst, src, c * sizeof(double));
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, double* x, std::size_t h, std::size_t w, std::size_t c,
            std::size_t k, std::size_t stride, std::size_t pad) {
    // Gather form: each image pixel sums the patch entries that read it, so
    // threads never write the same location.
    const std::size_t ho = conv_out_size(h, k, stride, pad);
    const std::size_t wo = conv_out_size(w, k, stride, pad);
    const std::size_t width = k * k * c;
    const bool par = h * w * k * k * c >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
    for (Index yy = 0; yy < static_cast<Index>(h); ++yy) {
        for (Index xx = 0; xx < static_cast<Index>(w); ++xx) {
            double* dst = x + (static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)) * c;
            std::fill(dst, dst + c, 0.0);
            for (std::size_t ky = 0; ky < k; ++ky) {
                const Index ny = yy + static_cast<Index>(pad) - static_cast<Index>(ky);
                if (ny < 0 || ny % static_cast<Index>(stride) != 0) continue;
                const Index oy = ny / static_cast<Index>(stride);
                if (oy >= static_cast<Index>(ho)) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const Index nx = xx + static_cast<Index>(pad) - static_cast<Index>(kx);
                    if (nx < 0 || nx % static_cast<Index>(stride) != 0) continue;
                    const Index ox = nx / static_cast<Index>(stride);
                    if (ox >= static_cast<Index>(wo)) continue;
                    const double* src = cols +
                                        (static_cast<std::size_t>(oy) * wo + static_cast<std::size_t>(ox)) * width +
                                        (ky * k + kx) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                }
            }
        }
    }
}

}  // namespace parallel

}  // namespace neurodec::kernels
