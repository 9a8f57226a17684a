#pragma once

// Dense numeric kernels behind the autodiff ops.
//
// Every kernel exists twice: `serial` is the textbook loop nest kept as the
// reference for tests and benchmarks, `parallel` is the cache-friendly
// OpenMP version the ops call. Parallel kernels split work over output rows
// only, so each output element is reduced in a fixed order and results are
// bit-identical for any thread count.

#include <cstddef>

namespace neurodec::kernels {

void set_num_threads(int n);
int num_threads();

namespace serial {

// c = a(m x k) * b(k x n)   (+= when accumulate)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false);
// c = a(m x k) * b(n x k)^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false);
// c = a(k x m)^T * b(k x n)
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false);

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);

// y = (x - mean) / sqrt(var + eps) per row; saves mean and inverse std.
void layer_norm_rows(const double* x, double* y, double* mean, double* rstd, std::size_t rows,
                     std::size_t cols, double eps);

// Channels-last image (h*w x c) to patch rows ((ho*wo) x (k*k*c)).
void im2col(const double* x, double* cols, std::size_t h, std::size_t w, std::size_t c,
            std::size_t k, std::size_t stride, std::size_t pad);
// Adjoint of im2col: scatter-add patch rows back into the image.
void col2im(const double* cols, double* x, std::size_t h, std::size_t w, std::size_t c,
            std::size_t k, std::size_t stride, std::size_t pad);

}  // namespace serial

namespace parallel {

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false);
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false);
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate = false);
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);
void layer_norm_rows(const double* x, double* y, double* mean, double* rstd, std::size_t rows,
                     std::size_t cols, double eps);
void im2col(const double* x, double* cols, std::size_t h, std::size_t w, std::size_t c,
            std::size_t k, std::size_t stride, std::size_t pad);
void col2im(const double* cols, double* x, std::size_t h, std::size_t w, std::size_t c,
            std::size_t k, std::size_t stride, std::size_t pad);

}  // namespace parallel

inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride,
                                 std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace neurodec::kernels
