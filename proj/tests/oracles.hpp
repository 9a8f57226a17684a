#pragma once

// Test-only reference implementations. Everything here is written with
// plain loops over doubles / long doubles and never calls into the library's
// autodiff ops, so it can serve as an independent oracle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "neurodec/tensor.hpp"

namespace oracle {

using neurodec::Tensor;
using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat to_mat(const Tensor& t) {
    Mat m(t.rows(), Vec(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
    return m;
}

inline double dot(const Vec& a, const Vec& b) {
    long double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
    return static_cast<double>(s);
}

inline Vec softmax(const Vec& x) {
    long double mx = *std::max_element(x.begin(), x.end());
    long double z = 0;
    std::vector<long double> e(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        e[i] = std::exp(static_cast<long double>(x[i]) - mx);
        z += e[i];
    }
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(e[i] / z);
    return out;
}

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat c(a.size(), Vec(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b[0].size(); ++j) {
            long double s = 0;
            for (std::size_t k = 0; k < b.size(); ++k) s += static_cast<long double>(a[i][k]) * b[k][j];
            c[i][j] = static_cast<double>(s);
        }
    return c;
}

// x W + b, row by row.
inline Mat affine(const Mat& x, const Mat& w, const Vec& b) {
    Mat y = matmul(x, w);
    for (auto& row : y)
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
    return y;
}

// softmax(Q K^T / sqrt(d_k)) V, evaluated term by term.
inline Mat attention(const Mat& q, const Mat& k, const Mat& v) {
    const double dk = static_cast<double>(k[0].size());
    Mat out(q.size(), Vec(v[0].size(), 0.0));
    for (std::size_t i = 0; i < q.size(); ++i) {
        Vec logits(k.size());
        for (std::size_t j = 0; j < k.size(); ++j) logits[j] = dot(q[i], k[j]) / std::sqrt(dk);
        Vec w = softmax(logits);
        for (std::size_t j = 0; j < k.size(); ++j)
            for (std::size_t c = 0; c < v[0].size(); ++c) out[i][c] += w[j] * v[j][c];
    }
    return out;
}

// -log[ exp(pos/tau) / (exp(pos/tau) + sum_neg exp(neg/tau)) ] via long double.
inline double info_nce_term(double pos, const Vec& negs, double tau) {
    long double mx = pos / tau;
    for (double n : negs) mx = std::max<long double>(mx, n / tau);
    long double z = std::exp(static_cast<long double>(pos) / tau - mx);
    for (double n : negs) z += std::exp(static_cast<long double>(n) / tau - mx);
    return static_cast<double>(-(static_cast<long double>(pos) / tau - mx - std::log(z)));
}

// Cross-contrastive loss averaged over the batch: positives d1_i.d2_i,
// negatives d1_i.d1_j (j != i).
inline double cross_contrastive(const Mat& d1, const Mat& d2, double tau) {
    double total = 0;
    for (std::size_t i = 0; i < d1.size(); ++i) {
        Vec negs;
        for (std::size_t j = 0; j < d1.size(); ++j)
            if (j != i) negs.push_back(dot(d1[i], d1[j]));
        total += info_nce_term(dot(d1[i], d2[i]), negs, tau);
    }
    return total / static_cast<double>(d1.size());
}

// Self-contrastive loss: positives d_i.v_i, negatives d_i.d_j (j != i).
inline double self_contrastive(const Mat& d, const Mat& v, double tau) {
    double total = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        Vec negs;
        for (std::size_t j = 0; j < d.size(); ++j)
            if (j != i) negs.push_back(dot(d[i], d[j]));
        total += info_nce_term(dot(d[i], v[i]), negs, tau);
    }
    return total / static_cast<double>(d.size());
}

// Centered finite-difference gradient of f at x.
inline Tensor fd_gradient(const std::function<double(const Tensor&)>& f, Tensor x, double h = 1e-5) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

inline double max_rel_error(const Tensor& a, const Tensor& b, double floor = 1e-8) {
    double worst = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / d);
    }
    return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

}  // namespace oracle
