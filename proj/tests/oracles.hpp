#pragma once

// Reference computations that share no code with the library under test.
// Plain std::vector storage on purpose.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;  // row-major, rows of equal length

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, std::vector<double>(c, 0.0)); }

inline Mat transpose(const Mat& a) {
    Mat t = zeros(a.empty() ? 0 : a[0].size(), a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) t[j][i] = a[i][j];
    return t;
}

inline Mat matmul(const Mat& a, const Mat& b) {
    const std::size_t n = a.size(), m = b[0].size(), k = b.size();
    Mat c = zeros(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < m; ++j) c[i][j] += a[i][p] * b[p][j];
    return c;
}

// Classic two-sided cyclic Jacobi for a symmetric matrix; eigenvalues sorted
// descending.
inline std::vector<double> symmetric_eigenvalues(Mat a) {
    const std::size_t n = a.size();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0, total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                total += a[i][j] * a[i][j];
                if (i != j) off += a[i][j] * a[i][j];
            }
        if (off <= 1e-30 * total || off == 0.0) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a[p][q] == 0.0) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
    std::sort(ev.begin(), ev.end(), std::greater<>());
    return ev;
}

// σᵢ = √eigᵢ(MᵀM)
inline std::vector<double> singular_values(const Mat& m) {
    auto ev = symmetric_eigenvalues(matmul(transpose(m), m));
    for (double& x : ev) x = std::sqrt(std::max(0.0, x));
    return ev;
}

// (1/N) Σᵢ hᵢ h′ᵢᵀ
inline Mat outer_product_mean(const Mat& h, const Mat& hp) {
    const std::size_t n = h.size(), d = h[0].size();
    Mat out = zeros(d, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) out[i][j] += h[r][i] * hp[r][j];
    for (auto& row : out)
        for (double& x : row) x /= static_cast<double>(n);
    return out;
}

inline Mat gaussian(std::mt19937_64& rng, std::size_t r, std::size_t c) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Mat m = zeros(r, c);
    for (auto& row : m)
        for (double& x : row) x = nd(rng);
    return m;
}

// k orthonormal columns (returned as k rows of length d) by modified
// Gram-Schmidt on Gaussian draws.
inline Mat random_orthonormal_rows(std::mt19937_64& rng, std::size_t d, std::size_t k) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Mat q;
    while (q.size() < k) {
        std::vector<double> v(d);
        for (double& x : v) x = nd(rng);
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& b : q) {
                double p = 0.0;
                for (std::size_t i = 0; i < d; ++i) p += b[i] * v[i];
                for (std::size_t i = 0; i < d; ++i) v[i] -= p * b[i];
            }
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n < 1e-8) continue;
        for (double& x : v) x /= n;
        q.push_back(std::move(v));
    }
    return q;
}

// ‖QᵀΩ‖_F² with Q given as k rows of length d.
inline double captured_energy(const Mat& q_rows, const Mat& omega) {
    double s = 0.0;
    const std::size_t d = omega.size();
    for (const auto& qr : q_rows)
        for (std::size_t j = 0; j < d; ++j) {
            double v = 0.0;
            for (std::size_t i = 0; i < d; ++i) v += qr[i] * omega[i][j];
            s += v * v;
        }
    return s;
}

// Mean |cos| over independent Gaussian direction pairs.
inline double mc_abs_cosine(std::size_t dim, std::size_t pairs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    double total = 0.0;
    std::vector<double> a(dim), b(dim);
    for (std::size_t p = 0; p < pairs; ++p) {
        double ab = 0, aa = 0, bb = 0;
        for (std::size_t i = 0; i < dim; ++i) {
            a[i] = nd(rng);
            b[i] = nd(rng);
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
        total += std::abs(ab) / std::sqrt(aa * bb);
    }
    return total / static_cast<double>(pairs);
}

}  // namespace oracle
