#include "prism/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace prism::linalg {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw LinalgError("matrix data length " + std::to_string(data_.size()) +
                          " does not match " + std::to_string(rows_) + "x" +
                          std::to_string(cols_));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

std::vector<double> Matrix::column(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
    return t;
}

Matrix multiply(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw LinalgError("multiply: inner dimensions differ (" + std::to_string(a.cols()) +
                          " vs " + std::to_string(b.rows()) + ")");
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto dst = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            auto src = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
        }
    }
    return out;
}

Matrix multiply_at_b(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw LinalgError("multiply_at_b: row counts differ (" + std::to_string(a.rows()) +
                          " vs " + std::to_string(b.rows()) + ")");
    }
    Matrix out(a.cols(), b.cols());
    for (std::size_t n = 0; n < a.rows(); ++n) {
        auto ar = a.row(n);
        auto br = b.row(n);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double ai = ar[i];
            if (ai == 0.0) continue;
            auto dst = out.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += ai * br[j];
        }
    }
    return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw LinalgError("subtract: shape mismatch");
    }
    Matrix out = a;
    auto d = out.data();
    auto s = b.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= s[i];
    return out;
}

Matrix scale(const Matrix& m, double s) {
    Matrix out = m;
    for (double& x : out.data()) x *= s;
    return out;
}

std::vector<double> multiply(const Matrix& m, std::span<const double> x) {
    if (m.cols() != x.size()) throw LinalgError("matrix-vector: dimension mismatch");
    std::vector<double> out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(m.row(r), x);
    return out;
}

double max_abs(const Matrix& m) {
    double best = 0.0;
    for (double x : m.data()) best = std::max(best, std::abs(x));
    return best;
}

double frobenius_norm(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data()) s += x * x;
    return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

namespace {

constexpr int kMaxSweeps = 60;

// Rotates rows p and q of m: (p, q) <- (c·p − s·q, s·p + c·q).
void rotate_rows(Matrix& m, std::size_t p, std::size_t q, double c, double s) {
    auto rp = m.row(p);
    auto rq = m.row(q);
    for (std::size_t i = 0; i < rp.size(); ++i) {
        const double xp = rp[i];
        const double xq = rq[i];
        rp[i] = c * xp - s * xq;
        rq[i] = s * xp + c * xq;
    }
}

// Fills `target` with a unit vector orthogonal to every row of `basis` among
// `used`, picking the standard basis vector with the largest residual.
void complete_orthonormal(std::span<double> target, const Matrix& basis,
                          const std::vector<std::size_t>& used) {
    const std::size_t d = target.size();
    // Pick the standard basis vector with the largest residual, 1 − Σ b[e]².
    std::size_t pick = 0;
    double best = -1.0;
    for (std::size_t e = 0; e < d; ++e) {
        double lev = 0.0;
        for (std::size_t r : used) lev += basis(r, e) * basis(r, e);
        const double res = 1.0 - lev;
        if (res > best + 1e-12) {
            best = res;
            pick = e;
        }
    }
    std::vector<double> cand(d, 0.0);
    cand[pick] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t r : used) {
            auto b = basis.row(r);
            const double proj = dot(cand, b);
            for (std::size_t i = 0; i < d; ++i) cand[i] -= proj * b[i];
        }
    }
    const double n = norm(cand);
    for (std::size_t i = 0; i < d; ++i) target[i] = cand[i] / n;
}

}  // namespace

SvdResult svd(const Matrix& m) {
    if (!m.square()) {
        throw LinalgError("svd: matrix must be square, got " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()));
    }
    if (m.rows() == 0) throw LinalgError("svd: empty matrix");
    if (!m.all_finite()) throw LinalgError("svd: matrix has non-finite entries");

    const std::size_t d = m.rows();
    // Work on columns as contiguous rows.
    Matrix a = transpose(m);
    Matrix v = Matrix::identity(d);
    const double tol = std::numeric_limits<double>::epsilon() * static_cast<double>(d);
    // Columns below this squared norm are numerical zeros; rotating them
    // against each other only shuffles rounding noise and stalls convergence.
    const double zero_cut = tol * frobenius_norm(m);
    const double negligible = zero_cut * zero_cut;

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < d; ++p) {
            for (std::size_t q = p + 1; q < d; ++q) {
                const double alpha = dot(a.row(p), a.row(p));
                const double beta = dot(a.row(q), a.row(q));
                const double gamma = dot(a.row(p), a.row(q));
                if (gamma == 0.0 || alpha <= negligible || beta <= negligible) continue;
                if (std::abs(gamma) <= tol * std::sqrt(alpha) * std::sqrt(beta)) continue;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                rotate_rows(a, p, q, c, s);
                rotate_rows(v, p, q, c, s);
                rotated = true;
            }
        }
        if (!rotated) break;
    }

    std::vector<double> norms(d);
    for (std::size_t j = 0; j < d; ++j) norms[j] = norm(a.row(j));
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });


    Matrix ut(d, d);  // row j = left singular vector j
    Matrix vt(d, d);
    std::vector<double> sigma(d);
    std::vector<std::size_t> filled;
    std::vector<std::size_t> pending;
    for (std::size_t j = 0; j < d; ++j) {
        const std::size_t src = order[j];
        sigma[j] = norms[src];
        std::copy(v.row(src).begin(), v.row(src).end(), vt.row(j).begin());
        if (sigma[j] > zero_cut && sigma[j] > 0.0) {
            auto dst = ut.row(j);
            auto col = a.row(src);
            for (std::size_t i = 0; i < d; ++i) dst[i] = col[i] / sigma[j];
            filled.push_back(j);
        } else {
            pending.push_back(j);
        }
    }
    for (std::size_t j : pending) {
        complete_orthonormal(ut.row(j), ut, filled);
        filled.push_back(j);
    }

    for (std::size_t j = 0; j < d; ++j) {
        auto u = ut.row(j);
        std::size_t arg = 0;
        for (std::size_t i = 1; i < d; ++i)
            if (std::abs(u[i]) > std::abs(u[arg])) arg = i;
        if (u[arg] < 0.0) {
            for (double& x : u) x = -x;
            for (double& x : vt.row(j)) x = -x;
        }
    }

    return SvdResult{transpose(ut), std::move(sigma), transpose(vt)};
}

const char* to_string(EnergyDefinition e) {
    return e == EnergyDefinition::FirstPower ? "first-power" : "squared";
}

EnergyDefinition energy_from_string(const std::string& s) {
    if (s == "first-power" || s == "first") return EnergyDefinition::FirstPower;
    if (s == "squared") return EnergyDefinition::Squared;
    throw std::invalid_argument("unknown energy definition: " + s);
}

std::size_t rank_by_energy(std::span<const double> sigma, double gamma, EnergyDefinition energy) {
    if (!(gamma > 0.0 && gamma <= 1.0)) {
        throw LinalgError("rank_by_energy: gamma must lie in (0, 1], got " + std::to_string(gamma));
    }
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        if (!(sigma[i] >= 0.0)) throw LinalgError("rank_by_energy: negative or NaN singular value");
        if (i > 0 && sigma[i] > sigma[i - 1]) {
            throw LinalgError("rank_by_energy: singular values must be non-increasing");
        }
    }
    auto term = [energy](double s) { return energy == EnergyDefinition::Squared ? s * s : s; };
    double total = 0.0;
    for (double s : sigma) total += term(s);
    if (total == 0.0) return 0;
    double cumulative = 0.0;
    for (std::size_t k = 0; k < sigma.size(); ++k) {
        cumulative += term(sigma[k]);
        if (cumulative / total >= gamma) return k + 1;
    }
    return sigma.size();
}

OrthonormalBasis::OrthonormalBasis(std::size_t dim) : dim_(dim), vectors_(0, dim) {}

OrthonormalBasis::OrthonormalBasis(std::size_t dim, Matrix vectors)
    : dim_(dim), vectors_(std::move(vectors)) {
    if (vectors_.rows() > 0 && vectors_.cols() != dim_) {
        throw LinalgError("basis vectors have dimension " + std::to_string(vectors_.cols()) +
                          ", expected " + std::to_string(dim_));
    }
    if (vectors_.rows() > dim_) throw LinalgError("basis rank exceeds dimension");
    if (vectors_.rows() == 0) vectors_ = Matrix(0, dim_);
}

Matrix OrthonormalBasis::columns() const { return transpose(vectors_); }

Matrix OrthonormalBasis::projector() const { return multiply_at_b(vectors_, vectors_); }

std::vector<double> OrthonormalBasis::project(std::span<const double> x) const {
    if (x.size() != dim_) throw LinalgError("project: dimension mismatch");
    std::vector<double> out(dim_, 0.0);
    for (std::size_t i = 0; i < rank(); ++i) {
        auto b = vectors_.row(i);
        const double c = dot(b, x);
        for (std::size_t j = 0; j < dim_; ++j) out[j] += c * b[j];
    }
    return out;
}

double OrthonormalBasis::orthonormality_error() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < rank(); ++i) {
        for (std::size_t j = i; j < rank(); ++j) {
            const double g = dot(vectors_.row(i), vectors_.row(j));
            worst = std::max(worst, std::abs(g - (i == j ? 1.0 : 0.0)));
        }
    }
    return worst;
}

OrthonormalBasis build_projection(const SvdResult& svd, double gamma, EnergyDefinition energy) {
    const std::size_t k = rank_by_energy(svd.sigma, gamma, energy);
    const std::size_t d = svd.u.rows();
    Matrix vectors(k, d);
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t i = 0; i < d; ++i) vectors(j, i) = svd.u(i, j);
    return OrthonormalBasis(d, std::move(vectors));
}

double mean_abs_cosine(std::span<const std::vector<double>> directions) {
    if (directions.size() < 2) throw LinalgError("mean_abs_cosine: need at least two vectors");
    const std::size_t d = directions.front().size();
    for (const auto& u : directions) {
        if (u.size() != d) throw LinalgError("mean_abs_cosine: dimension mismatch");
        const double n = norm(u);
        if (n == 0.0) throw LinalgError("mean_abs_cosine: zero vector");
        if (std::abs(n - 1.0) > 1e-9) throw LinalgError("mean_abs_cosine: vector is not unit-norm");
    }
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < directions.size(); ++i) {
        for (std::size_t j = i + 1; j < directions.size(); ++j) {
            sum += std::abs(dot(directions[i], directions[j]));
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

}  // namespace prism::linalg
