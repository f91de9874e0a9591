#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace prism::linalg {

class LinalgError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Dense row-major matrix of doubles. Dimensions here are small (d <= 256),
// so everything is plain loops over a contiguous buffer.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }
    bool square() const { return rows_ == cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::vector<double> column(std::size_t c) const;

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    bool all_finite() const;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix transpose(const Matrix& m);
Matrix multiply(const Matrix& a, const Matrix& b);
// aᵀ·b without materializing the transpose.
Matrix multiply_at_b(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);
std::vector<double> multiply(const Matrix& m, std::span<const double> x);

double max_abs(const Matrix& m);
double frobenius_norm(const Matrix& m);
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> x);

// M = U · diag(sigma) · Vᵀ, all d×d.
struct SvdResult {
    Matrix u;
    std::vector<double> sigma;
    Matrix v;
};

// One-sided Jacobi SVD of a square matrix. Deterministic for identical input
// bits; the largest-magnitude entry of every left singular vector is positive.
SvdResult svd(const Matrix& m);

enum class EnergyDefinition { FirstPower, Squared };

const char* to_string(EnergyDefinition e);
EnergyDefinition energy_from_string(const std::string& s);

// Smallest k with cumulative energy ratio >= gamma. All-zero sigma gives 0.
std::size_t rank_by_energy(std::span<const double> sigma, double gamma,
                           EnergyDefinition energy = EnergyDefinition::FirstPower);

// k orthonormal vectors in R^d. Stored one vector per row so that each
// basis vector is contiguous; columns() returns the d×k view.
class OrthonormalBasis {
public:
    OrthonormalBasis() = default;
    explicit OrthonormalBasis(std::size_t dim);  // rank 0
    OrthonormalBasis(std::size_t dim, Matrix vectors);  // vectors: k×d

    std::size_t dim() const { return dim_; }
    std::size_t rank() const { return vectors_.rows(); }

    std::span<const double> vector(std::size_t i) const { return vectors_.row(i); }
    const Matrix& vectors() const { return vectors_; }
    Matrix columns() const;  // d×k
    Matrix projector() const;  // d×d, B·Bᵀ

    // B·(Bᵀ·x)
    std::vector<double> project(std::span<const double> x) const;

    // max |BᵀB − I|
    double orthonormality_error() const;

    friend bool operator==(const OrthonormalBasis&, const OrthonormalBasis&) = default;

private:
    std::size_t dim_ = 0;
    Matrix vectors_{0, 0};
};

OrthonormalBasis build_projection(const SvdResult& svd, double gamma,
                                  EnergyDefinition energy = EnergyDefinition::FirstPower);

// Mean |cos| over all unordered pairs. Inputs must be unit vectors.
double mean_abs_cosine(std::span<const std::vector<double>> directions);

}  // namespace prism::linalg
