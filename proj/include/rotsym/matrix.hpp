#pragma once

#include <cstddef>
#include <vector>

namespace rotsym {

// Dense row-major matrix of doubles. Row vectors are 1 x n matrices.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    bool all_finite() const;

    Matrix transposed() const;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

// a * b
Matrix operator*(const Matrix& a, const Matrix& b);
// a * b^T without forming the transpose
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// a^T * b without forming the transpose
Matrix matmul_tn(const Matrix& a, const Matrix& b);

// Frobenius inner product and norm.
double dot(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

// Permutation of n indices; map[i] is where slot i is sent.
struct Permutation {
    std::vector<std::size_t> map;

    static Permutation identity(std::size_t n);

    std::size_t size() const { return map.size(); }
    bool is_valid() const;
    Permutation inverse() const;
    // Composition: applying *this first, then next.
    Permutation then(const Permutation& next) const;
};

} // namespace rotsym
