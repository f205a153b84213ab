#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnlab/util.hpp"

namespace attnlab {

/// Dense row-major matrix of doubles. Small and boring on purpose: the
/// interesting precision behavior lives in the algorithms, not the storage.
struct Matrix {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::int64_t r, std::int64_t c)
        : rows(r), cols(c), data(static_cast<std::size_t>(r * c), 0.0) {
        if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative shape");
    }

    double& at(std::int64_t r, std::int64_t c) {
        return data[static_cast<std::size_t>(r * cols + c)];
    }
    double at(std::int64_t r, std::int64_t c) const {
        return data[static_cast<std::size_t>(r * cols + c)];
    }
    const double* row(std::int64_t r) const { return data.data() + r * cols; }
    double* row(std::int64_t r) { return data.data() + r * cols; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

Matrix gaussian_matrix(std::int64_t rows, std::int64_t cols, Rng& rng, double scale = 1.0);

/// Binary layout: 8-byte header of two little-endian uint32 (rows, cols),
/// then row-major little-endian IEEE float32 payload.
void write_matrix_binary(const std::string& path, const Matrix& m);
Matrix read_matrix_binary(const std::string& path);

void write_matrix_csv(const std::string& path, const Matrix& m);
Matrix read_matrix_csv(const std::string& path);

double max_abs_diff(const Matrix& a, const Matrix& b);
double max_abs(const Matrix& m);

} // namespace attnlab
