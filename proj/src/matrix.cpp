#include "attnlab/matrix.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace attnlab {

Matrix gaussian_matrix(std::int64_t rows, std::int64_t cols, Rng& rng, double scale) {
    Matrix m(rows, cols);
    for (auto& v : m.data) v = rng.next_gaussian() * scale;
    return m;
}

namespace {

void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace

void write_matrix_binary(const std::string& path, const Matrix& m) {
    std::string buf;
    buf.reserve(8 + m.data.size() * 4);
    put_u32_le(buf, static_cast<std::uint32_t>(m.rows));
    put_u32_le(buf, static_cast<std::uint32_t>(m.cols));
    for (double v : m.data) {
        put_u32_le(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("short write: " + path);
}

Matrix read_matrix_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8) throw std::runtime_error("matrix file too short: " + path);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    const std::uint32_t rows = get_u32_le(p);
    const std::uint32_t cols = get_u32_le(p + 4);
    const std::size_t need = 8 + static_cast<std::size_t>(rows) * cols * 4;
    if (buf.size() != need) throw std::runtime_error("matrix payload size mismatch: " + path);
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        m.data[i] = static_cast<double>(
            std::bit_cast<float>(get_u32_le(p + 8 + i * 4)));
    }
    return m;
}

void write_matrix_csv(const std::string& path, const Matrix& m) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    char num[64];
    for (std::int64_t r = 0; r < m.rows; ++r) {
        for (std::int64_t c = 0; c < m.cols; ++c) {
            std::snprintf(num, sizeof(num), "%.17g", m.at(r, c));
            f << num << (c + 1 < m.cols ? "," : "\n");
        }
    }
}

Matrix read_matrix_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw std::runtime_error("ragged CSV rows in " + path);
        }
        rows.push_back(std::move(row));
    }
    Matrix m(static_cast<std::int64_t>(rows.size()),
             rows.empty() ? 0 : static_cast<std::int64_t>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            m.at(static_cast<std::int64_t>(r), static_cast<std::int64_t>(c)) = rows[r][c];
        }
    }
    return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    }
    return m;
}

double max_abs(const Matrix& m) {
    double v = 0.0;
    for (double x : m.data) v = std::max(v, std::fabs(x));
    return v;
}

} // namespace attnlab
