// Dense row-major matrix of doubles plus the handful of BLAS-ish kernels
// the rest of the library is built on.
#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace m2spe {

struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {
        if (r < 0 || c < 0) throw std::invalid_argument("Matrix: negative dimension");
    }

    static Matrix zeros(int r, int c) { return Matrix(r, c); }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix full(int r, int c, double v) {
        Matrix m(r, c);
        for (double& x : m.data) x = v;
        return m;
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rs) {
        const int r = static_cast<int>(rs.size());
        const int c = r > 0 ? static_cast<int>(rs.begin()->size()) : 0;
        Matrix m(r, c);
        int i = 0;
        for (const auto& row : rs) {
            if (static_cast<int>(row.size()) != c) throw std::invalid_argument("from_rows: ragged rows");
            int j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    static Matrix row_vector(std::initializer_list<double> vs) {
        Matrix m(1, static_cast<int>(vs.size()));
        int j = 0;
        for (double v : vs) m(0, j++) = v;
        return m;
    }

    double& operator()(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    double* row_ptr(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const double* row_ptr(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                                    std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                                    std::to_string(b.cols) + ")");
}

// C += A * B
inline void add_mm(Matrix& c, const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols)
        throw std::invalid_argument("add_mm: dimension mismatch");
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* crow = c.row_ptr(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.row_ptr(k);
            for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
}

// C += A * B^T
inline void add_mm_nt(Matrix& c, const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols || c.rows != a.rows || c.cols != b.rows)
        throw std::invalid_argument("add_mm_nt: dimension mismatch");
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* crow = c.row_ptr(i);
        for (int j = 0; j < b.rows; ++j) {
            const double* brow = b.row_ptr(j);
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            crow[j] += acc;
        }
    }
}

// C += A^T * B
inline void add_mm_tn(Matrix& c, const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols)
        throw std::invalid_argument("add_mm_tn: dimension mismatch");
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        const double* brow = b.row_ptr(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            double* crow = c.row_ptr(k);
            for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
}

inline Matrix mm(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("mm: inner dimensions disagree");
    Matrix c(a.rows, b.cols);
    add_mm(c, a, b);
    return c;
}

inline Matrix mm_nt(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.rows);
    add_mm_nt(c, a, b);
    return c;
}

inline void add_in_place(Matrix& dst, const Matrix& src) {
    check_same_shape(dst, src, "add_in_place");
    for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

inline void add_scaled(Matrix& dst, double alpha, const Matrix& src) {
    check_same_shape(dst, src, "add_scaled");
    for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += alpha * src.data[i];
}

inline void scale_in_place(Matrix& m, double alpha) {
    for (double& v : m.data) v *= alpha;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    check_same_shape(a, b, "hadamard");
    Matrix c(a.rows, a.cols);
    for (size_t i = 0; i < a.size(); ++i) c.data[i] = a.data[i] * b.data[i];
    return c;
}

inline double dot_flat(const Matrix& a, const Matrix& b) {
    check_same_shape(a, b, "dot_flat");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a.data[i] * b.data[i];
    return acc;
}

inline double dot_span(const double* a, const double* b, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace m2spe
