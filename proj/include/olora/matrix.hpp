#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace olora {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class RankError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class RangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ProtocolError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class CompareError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles: the only numeric carrier in the library.
class Matrix {
public:
    Matrix() = default;

    Matrix(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(check_dims(rows, cols)), fill) {}

    static Matrix zeros(int rows, int cols) { return Matrix(rows, cols, 0.0); }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const int r = static_cast<int>(rows.size());
        const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
        Matrix m(r, c);
        int i = 0;
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != c) {
                throw ShapeError("from_rows: ragged row " + std::to_string(i));
            }
            int j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
    double operator()(int i, int j) const { return data_[static_cast<std::size_t>(i) * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

    Matrix& operator+=(const Matrix& o) {
        require_same_shape(o, "operator+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    Matrix& operator-=(const Matrix& o) {
        require_same_shape(o, "operator-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }

    Matrix& operator*=(double c) {
        for (double& v : data_) v *= c;
        return *this;
    }

    void fill(double v) { data_.assign(data_.size(), v); }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    static long long check_dims(int rows, int cols) {
        if (rows <= 0 || cols <= 0) {
            throw ShapeError("matrix dimensions must be positive, got " + std::to_string(rows) +
                             "x" + std::to_string(cols));
        }
        return static_cast<long long>(rows) * cols;
    }

    void require_same_shape(const Matrix& o, const char* op) const {
        if (!same_shape(o)) {
            throw ShapeError(std::string(op) + ": shapes differ (" + shape_str() + " vs " +
                             o.shape_str() + ")");
        }
    }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions do not match (" + a.shape_str() + " vs " +
                         b.shape_str() + ")");
    }
    Matrix out(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        double* out_row = out.data() + static_cast<std::size_t>(i) * out.cols();
        for (int k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* b_row = b.data() + static_cast<std::size_t>(k) * b.cols();
            for (int j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    Matrix out = a;
    out += b;
    return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    Matrix out = a;
    out -= b;
    return out;
}

inline Matrix mul(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("mul: shapes differ (" + a.shape_str() + " vs " + b.shape_str() + ")");
    }
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
    return out;
}

inline Matrix scale(const Matrix& a, double c) {
    Matrix out = a;
    out *= c;
    return out;
}

inline Matrix relu(const Matrix& a) {
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (out.data()[i] < 0.0) out.data()[i] = 0.0;
    return out;
}

/// Numerically stabilized softmax over each row (per-row max subtraction).
inline Matrix row_softmax(const Matrix& a) {
    Matrix out(a.rows(), a.cols());
    for (int i = 0; i < a.rows(); ++i) {
        double mx = a(i, 0);
        for (int j = 1; j < a.cols(); ++j) mx = std::max(mx, a(i, j));
        double sum = 0.0;
        for (int j = 0; j < a.cols(); ++j) {
            const double e = std::exp(a(i, j) - mx);
            out(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < a.cols(); ++j) out(i, j) /= sum;
    }
    return out;
}

inline double frobenius_sq(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * a.data()[i];
    return s;
}

/// Scales column k of `m` by `row(0, k)`.
inline Matrix col_scale(const Matrix& m, const Matrix& row) {
    if (row.rows() != 1 || row.cols() != m.cols()) {
        throw ShapeError("col_scale: scaler must be 1x" + std::to_string(m.cols()) + ", got " +
                         row.shape_str());
    }
    Matrix out = m;
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) out(i, j) *= row(0, j);
    return out;
}

/// Adds `row` to every row of `m`.
inline Matrix add_row(const Matrix& m, const Matrix& row) {
    if (row.rows() != 1 || row.cols() != m.cols()) {
        throw ShapeError("add_row: bias must be 1x" + std::to_string(m.cols()) + ", got " +
                         row.shape_str());
    }
    Matrix out = m;
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) out(i, j) += row(0, j);
    return out;
}

inline bool all_finite(const Matrix& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) s += m.data()[i];
    return std::isfinite(s);
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("max_abs_diff: shapes differ (" + a.shape_str() + " vs " + b.shape_str() +
                         ")");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    return m;
}

/// FNV-1a over the raw byte representation; used for frozen-weight audits.
inline std::uint64_t checksum(const Matrix& m) {
    std::uint64_t h = 1469598103934665603ull;
    const auto* p = reinterpret_cast<const unsigned char*>(m.data());
    for (std::size_t i = 0; i < m.size() * sizeof(double); ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace olora
