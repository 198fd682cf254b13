#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fpkit {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidInput : Error {
    using Error::Error;
};

struct InvalidParam : Error {
    using Error::Error;
};

struct MissingModelAccess : Error {
    using Error::Error;
};

/// Metric undefined because one of the two classes is empty. Callers that
/// assemble reports catch this and emit a null value, never a fabricated 0.5.
struct DegenerateLabels : Error {
    using Error::Error;
};

struct DivergedTraining : Error {
    int epoch;
    DivergedTraining(const std::string& msg, int epoch_) : Error(msg), epoch(epoch_) {}
};

struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Dense row-major matrix
// ---------------------------------------------------------------------------

class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Numeric helpers
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

/// log(sum(exp(x))) with max-subtraction.
inline double logsumexp(std::span<const double> x) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : x) m = std::max(m, v);
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

/// Linear-interpolation percentile over a copy of the data, pct in (0, 100].
inline double percentile(std::vector<double> values, double pct) {
    if (values.empty()) throw InvalidInput("percentile: empty sample");
    if (!(pct > 0.0 && pct <= 100.0)) throw InvalidParam("percentile: pct must be in (0, 100]");
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values.front();
    const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

/// Shortest decimal representation that round-trips to the exact double.
/// Keeps CSV output stable across runs.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline double mean_of(std::span<const double> x) {
    if (x.empty()) throw InvalidInput("mean of empty range");
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

}  // namespace fpkit
