#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ttpf/error.hpp"

namespace ttpf {

using Vec = std::vector<double>;

/// Dense row-major matrix. Only the shapes this pipeline needs; no broadcasting.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        require(data_.size() == rows_ * cols_, ErrorKind::Shape, "matrix data size does not match shape");
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    const std::vector<double>& data() const noexcept { return data_; }
    std::vector<double>& data() noexcept { return data_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Softmax temperature; always strictly positive.
class Temperature {
public:
    explicit Temperature(double tau) : tau_(tau) {
        require(std::isfinite(tau) && tau > 0.0, ErrorKind::Range, "temperature must be positive");
    }
    double value() const noexcept { return tau_; }
    friend bool operator==(const Temperature&, const Temperature&) = default;

private:
    double tau_;
};

/// Unit-norm embedding. Only `l2_normalize` and the encoders construct one.
class FeatureVector {
public:
    FeatureVector() = default;

    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const noexcept { return values_[i]; }
    std::span<const double> values() const noexcept { return values_; }
    operator std::span<const double>() const noexcept { return values_; }

    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
    friend FeatureVector l2_normalize(std::span<const double> v);

private:
    explicit FeatureVector(Vec values) : values_(std::move(values)) {}
    Vec values_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), ErrorKind::Shape, "dot: dimension mismatch");
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline FeatureVector l2_normalize(std::span<const double> v) {
    require(!v.empty(), ErrorKind::Shape, "l2_normalize: empty vector");
    const double n = norm2(v);
    require(n > 0.0, ErrorKind::DegenerateInput, "l2_normalize: zero vector");
    require(std::isfinite(n), ErrorKind::Numeric, "l2_normalize: non-finite component");
    Vec out(v.begin(), v.end());
    for (double& x : out) x /= n;
    return FeatureVector(std::move(out));
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), ErrorKind::Shape, "cosine_similarity: dimension mismatch");
    const double na = norm2(a);
    const double nb = norm2(b);
    require(na > 0.0 && nb > 0.0, ErrorKind::DegenerateInput, "cosine_similarity: zero vector");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// softmax(logits / tau), evaluated with the running maximum subtracted.
inline Vec softmax_with_temperature(std::span<const double> logits, Temperature tau) {
    require(!logits.empty(), ErrorKind::Shape, "softmax: empty input");
    for (double x : logits) require(std::isfinite(x), ErrorKind::Numeric, "softmax: non-finite logit");
    const double peak = *std::max_element(logits.begin(), logits.end());
    Vec out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - peak) / tau.value());
        total += out[i];
    }
    for (double& p : out) p /= total;
    return out;
}

inline std::size_t argmax(std::span<const double> v) {
    require(!v.empty(), ErrorKind::Shape, "argmax: empty input");
    return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

/// Harmonic mean of two percentages; H(0, 0) is 0.
inline double harmonic_mean(double base_acc, double new_acc) {
    auto in_range = [](double x) { return std::isfinite(x) && x >= 0.0 && x <= 100.0; };
    require(in_range(base_acc) && in_range(new_acc), ErrorKind::Range,
            "harmonic_mean: accuracies must lie in [0, 100]");
    if (base_acc + new_acc == 0.0) return 0.0;
    return 2.0 * base_acc * new_acc / (base_acc + new_acc);
}

/// Half-up rounding to one decimal, robust to binary representation of
/// values like 64.05.
inline double round_one_decimal(double x) {
    const double scaled = x * 10.0;
    const double nudged = scaled + (scaled >= 0 ? 1e-9 : -1e-9);
    return std::floor(nudged + 0.5) / 10.0;
}

inline std::string format_one_decimal(double x) {
    const double r = round_one_decimal(x);
    const long long tenths = std::llround(r * 10.0);
    const long long whole = tenths / 10;
    const long long frac = (tenths < 0 ? -tenths : tenths) % 10;
    std::string s = (tenths < 0 && whole == 0) ? "-0" : std::to_string(whole);
    return s + "." + std::to_string(frac);
}

} // namespace ttpf
