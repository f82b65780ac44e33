#pragma once

// Dense real arithmetic for the tiny square systems (d <= 8) that appear in
// closed-form linear ODE solutions. Storage is row-major.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace ldm::linalg {

inline constexpr double kSingularDetFloor = 1e-12;

class SmallVector {
public:
    SmallVector() = default;
    explicit SmallVector(std::size_t dim, double fill = 0.0) : v_(dim, fill) {}
    SmallVector(std::initializer_list<double> init) : v_(init) {}
    explicit SmallVector(std::vector<double> values) : v_(std::move(values)) {}

    std::size_t dim() const noexcept { return v_.size(); }
    double& operator[](std::size_t i) { return v_[i]; }
    double operator[](std::size_t i) const { return v_[i]; }
    std::span<const double> values() const noexcept { return v_; }
    const std::vector<double>& std() const noexcept { return v_; }
    auto begin() const noexcept { return v_.begin(); }
    auto end() const noexcept { return v_.end(); }
    auto begin() noexcept { return v_.begin(); }
    auto end() noexcept { return v_.end(); }

    bool all_finite() const noexcept;
    bool operator==(const SmallVector&) const = default;

private:
    std::vector<double> v_;
};

class SmallMatrix {
public:
    SmallMatrix() = default;
    explicit SmallMatrix(std::size_t dim, double fill = 0.0);
    // Row-major nested initializer: {{a, b}, {c, d}}.
    SmallMatrix(std::initializer_list<std::initializer_list<double>> rows);
    SmallMatrix(std::size_t dim, std::vector<double> row_major);

    static SmallMatrix identity(std::size_t dim);
    static SmallMatrix diagonal(const SmallVector& diag);

    std::size_t dim() const noexcept { return n_; }
    double& operator()(std::size_t r, std::size_t c) { return a_[r * n_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return a_[r * n_ + c]; }
    std::span<const double> row_major() const noexcept { return a_; }

    bool all_finite() const noexcept;
    double max_abs() const noexcept;
    // Maximum absolute row sum.
    double norm_inf() const noexcept;
    SmallMatrix transposed() const;

    bool operator==(const SmallMatrix&) const = default;

private:
    std::size_t n_ = 0;
    std::vector<double> a_;
};

SmallMatrix operator*(const SmallMatrix& a, const SmallMatrix& b);
SmallVector operator*(const SmallMatrix& a, const SmallVector& x);
SmallMatrix operator+(const SmallMatrix& a, const SmallMatrix& b);
SmallMatrix operator-(const SmallMatrix& a, const SmallMatrix& b);
SmallMatrix operator*(double s, const SmallMatrix& a);
SmallVector operator+(const SmallVector& a, const SmallVector& b);
SmallVector operator-(const SmallVector& a, const SmallVector& b);
SmallVector operator*(double s, const SmallVector& a);

// exp(a * s) by scaling and squaring with a truncated Taylor series.
SmallMatrix mat_exp(const SmallMatrix& a, double s = 1.0);

// Throws SingularMatrixError when |det a| < det_floor.
SmallMatrix mat_inv(const SmallMatrix& a, double det_floor = kSingularDetFloor);

double determinant(const SmallMatrix& a);

double max_abs_diff(const SmallMatrix& a, const SmallMatrix& b);
double max_abs_diff(const SmallVector& a, const SmallVector& b);

}  // namespace ldm::linalg
