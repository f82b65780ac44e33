#include "ldm/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ldm/errors.hpp"

namespace ldm::linalg {

namespace {

void require_same_dim(std::size_t a, std::size_t b, const char* op) {
    if (a != b) {
        std::ostringstream msg;
        msg << op << ": dimension mismatch (" << a << " vs " << b << ")";
        throw InvalidArgument(msg.str());
    }
}

}  // namespace

bool SmallVector::all_finite() const noexcept {
    return std::all_of(v_.begin(), v_.end(), [](double x) { return std::isfinite(x); });
}

SmallMatrix::SmallMatrix(std::size_t dim, double fill) : n_(dim), a_(dim * dim, fill) {}

SmallMatrix::SmallMatrix(std::initializer_list<std::initializer_list<double>> rows)
    : n_(rows.size()) {
    a_.reserve(n_ * n_);
    for (const auto& row : rows) {
        if (row.size() != n_) throw InvalidArgument("SmallMatrix: rows must form a square matrix");
        a_.insert(a_.end(), row.begin(), row.end());
    }
}

SmallMatrix::SmallMatrix(std::size_t dim, std::vector<double> row_major)
    : n_(dim), a_(std::move(row_major)) {
    if (a_.size() != n_ * n_) throw InvalidArgument("SmallMatrix: expected dim*dim entries");
}

SmallMatrix SmallMatrix::identity(std::size_t dim) {
    SmallMatrix m(dim);
    for (std::size_t i = 0; i < dim; ++i) m(i, i) = 1.0;
    return m;
}

SmallMatrix SmallMatrix::diagonal(const SmallVector& diag) {
    SmallMatrix m(diag.dim());
    for (std::size_t i = 0; i < diag.dim(); ++i) m(i, i) = diag[i];
    return m;
}

bool SmallMatrix::all_finite() const noexcept {
    return std::all_of(a_.begin(), a_.end(), [](double x) { return std::isfinite(x); });
}

double SmallMatrix::max_abs() const noexcept {
    double m = 0.0;
    for (double x : a_) m = std::max(m, std::abs(x));
    return m;
}

double SmallMatrix::norm_inf() const noexcept {
    double best = 0.0;
    for (std::size_t r = 0; r < n_; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < n_; ++c) s += std::abs((*this)(r, c));
        best = std::max(best, s);
    }
    return best;
}

SmallMatrix SmallMatrix::transposed() const {
    SmallMatrix t(n_);
    for (std::size_t r = 0; r < n_; ++r)
        for (std::size_t c = 0; c < n_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

SmallMatrix operator*(const SmallMatrix& a, const SmallMatrix& b) {
    require_same_dim(a.dim(), b.dim(), "matmul");
    const std::size_t n = a.dim();
    SmallMatrix out(n);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < n; ++k) {
            const double ark = a(r, k);
            for (std::size_t c = 0; c < n; ++c) out(r, c) += ark * b(k, c);
        }
    return out;
}

SmallVector operator*(const SmallMatrix& a, const SmallVector& x) {
    require_same_dim(a.dim(), x.dim(), "matvec");
    SmallVector out(a.dim());
    for (std::size_t r = 0; r < a.dim(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < a.dim(); ++c) s += a(r, c) * x[c];
        out[r] = s;
    }
    return out;
}

SmallMatrix operator+(const SmallMatrix& a, const SmallMatrix& b) {
    require_same_dim(a.dim(), b.dim(), "add");
    SmallMatrix out = a;
    for (std::size_t r = 0; r < a.dim(); ++r)
        for (std::size_t c = 0; c < a.dim(); ++c) out(r, c) += b(r, c);
    return out;
}

SmallMatrix operator-(const SmallMatrix& a, const SmallMatrix& b) { return a + (-1.0) * b; }

SmallMatrix operator*(double s, const SmallMatrix& a) {
    SmallMatrix out = a;
    for (std::size_t r = 0; r < a.dim(); ++r)
        for (std::size_t c = 0; c < a.dim(); ++c) out(r, c) *= s;
    return out;
}

SmallVector operator+(const SmallVector& a, const SmallVector& b) {
    require_same_dim(a.dim(), b.dim(), "add");
    SmallVector out = a;
    for (std::size_t i = 0; i < a.dim(); ++i) out[i] += b[i];
    return out;
}

SmallVector operator-(const SmallVector& a, const SmallVector& b) {
    require_same_dim(a.dim(), b.dim(), "subtract");
    SmallVector out = a;
    for (std::size_t i = 0; i < a.dim(); ++i) out[i] -= b[i];
    return out;
}

SmallVector operator*(double s, const SmallVector& a) {
    SmallVector out = a;
    for (auto& x : out) x *= s;
    return out;
}

SmallMatrix mat_exp(const SmallMatrix& a, double s) {
    if (!std::isfinite(s) || !a.all_finite()) throw InvalidArgument("mat_exp: non-finite input");
    const std::size_t n = a.dim();
    if (n == 0) throw InvalidArgument("mat_exp: empty matrix");

    SmallMatrix x = s * a;
    // Scale so that ||x||_inf <= 1/2; an 18-term Taylor series is then
    // accurate to well below double rounding.
    int squarings = 0;
    const double norm = x.norm_inf();
    if (norm > 0.5) {
        squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
        x = std::ldexp(1.0, -squarings) * x;
    }
    constexpr int kTerms = 18;
    const SmallMatrix eye = SmallMatrix::identity(n);
    // Horner: I + x(I + x/2(I + x/3(...)))
    SmallMatrix p = eye;
    for (int k = kTerms; k >= 1; --k) p = eye + (1.0 / k) * (x * p);
    for (int i = 0; i < squarings; ++i) p = p * p;
    if (!p.all_finite()) throw NonFiniteError("mat_exp", "mat_exp: result overflowed");
    return p;
}

namespace {

// LU with partial pivoting, in place. Returns the determinant.
double lu_decompose(std::vector<double>& lu, std::vector<std::size_t>& perm, std::size_t n) {
    perm.resize(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    double det = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t p = k;
        double best = std::abs(lu[k * n + k]);
        for (std::size_t r = k + 1; r < n; ++r)
            if (std::abs(lu[r * n + k]) > best) best = std::abs(lu[r * n + k]), p = r;
        if (best == 0.0) return 0.0;
        if (p != k) {
            for (std::size_t c = 0; c < n; ++c) std::swap(lu[k * n + c], lu[p * n + c]);
            std::swap(perm[k], perm[p]);
            det = -det;
        }
        const double pivot = lu[k * n + k];
        det *= pivot;
        for (std::size_t r = k + 1; r < n; ++r) {
            const double f = lu[r * n + k] / pivot;
            lu[r * n + k] = f;
            for (std::size_t c = k + 1; c < n; ++c) lu[r * n + c] -= f * lu[k * n + c];
        }
    }
    return det;
}

}  // namespace

double determinant(const SmallMatrix& a) {
    std::vector<double> lu(a.row_major().begin(), a.row_major().end());
    std::vector<std::size_t> perm;
    return lu_decompose(lu, perm, a.dim());
}

SmallMatrix mat_inv(const SmallMatrix& a, double det_floor) {
    if (!a.all_finite()) throw InvalidArgument("mat_inv: non-finite input");
    const std::size_t n = a.dim();
    std::vector<double> lu(a.row_major().begin(), a.row_major().end());
    std::vector<std::size_t> perm;
    const double det = lu_decompose(lu, perm, n);
    if (!(std::abs(det) >= det_floor)) {
        std::ostringstream msg;
        msg << "mat_inv: matrix is singular (|det| = " << std::abs(det) << " < " << det_floor << ")";
        throw SingularMatrixError(msg.str());
    }
    SmallMatrix inv(n);
    std::vector<double> col(n);
    for (std::size_t c = 0; c < n; ++c) {
        // Solve L U x = P e_c.
        for (std::size_t r = 0; r < n; ++r) col[r] = (perm[r] == c) ? 1.0 : 0.0;
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t k = 0; k < r; ++k) col[r] -= lu[r * n + k] * col[k];
        for (std::size_t r = n; r-- > 0;) {
            for (std::size_t k = r + 1; k < n; ++k) col[r] -= lu[r * n + k] * col[k];
            col[r] /= lu[r * n + r];
        }
        for (std::size_t r = 0; r < n; ++r) inv(r, c) = col[r];
    }
    return inv;
}

double max_abs_diff(const SmallMatrix& a, const SmallMatrix& b) {
    require_same_dim(a.dim(), b.dim(), "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.row_major().size(); ++i)
        m = std::max(m, std::abs(a.row_major()[i] - b.row_major()[i]));
    return m;
}

double max_abs_diff(const SmallVector& a, const SmallVector& b) {
    require_same_dim(a.dim(), b.dim(), "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace ldm::linalg
