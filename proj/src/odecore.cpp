#include "ldm/odecore.hpp"

#include <algorithm>
#include <cmath>

#include "ldm/errors.hpp"

namespace ldm::ode {

using linalg::mat_exp;
using linalg::mat_inv;

OdeParams::OdeParams(SmallMatrix a, SmallVector c) : a_(std::move(a)), c_(std::move(c)) {
    if (a_.dim() == 0 || a_.dim() != c_.dim())
        throw InvalidArgument("OdeParams: A must be d x d and c of length d");
    if (!a_.all_finite() || !c_.all_finite()) throw InvalidArgument("OdeParams: non-finite entries");
    a_zero_ = a_.max_abs() < kZeroMatrixTol;
}

bool OdeParams::c_is_zero() const noexcept {
    return std::all_of(c_.begin(), c_.end(), [](double x) { return x == 0.0; });
}

namespace {

void check_start(const OdeParams& params, const SmallVector& z0) {
    if (z0.dim() != params.dim()) throw InvalidArgument("solve: start value has wrong dimension");
    if (!z0.all_finite()) throw InvalidArgument("solve: start value is not finite");
}

SmallVector apply_flow(const SmallMatrix& flow, const SmallVector& z0) {
    const std::size_t d = z0.dim();
    SmallVector out(d);
    for (std::size_t r = 0; r < d; ++r) {
        double s = flow(r, d);
        for (std::size_t c = 0; c < d; ++c) s += flow(r, c) * z0[c];
        out[r] = s;
    }
    return out;
}

SmallVector closed_form(const OdeParams& params, const SmallVector& z0, double dt,
                        const SmallVector* a_inv_c) {
    if (params.a_is_zero()) return dt * params.c() + z0;
    const SmallMatrix e = mat_exp(params.A(), dt);
    if (params.c_is_zero()) return e * z0;
    return e * (*a_inv_c + z0) - *a_inv_c;
}

SmallVector variance_after(const OdeParams& params, double dt, const SmallVector& sigma2) {
    if (params.a_is_zero() || dt == 0.0) return sigma2;
    const SmallMatrix e = mat_exp(params.A(), dt);
    const std::size_t d = sigma2.dim();
    SmallVector out(d);
    for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += e(i, j) * e(i, j) * sigma2[j];
        out[i] = s;
    }
    return out;
}

}  // namespace

SmallVector solve_ivp(const OdeParams& params, const SmallVector& z0, double t0, double t) {
    check_start(params, z0);
    if (!std::isfinite(t0) || !std::isfinite(t)) throw InvalidArgument("solve_ivp: non-finite time");
    if (t < t0) throw InvalidArgument("solve_ivp: backward solving (t < t0) is not supported");
    if (t == t0) return z0;
    if (params.a_is_zero() || params.c_is_zero()) return closed_form(params, z0, t - t0, nullptr);
    const SmallVector a_inv_c = mat_inv(params.A()) * params.c();
    return closed_form(params, z0, t - t0, &a_inv_c);
}

SmallMatrix affine_flow(const OdeParams& params, double dt) {
    const std::size_t d = params.dim();
    SmallMatrix m(d + 1);
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) m(r, c) = params.A()(r, c);
        m(r, d) = params.c()[r];
    }
    return mat_exp(m, dt);
}

SmallVector propagate(const OdeParams& params, const SmallVector& z0, double dt) {
    check_start(params, z0);
    if (dt == 0.0) return z0;
    if (params.a_is_zero() || params.c_is_zero()) return closed_form(params, z0, dt, nullptr);
    try {
        const SmallVector a_inv_c = mat_inv(params.A()) * params.c();
        return closed_form(params, z0, dt, &a_inv_c);
    } catch (const SingularMatrixError&) {
        return apply_flow(affine_flow(params, dt), z0);
    }
}

SmallVector rk4_reference(const OdeParams& params, const SmallVector& z0, double t0, double t,
                          double step) {
    check_start(params, z0);
    if (!(step > 0.0)) throw InvalidArgument("rk4_reference: step must be positive");
    if (t < t0) throw InvalidArgument("rk4_reference: t < t0");
    if (t == t0) return z0;
    const auto n = static_cast<std::size_t>(std::ceil((t - t0) / step - 1e-9));
    const double h = (t - t0) / static_cast<double>(n);
    auto rhs = [&](const SmallVector& z) { return params.A() * z + params.c(); };
    SmallVector z = z0;
    for (std::size_t i = 0; i < n; ++i) {
        const SmallVector k1 = rhs(z);
        const SmallVector k2 = rhs(z + (0.5 * h) * k1);
        const SmallVector k3 = rhs(z + (0.5 * h) * k2);
        const SmallVector k4 = rhs(z + h * k3);
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return z;
}

SmallVector propagate_variance(const OdeParams& params, double dt, const SmallVector& sigma2) {
    if (sigma2.dim() != params.dim()) throw InvalidArgument("propagate_variance: dimension mismatch");
    if (!(dt >= 0.0)) throw InvalidArgument("propagate_variance: dt must be nonnegative");
    for (double s : sigma2)
        if (!(s >= 0.0)) throw InvalidArgument("propagate_variance: negative variance");
    return variance_after(params, dt, sigma2);
}

SampleVariance sample_variance_weights(std::span<const SmallVector> solutions_at_t) {
    SampleVariance out;
    const std::size_t n = solutions_at_t.size();
    if (n < 2) return out;
    const std::size_t d = solutions_at_t.front().dim();
    SmallVector mean(d);
    for (const auto& s : solutions_at_t) mean = mean + s;
    mean = (1.0 / static_cast<double>(n)) * mean;
    SmallVector var(d);
    for (const auto& s : solutions_at_t)
        for (std::size_t i = 0; i < d; ++i) var[i] += (s[i] - mean[i]) * (s[i] - mean[i]);
    for (auto& v : var) v = std::max(v / static_cast<double>(n - 1), kVarianceFloor);
    out.uniform = false;
    out.variance = std::move(var);
    return out;
}

std::vector<StartedSolution> make_starts(const OdeParams& params, std::span<const double> times,
                                         std::span<const SmallVector> values) {
    if (times.size() != values.size()) throw InvalidArgument("make_starts: times and values differ in length");
    std::optional<SmallVector> a_inv_c;
    if (!params.a_is_zero() && !params.c_is_zero()) {
        try {
            a_inv_c = mat_inv(params.A()) * params.c();
        } catch (const SingularMatrixError&) {
            a_inv_c.reset();
        }
    }
    std::vector<StartedSolution> starts;
    starts.reserve(times.size());
    for (std::size_t k = 0; k < times.size(); ++k) {
        check_start(params, values[k]);
        starts.push_back(StartedSolution{k, times[k], values[k], a_inv_c});
    }
    return starts;
}

SmallVector solution_at(const StartedSolution& start, const OdeParams& params, double t) {
    const double dt = t - start.time;
    if (dt == 0.0) return start.value;
    if (params.a_is_zero() || params.c_is_zero()) return closed_form(params, start.value, dt, nullptr);
    if (start.a_inv_c) return closed_form(params, start.value, dt, &*start.a_inv_c);
    return apply_flow(affine_flow(params, dt), start.value);
}

TrajectoryPoint weighted_estimate(std::span<const StartedSolution> starts, const OdeParams& params,
                                  double t, const VarianceMode& mode, StartSet set) {
    TrajectoryPoint pt;
    pt.time = t;
    for (const auto& s : starts) {
        if (set == StartSet::causal && s.time > t) continue;
        pt.start_indices.push_back(s.index);
        pt.solutions.push_back(solution_at(s, params, t));
    }
    if (pt.solutions.empty()) throw InvalidArgument("weighted_estimate: no start with t_k <= t");
    const std::size_t n = pt.solutions.size();
    const std::size_t d = params.dim();

    std::vector<double> start_time(n);
    {
        std::size_t e = 0;
        for (const auto& s : starts)
            if (set == StartSet::all || s.time <= t) start_time[e++] = s.time;
    }

    std::vector<SmallVector> inv(n);
    if (const auto* cf = std::get_if<ClosedFormVariance>(&mode)) {
        if (cf->sigma2.dim() != d) throw InvalidArgument("weighted_estimate: sigma2 has wrong dimension");
        for (std::size_t k = 0; k < n; ++k) {
            SmallVector var = variance_after(params, t - start_time[k], cf->sigma2);
            for (auto& v : var) v = std::max(v, kVarianceFloor);
            inv[k] = SmallVector(d);
            for (std::size_t i = 0; i < d; ++i) inv[k][i] = 1.0 / var[i];
            pt.variances.emplace_back(std::move(var));
        }
    } else {
        std::vector<bool> defined(n, false);
        SmallVector defined_sum(d);
        std::size_t defined_count = 0;
        for (std::size_t k = 0; k < n; ++k) {
            const double lo = std::min(start_time[k], t);
            const double hi = std::max(start_time[k], t);
            std::vector<SmallVector> between;
            for (std::size_t j = 0; j < n; ++j)
                if (start_time[j] > lo && start_time[j] < hi) between.push_back(pt.solutions[j]);
            SampleVariance sv = sample_variance_weights(between);
            if (sv.uniform) {
                pt.variances.emplace_back(std::nullopt);
                continue;
            }
            inv[k] = SmallVector(d);
            for (std::size_t i = 0; i < d; ++i) inv[k][i] = 1.0 / sv.variance[i];
            defined_sum = defined_sum + inv[k];
            ++defined_count;
            defined[k] = true;
            pt.variances.emplace_back(std::move(sv.variance));
        }
        const SmallVector fill = defined_count == 0
                                     ? SmallVector(d, 1.0)
                                     : (1.0 / static_cast<double>(defined_count)) * defined_sum;
        for (std::size_t k = 0; k < n; ++k)
            if (!defined[k]) inv[k] = fill;
    }

    SmallVector total(d);
    for (const auto& w : inv) total = total + w;
    pt.estimate = SmallVector(d);
    for (std::size_t k = 0; k < n; ++k) {
        SmallVector w(d);
        for (std::size_t i = 0; i < d; ++i) {
            w[i] = inv[k][i] / total[i];
            pt.estimate[i] += w[i] * pt.solutions[k][i];
        }
        pt.weights.push_back(std::move(w));
    }
    return pt;
}

}  // namespace ldm::ode
