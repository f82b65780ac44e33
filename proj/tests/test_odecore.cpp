#include <cmath>
#include <random>

#include "doctest.h"
#include "ldm/errors.hpp"
#include "ldm/odecore.hpp"
#include "support.hpp"

using namespace ldm::ode;
using testing::max_rel_err;

namespace {

const SmallMatrix kA1{{-0.2, 0.1}, {-0.1, 0.1}};
const SmallMatrix kA2{{-0.2, -0.1}, {0.1, -0.2}};

}  // namespace

TEST_SUITE("odecore") {

TEST_CASE("solve_ivp with A = 0 is linear drift from the start time") {
    const OdeParams p(SmallMatrix(2), {1.0, 2.0});
    CHECK(p.a_is_zero());
    const SmallVector z = solve_ivp(p, {3.0, 1.0}, 0.0, 2.0);
    CHECK(z[0] == 5.0);
    CHECK(z[1] == 5.0);
    const SmallVector shifted = solve_ivp(p, {3.0, 1.0}, 2.0, 3.0);
    CHECK(shifted[0] == 4.0);
    CHECK(shifted[1] == 3.0);
}

TEST_CASE("solve_ivp returns z0 exactly at t = t0") {
    const SmallVector z0{3.0, 1.0};
    for (const auto& p : {OdeParams(kA1, {0.0, 0.0}), OdeParams(kA2, {0.3, -0.7}), OdeParams(SmallMatrix(2), {1.0, 1.0})})
        CHECK(solve_ivp(p, z0, 1.5, 1.5) == z0);
}

TEST_CASE("solve_ivp matches RK4 on the group-1 system") {
    const OdeParams p(kA1, {0.0, 0.0});
    const SmallVector z0{3.0, 1.0};
    CHECK(max_rel_err(solve_ivp(p, z0, 0.0, 5.0), rk4_reference(p, z0, 0.0, 5.0, 1e-3)) <= 1e-6);
}

TEST_CASE("solve_ivp with drift matches RK4") {
    const OdeParams p(kA2, {0.4, -0.3});
    const SmallVector z0{-1.0, 2.0};
    CHECK(max_rel_err(solve_ivp(p, z0, 1.0, 7.0), rk4_reference(p, z0, 1.0, 7.0, 1e-3)) <= 1e-6);
}

TEST_CASE("solve_ivp errors") {
    CHECK_THROWS_AS(solve_ivp(OdeParams(kA1, {0.0, 0.0}), {3.0, 1.0}, 2.0, 1.0), ldm::InvalidArgument);
    const OdeParams singular(SmallMatrix{{1.0, 1.0}, {1.0, 1.0}}, {1.0, 0.0});
    CHECK_THROWS_AS(solve_ivp(singular, {0.0, 0.0}, 0.0, 1.0), ldm::SingularMatrixError);
    CHECK_THROWS_AS(OdeParams(kA1, {NAN, 0.0}), ldm::InvalidArgument);
    CHECK_THROWS_AS(OdeParams(kA1, {0.0, 0.0, 0.0}), ldm::InvalidArgument);
}

TEST_CASE("propagate handles singular A and both directions") {
    const OdeParams singular(SmallMatrix{{1.0, 1.0}, {1.0, 1.0}}, {1.0, 0.0});
    const SmallVector z0{0.5, -0.5};
    CHECK(max_rel_err(propagate(singular, z0, 0.8), rk4_reference(singular, z0, 0.0, 0.8, 1e-4)) <= 1e-8);
    const OdeParams p(kA2, {0.2, 0.1});
    const SmallVector back = propagate(p, propagate(p, z0, 3.0), -3.0);
    CHECK(ldm::linalg::max_abs_diff(back, z0) <= 1e-12);
}

TEST_CASE("rk4_reference contract") {
    const OdeParams drift(SmallMatrix(2), {1.0, -2.0});
    const SmallVector z = rk4_reference(drift, {3.0, 1.0}, 0.0, 2.0, 0.1);
    CHECK(z[0] == doctest::Approx(5.0).epsilon(1e-14));
    CHECK(z[1] == doctest::Approx(-3.0).epsilon(1e-14));
    CHECK(rk4_reference(OdeParams(kA1, {0.0, 0.0}), {3.0, 1.0}, 2.0, 2.0, 0.1) == SmallVector{3.0, 1.0});
    CHECK_THROWS_AS(rk4_reference(drift, {3.0, 1.0}, 0.0, 1.0, 0.0), ldm::InvalidArgument);
}

TEST_CASE("rk4_reference converges at fourth order") {
    const OdeParams p(kA1, {0.0, 0.0});
    const SmallVector z0{3.0, 1.0};
    const SmallVector exact = solve_ivp(p, z0, 0.0, 10.0);
    auto err = [&](double h) {
        const SmallVector z = rk4_reference(p, z0, 0.0, 10.0, h);
        return std::max(std::abs(z[0] - exact[0]), std::abs(z[1] - exact[1]));
    };
    const double ratio = err(0.5) / err(0.25);
    CHECK(ratio > 14.0);
    CHECK(ratio < 18.0);
}

TEST_CASE("propagate_variance") {
    const OdeParams p(kA1, {0.0, 0.0});
    CHECK(propagate_variance(p, 0.0, {0.3, 0.7}) == SmallVector{0.3, 0.7});

    const OdeParams scalar(SmallMatrix{{-0.2}}, {0.0});
    CHECK(propagate_variance(scalar, 1.0, {1.0})[0] == doctest::Approx(std::exp(-0.4)).epsilon(1e-14));
    CHECK(std::exp(-0.4) == doctest::Approx(0.670320).epsilon(1e-6));

    const OdeParams diag(SmallMatrix::diagonal({-0.2, 0.3}), {0.0, 0.0});
    const SmallVector v = propagate_variance(diag, 1.5, {2.0, 0.5});
    CHECK(v[0] == doctest::Approx(std::exp(2 * -0.2 * 1.5) * 2.0).epsilon(1e-13));
    CHECK(v[1] == doctest::Approx(std::exp(2 * 0.3 * 1.5) * 0.5).epsilon(1e-13));

    CHECK_THROWS_AS(propagate_variance(p, 1.0, {-1.0, 1.0}), ldm::InvalidArgument);
    CHECK_THROWS_AS(propagate_variance(p, -1.0, {1.0, 1.0}), ldm::InvalidArgument);
}

TEST_CASE("propagate_variance matches a Monte-Carlo oracle") {
    const SmallMatrix a{{-0.3, 0.8}, {-0.5, 0.2}};
    const OdeParams p(a, {0.0, 0.0});
    const double dt = 0.7;
    const SmallMatrix e = ldm::linalg::mat_exp(a, dt);
    std::mt19937_64 rng(1234);
    std::normal_distribution<double> n(0.0, 1.0);
    const std::size_t samples = 1000000;
    double s[2] = {0, 0}, s2[2] = {0, 0}, s4[2] = {0, 0};
    for (std::size_t i = 0; i < samples; ++i) {
        const SmallVector z{n(rng), n(rng)};
        const SmallVector y = e * z;
        for (int r = 0; r < 2; ++r) {
            s[r] += y[r];
            s2[r] += y[r] * y[r];
            s4[r] += y[r] * y[r] * y[r] * y[r];
        }
    }
    const SmallVector v = propagate_variance(p, dt, {1.0, 1.0});
    for (int r = 0; r < 2; ++r) {
        const double m2 = s2[r] / samples;
        const double se = std::sqrt((s4[r] / samples - m2 * m2) / samples);
        CHECK(std::abs(m2 - v[r]) <= 3.0 * se);
    }
}

TEST_CASE("sample_variance_weights") {
    const std::vector<SmallVector> same{{2.0, -1.0}, {2.0, -1.0}, {2.0, -1.0}};
    const auto a = sample_variance_weights(same);
    CHECK_FALSE(a.uniform);
    CHECK(a.variance[0] == kVarianceFloor);
    CHECK(a.variance[1] == kVarianceFloor);

    const std::vector<SmallVector> two{{1.0}, {3.0}};
    const auto b = sample_variance_weights(two);
    CHECK_FALSE(b.uniform);
    CHECK(b.variance[0] == doctest::Approx(2.0).epsilon(1e-15));

    const std::vector<SmallVector> one{{1.0}};
    CHECK(sample_variance_weights(one).uniform);
    CHECK(sample_variance_weights({}).uniform);
}

TEST_CASE("weighted_estimate with a single eligible start") {
    const OdeParams p(kA1, {0.0, 0.0});
    const std::vector<double> times{0.0, 4.0};
    const std::vector<SmallVector> values{{3.0, 1.0}, {9.0, 9.0}};
    const auto starts = make_starts(p, times, values);
    const auto pt = weighted_estimate(starts, p, 2.0, ClosedFormVariance{{0.1, 0.1}});
    CHECK(pt.start_indices.size() == 1);
    CHECK(pt.estimate == solution_at(starts[0], p, 2.0));
    CHECK_THROWS_AS(weighted_estimate(make_starts(p, std::vector<double>{1.0}, std::vector<SmallVector>{{1.0, 1.0}}),
                                      p, 0.5, SampleVarianceMode{}),
                    ldm::InvalidArgument);
}

TEST_CASE("weighted_estimate with equal variances is the arithmetic mean") {
    const OdeParams p(SmallMatrix(2), {0.5, -0.5});
    const std::vector<double> times{0.0, 1.0, 2.5};
    const std::vector<SmallVector> values{{1.0, 2.0}, {0.0, 4.0}, {3.0, -1.0}};
    const auto starts = make_starts(p, times, values);
    const auto pt = weighted_estimate(starts, p, 3.0, ClosedFormVariance{{0.2, 0.2}});
    for (std::size_t i = 0; i < 2; ++i) {
        double mean = 0.0;
        for (const auto& s : pt.solutions) mean += s[i] / 3.0;
        CHECK(pt.estimate[i] == doctest::Approx(mean).epsilon(1e-14));
    }
}

TEST_CASE("weighted_estimate direct weighted-sum arithmetic") {
    // Start 0 at t=0 with value 0 and start 1 at t1 = ln 3 with value 4;
    // with a = -0.5 and sigma^2 = 1 the variances at t1 are 1/3 and 1,
    // i.e. the ratio of the (1, 3) example.
    const OdeParams p(SmallMatrix{{-0.5}}, {0.0});
    const double t1 = std::log(3.0);
    const std::vector<double> times{0.0, t1};
    const std::vector<SmallVector> values{{0.0}, {4.0}};
    const auto pt = weighted_estimate(make_starts(p, times, values), p, t1, ClosedFormVariance{{1.0}});
    CHECK((*pt.variances[0])[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    CHECK(pt.estimate[0] == doctest::Approx((0.0 * 1.0 + 4.0 / 3.0) / (1.0 + 1.0 / 3.0)).epsilon(1e-14));
    CHECK(pt.estimate[0] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("sample mode uses uniform weights when no intermediate solutions exist") {
    const OdeParams p(kA2, {0.0, 0.0});
    const std::vector<double> times{0.0, 2.0};
    const std::vector<SmallVector> values{{3.0, 1.0}, {1.0, 2.0}};
    const auto pt = weighted_estimate(make_starts(p, times, values), p, 5.0, SampleVarianceMode{});
    CHECK_FALSE(pt.variances[0].has_value());
    CHECK_FALSE(pt.variances[1].has_value());
    CHECK(pt.weights[0][0] == doctest::Approx(0.5));
}

TEST_CASE("sample mode fills marker starts with the mean defined inverse variance") {
    const OdeParams p(kA1, {0.0, 0.0});
    const std::vector<double> times{0.0, 1.0, 2.0, 3.0, 4.0};
    const std::vector<SmallVector> values{{3.0, 1.0}, {2.5, 1.4}, {2.9, 0.6}, {1.8, 1.1}, {2.2, 0.9}};
    const auto starts = make_starts(p, times, values);
    const auto pt = weighted_estimate(starts, p, 4.5, SampleVarianceMode{});
    // Starts 0, 1 and 2 have >= 2 starts strictly between them and 4.5; 3 and 4 do not.
    std::vector<SampleVariance> defined;
    for (std::size_t k = 0; k < 3; ++k)
        defined.push_back(sample_variance_weights(
            std::vector<SmallVector>(pt.solutions.begin() + static_cast<std::ptrdiff_t>(k + 1), pt.solutions.end())));
    for (std::size_t k = 0; k < 3; ++k) CHECK(pt.variances[k].has_value());
    CHECK_FALSE(pt.variances[3].has_value());
    CHECK_FALSE(pt.variances[4].has_value());
    for (std::size_t i = 0; i < 2; ++i) {
        double sum_defined = 0.0;
        for (const auto& v : defined) sum_defined += 1.0 / v.variance[i];
        const double fill = sum_defined / 3.0;
        const double total = sum_defined + 2.0 * fill;
        CHECK(pt.weights[0][i] == doctest::Approx(1.0 / defined[0].variance[i] / total).epsilon(1e-12));
        CHECK(pt.weights[3][i] == doctest::Approx(fill / total).epsilon(1e-12));
        CHECK(pt.weights[4][i] == doctest::Approx(fill / total).epsilon(1e-12));
    }
}

TEST_CASE("weights are nonnegative and sum to one") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const OdeParams p(SmallMatrix{{0.3 * u(rng), 0.3 * u(rng)}, {0.3 * u(rng), 0.3 * u(rng)}}, {u(rng), u(rng)});
        std::vector<double> times{0.0};
        std::vector<SmallVector> values{{u(rng), u(rng)}};
        const int n = 1 + trial % 8;
        for (int k = 0; k < n; ++k) {
            times.push_back(times.back() + 0.2 + std::abs(u(rng)) * 2.0);
            values.push_back({u(rng) * 3, u(rng) * 3});
        }
        const auto starts = make_starts(p, times, values);
        const double t = times.back() * (0.5 + 0.5 * std::abs(u(rng)));
        for (const VarianceMode& mode : {VarianceMode{SampleVarianceMode{}}, VarianceMode{ClosedFormVariance{{0.1, 0.4}}}})
            for (StartSet set : {StartSet::causal, StartSet::all}) {
                const auto pt = weighted_estimate(starts, p, t, mode, set);
                for (std::size_t i = 0; i < 2; ++i) {
                    double s = 0.0, est = 0.0;
                    for (std::size_t k = 0; k < pt.weights.size(); ++k) {
                        CHECK(pt.weights[k][i] >= 0.0);
                        s += pt.weights[k][i];
                        est += pt.weights[k][i] * pt.solutions[k][i];
                    }
                    CHECK(std::abs(s - 1.0) <= 1e-12);
                    CHECK(std::abs(est - pt.estimate[i]) <= 1e-12 * std::max(1.0, std::abs(est)));
                }
            }
    }
}

TEST_CASE("make_starts caches A^-1 c only when it is needed") {
    const std::vector<double> times{0.0, 1.0};
    const std::vector<SmallVector> values{{1.0, 1.0}, {2.0, 2.0}};
    CHECK(make_starts(OdeParams(kA1, {1.0, 0.0}), times, values)[0].a_inv_c.has_value());
    CHECK_FALSE(make_starts(OdeParams(kA1, {0.0, 0.0}), times, values)[0].a_inv_c.has_value());
    CHECK_FALSE(make_starts(OdeParams(SmallMatrix(2), {1.0, 0.0}), times, values)[0].a_inv_c.has_value());
    CHECK_THROWS_AS(make_starts(OdeParams(kA1, {0.0, 0.0}), std::vector<double>{0.0}, values), ldm::InvalidArgument);
}

}
