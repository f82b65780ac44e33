#pragma once

// Closed-form solutions of dz/dt = A z + c started from every observed
// time point, their variances, and the time-dependent inverse-variance
// weighted combination of those solutions.

#include <cstddef>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "ldm/linalg.hpp"

namespace ldm::ode {

using linalg::SmallMatrix;
using linalg::SmallVector;

// ||A||_max below this is treated as A = 0 (pure drift).
inline constexpr double kZeroMatrixTol = 1e-10;
// Variances are floored here before inversion.
inline constexpr double kVarianceFloor = 1e-8;

class OdeParams {
public:
    OdeParams() = default;
    OdeParams(SmallMatrix a, SmallVector c);

    const SmallMatrix& A() const noexcept { return a_; }
    const SmallVector& c() const noexcept { return c_; }
    std::size_t dim() const noexcept { return c_.dim(); }
    bool a_is_zero() const noexcept { return a_zero_; }
    bool c_is_zero() const noexcept;

private:
    SmallMatrix a_;
    SmallVector c_;
    bool a_zero_ = true;
};

// Forward-in-time solution. A = 0 gives c (t - t0) + z0; if c = 0 the
// inverse is not needed; otherwise exp(A dt)(A^-1 c + z0) - A^-1 c, which
// throws SingularMatrixError for singular A. Requires t >= t0.
SmallVector solve_ivp(const OdeParams& params, const SmallVector& z0, double t0, double t);

// Like solve_ivp but for either sign of dt, and singular A with c != 0 is
// handled through the augmented exponential instead of throwing.
SmallVector propagate(const OdeParams& params, const SmallVector& z0, double dt);

// exp(M dt) for the (d+1)x(d+1) augmented generator M = [[A, c], [0, 0]].
// Its top-left block is exp(A dt) and its last column holds the affine
// offset, so [z(t); 1] = exp(M dt) [z0; 1] with no matrix inverse.
SmallMatrix affine_flow(const OdeParams& params, double dt);

// Classical fourth-order Runge-Kutta integration; test oracle only.
SmallVector rk4_reference(const OdeParams& params, const SmallVector& z0, double t0, double t,
                          double step);

// diag(exp(A dt) diag(sigma2) exp(A dt)^T).
SmallVector propagate_variance(const OdeParams& params, double dt, const SmallVector& sigma2);

// Per-dimension unbiased sample variance floored at kVarianceFloor, or the
// uniform-weight marker (`uniform == true`) when fewer than two solutions
// are given.
struct SampleVariance {
    bool uniform = true;
    SmallVector variance;
};
SampleVariance sample_variance_weights(std::span<const SmallVector> solutions_at_t);

struct StartedSolution {
    std::size_t index = 0;
    double time = 0.0;
    SmallVector value;
    std::optional<SmallVector> a_inv_c;  // present when A != 0, c != 0 and A is invertible
};

std::vector<StartedSolution> make_starts(const OdeParams& params, std::span<const double> times,
                                         std::span<const SmallVector> values);

// Solution started from `start`, evaluated at t (either direction).
SmallVector solution_at(const StartedSolution& start, const OdeParams& params, double t);

struct ClosedFormVariance {
    SmallVector sigma2;  // observation noise variance, shared by all starts
};
struct SampleVarianceMode {};
using VarianceMode = std::variant<ClosedFormVariance, SampleVarianceMode>;

enum class StartSet {
    causal,  // only starts with t_k <= t
    all,     // every start, solving backwards where needed (fit-time smoothing)
};

struct TrajectoryPoint {
    double time = 0.0;
    SmallVector estimate;
    std::vector<std::size_t> start_indices;
    std::vector<SmallVector> solutions;
    // Empty optional marks a start that received the uniform-weight marker.
    std::vector<std::optional<SmallVector>> variances;
    std::vector<SmallVector> weights;  // normalized per dimension
};

struct SmoothedTrajectory {
    std::vector<TrajectoryPoint> points;
};

// Inverse-variance weighted combination, per dimension, of the solutions
// from the eligible starts.
//
// Sample mode: the variance of start k at t is the sample variance of the
// solutions from the eligible starts j with t_j strictly between t_k and t.
// A start with fewer than two such solutions carries the uniform marker and
// is given the mean inverse variance of the starts that do have one; if
// none do, all eligible starts are weighted equally.
//
// Throws InvalidArgument when no start is eligible.
TrajectoryPoint weighted_estimate(std::span<const StartedSolution> starts, const OdeParams& params,
                                  double t, const VarianceMode& mode,
                                  StartSet set = StartSet::causal);

}  // namespace ldm::ode
