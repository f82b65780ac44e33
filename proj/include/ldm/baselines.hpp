#pragma once

// Comparators fitted on encoded latent series: polynomial-in-time least
// squares (shifted or not), slopes predicted from baseline covariates, and
// a per-dimension continuous-time AR(1).

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ldm/linalg.hpp"

namespace ldm::baselines {

using linalg::SmallVector;

struct RegressionFit {
    std::size_t degree = 1;
    // coefficients[dim] = (intercept, slope[, quadratic]) per unit time
    std::vector<std::vector<double>> coefficients;
    std::size_t window = 0;  // number of visits used

    std::size_t dim() const noexcept { return coefficients.size(); }
    SmallVector at(double t) const;
};

std::size_t distinct_count(std::span<const double> times);

// Least-squares polynomial fit per dimension. Degree 0 is the mean.
// Throws UnderdeterminedFit with fewer than degree + 1 distinct times.
RegressionFit fit_ols(std::span<const double> times, std::span<const SmallVector> values, std::size_t degree);

// Shifted: fit(t_query) - fit(t_current) + z_current. Unshifted: fit(t_query).
SmallVector predict_regression(const RegressionFit& fit, double t_current, const SmallVector& z_current,
                               double t_query, bool shifted);

struct LatentSeries {
    std::vector<double> times;
    std::vector<SmallVector> values;
};

// Stage-2 linear model per latent dimension: slope = intercept + w . baseline.
struct SlopePredictor {
    std::vector<double> intercept;          // per dim
    std::vector<std::vector<double>> weights;  // per dim, q entries
    bool rank_deficient = false;

    std::size_t dim() const noexcept { return intercept.size(); }
    SmallVector slopes(std::span<const double> baseline) const;
    // Predicted slope anchored at the current encoded value.
    SmallVector predict(std::span<const double> baseline, double t_current, const SmallVector& z_current,
                        double t_query) const;
};

inline constexpr double kSlopeRidge = 1e-6;

// Stage 1 fits full-series OLS slopes per individual; stage 2 regresses them
// on the covariates with ridge damping on the non-intercept columns.
SlopePredictor fit_baseline_informed_slopes(std::span<const LatentSeries> series,
                                            std::span<const std::vector<double>> baselines,
                                            double ridge = kSlopeRidge);

struct Car1Fit {
    double mean = 0.0;
    double theta = 0.0;  // decay rate per unit time, >= 0
    double scale = 0.0;  // residual standard deviation
    bool converged = true;
};

// Theta grid: 0 and log-spaced points on [theta_min, theta_max].
struct Car1Options {
    double theta_min = 1e-3;
    double theta_max = 10.0;
    std::size_t grid = 60;
    std::size_t refine_iterations = 80;
};

// Conditional least squares of z(t_{k+1}) = m + exp(-theta dt)(z(t_k) - m).
// Throws UnderdeterminedFit with fewer than 3 visits.
Car1Fit fit_car1(std::span<const double> times, std::span<const double> values, const Car1Options& options = {});

double predict_car1(const Car1Fit& fit, double z_current, double dt);

// Conditional squared error of a (mean, theta) pair; exposed for tests.
double car1_sse(std::span<const double> times, std::span<const double> values, double mean, double theta);

struct IndividualFits {
    std::string id;
    RegressionFit linear;
    std::vector<Car1Fit> car1;  // empty when the series is too short
};

// id,dimension,intercept,slope,car1_mean,car1_theta,car1_scale,car1_converged
std::string fits_csv(std::span<const IndividualFits> fits);

}  // namespace ldm::baselines
