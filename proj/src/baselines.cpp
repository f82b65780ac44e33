#include "ldm/baselines.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ldm/errors.hpp"
#include "ldm/io.hpp"

namespace ldm::baselines {

SmallVector RegressionFit::at(double t) const {
    SmallVector out(dim());
    for (std::size_t r = 0; r < dim(); ++r) {
        double v = 0.0;
        double p = 1.0;
        for (double c : coefficients[r]) {
            v += c * p;
            p *= t;
        }
        out[r] = v;
    }
    return out;
}

std::size_t distinct_count(std::span<const double> times) {
    std::vector<double> t(times.begin(), times.end());
    std::sort(t.begin(), t.end());
    return static_cast<std::size_t>(std::unique(t.begin(), t.end()) - t.begin());
}

RegressionFit fit_ols(std::span<const double> times, std::span<const SmallVector> values, std::size_t degree) {
    if (times.size() != values.size()) throw InvalidArgument("fit_ols: times and values differ in length");
    if (degree > 2) throw InvalidArgument("fit_ols: degree must be 0, 1 or 2");
    if (times.empty() || distinct_count(times) < degree + 1)
        throw UnderdeterminedFit("fit_ols: degree " + std::to_string(degree) + " needs at least " +
                                 std::to_string(degree + 1) + " distinct time points, got " +
                                 std::to_string(distinct_count(times)));
    const std::size_t n = times.size();
    const std::size_t d = values.front().dim();
    Eigen::MatrixXd x(n, degree + 1);
    Eigen::MatrixXd y(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        if (values[i].dim() != d) throw InvalidArgument("fit_ols: inconsistent value dimensions");
        double p = 1.0;
        for (std::size_t j = 0; j <= degree; ++j) {
            x(i, j) = p;
            p *= times[i];
        }
        for (std::size_t r = 0; r < d; ++r) y(i, r) = values[i][r];
    }
    const Eigen::MatrixXd beta = x.colPivHouseholderQr().solve(y);
    RegressionFit fit;
    fit.degree = degree;
    fit.window = n;
    fit.coefficients.assign(d, std::vector<double>(degree + 1));
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t j = 0; j <= degree; ++j) fit.coefficients[r][j] = beta(j, r);
    return fit;
}

SmallVector predict_regression(const RegressionFit& fit, double t_current, const SmallVector& z_current,
                               double t_query, bool shifted) {
    if (!shifted) return fit.at(t_query);
    if (z_current.dim() != fit.dim()) throw InvalidArgument("predict_regression: dimension mismatch");
    if (t_query == t_current) return z_current;
    const SmallVector a = fit.at(t_query);
    const SmallVector b = fit.at(t_current);
    SmallVector out(fit.dim());
    for (std::size_t r = 0; r < fit.dim(); ++r) out[r] = a[r] - b[r] + z_current[r];
    return out;
}

SmallVector SlopePredictor::slopes(std::span<const double> baseline) const {
    SmallVector out(dim());
    for (std::size_t r = 0; r < dim(); ++r) {
        if (baseline.size() != weights[r].size())
            throw InvalidArgument("SlopePredictor: baseline has " + std::to_string(baseline.size()) +
                                  " entries, expected " + std::to_string(weights[r].size()));
        double v = intercept[r];
        for (std::size_t j = 0; j < baseline.size(); ++j) v += weights[r][j] * baseline[j];
        out[r] = v;
    }
    return out;
}

SmallVector SlopePredictor::predict(std::span<const double> baseline, double t_current, const SmallVector& z_current,
                                    double t_query) const {
    const SmallVector s = slopes(baseline);
    SmallVector out(dim());
    for (std::size_t r = 0; r < dim(); ++r) out[r] = z_current[r] + s[r] * (t_query - t_current);
    return out;
}

SlopePredictor fit_baseline_informed_slopes(std::span<const LatentSeries> series,
                                            std::span<const std::vector<double>> baselines, double ridge) {
    if (series.size() != baselines.size())
        throw InvalidArgument("fit_baseline_informed_slopes: series and baselines differ in count");
    if (series.empty()) throw EmptyInput("fit_baseline_informed_slopes: no individuals");
    const std::size_t n = series.size();
    const std::size_t q = baselines.front().size();
    const std::size_t d = series.front().values.empty() ? 0 : series.front().values.front().dim();

    Eigen::MatrixXd x(n, q + 1);
    Eigen::MatrixXd y(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const RegressionFit f = fit_ols(series[i].times, series[i].values, 1);
        if (f.dim() != d) throw InvalidArgument("fit_baseline_informed_slopes: inconsistent latent dimension");
        if (baselines[i].size() != q) throw InvalidArgument("fit_baseline_informed_slopes: ragged baselines");
        x(i, 0) = 1.0;
        for (std::size_t j = 0; j < q; ++j) x(i, j + 1) = baselines[i][j];
        for (std::size_t r = 0; r < d; ++r) y(i, r) = f.coefficients[r][1];
    }
    Eigen::MatrixXd gram = x.transpose() * x;
    for (std::size_t j = 1; j <= q; ++j) gram(j, j) += ridge;
    const Eigen::MatrixXd beta = gram.ldlt().solve(x.transpose() * y);

    SlopePredictor p;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    p.rank_deficient = qr.rank() < static_cast<Eigen::Index>(q + 1);
    p.intercept.resize(d);
    p.weights.assign(d, std::vector<double>(q));
    for (std::size_t r = 0; r < d; ++r) {
        p.intercept[r] = beta(0, r);
        for (std::size_t j = 0; j < q; ++j) p.weights[r][j] = beta(j + 1, r);
    }
    return p;
}

double car1_sse(std::span<const double> times, std::span<const double> values, double mean, double theta) {
    double sse = 0.0;
    for (std::size_t k = 0; k + 1 < times.size(); ++k) {
        const double e = std::exp(-theta * (times[k + 1] - times[k]));
        const double r = values[k + 1] - (mean + e * (values[k] - mean));
        sse += r * r;
    }
    return sse;
}

namespace {

// Mean minimizing the conditional squared error at fixed theta.
double profile_mean(std::span<const double> times, std::span<const double> values, double theta) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k + 1 < times.size(); ++k) {
        const double e = std::exp(-theta * (times[k + 1] - times[k]));
        num += (1.0 - e) * (values[k + 1] - e * values[k]);
        den += (1.0 - e) * (1.0 - e);
    }
    if (den < 1e-14) {
        double m = 0.0;
        for (double v : values) m += v;
        return m / static_cast<double>(values.size());
    }
    return num / den;
}

double profile_sse(std::span<const double> times, std::span<const double> values, double theta) {
    return car1_sse(times, values, profile_mean(times, values, theta), theta);
}

}  // namespace

Car1Fit fit_car1(std::span<const double> times, std::span<const double> values, const Car1Options& options) {
    if (times.size() != values.size()) throw InvalidArgument("fit_car1: times and values differ in length");
    if (times.size() < 3)
        throw UnderdeterminedFit("fit_car1: needs at least 3 visits, got " + std::to_string(times.size()));
    if (options.grid < 2 || !(options.theta_min > 0.0) || !(options.theta_max > options.theta_min))
        throw InvalidArgument("fit_car1: invalid theta grid");

    std::vector<double> grid{0.0};
    const double lmin = std::log(options.theta_min);
    const double lmax = std::log(options.theta_max);
    for (std::size_t i = 0; i < options.grid; ++i)
        grid.push_back(std::exp(lmin + (lmax - lmin) * static_cast<double>(i) / static_cast<double>(options.grid - 1)));

    std::size_t best = 0;
    double best_sse = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double s = profile_sse(times, values, grid[i]);
        if (s < best_sse) {
            best_sse = s;
            best = i;
        }
    }

    // Golden-section search between the neighbours of the best grid point.
    double lo = grid[best == 0 ? 0 : best - 1];
    double hi = grid[std::min(best + 1, grid.size() - 1)];
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - phi * (hi - lo);
    double x2 = lo + phi * (hi - lo);
    double f1 = profile_sse(times, values, x1);
    double f2 = profile_sse(times, values, x2);
    for (std::size_t it = 0; it < options.refine_iterations; ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = profile_sse(times, values, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = profile_sse(times, values, x2);
        }
    }
    double theta = f1 < f2 ? x1 : x2;
    double sse = std::min(f1, f2);
    Car1Fit fit;
    fit.converged = sse <= best_sse && best + 1 < grid.size();
    if (sse > best_sse) {
        theta = grid[best];
        sse = best_sse;
    }
    fit.theta = theta;
    fit.mean = profile_mean(times, values, theta);
    fit.scale = std::sqrt(sse / static_cast<double>(times.size() - 1));
    return fit;
}

double predict_car1(const Car1Fit& fit, double z_current, double dt) {
    if (dt < 0.0) throw InvalidArgument("predict_car1: dt must be >= 0");
    return fit.mean + std::exp(-fit.theta * dt) * (z_current - fit.mean);
}

std::string fits_csv(std::span<const IndividualFits> fits) {
    std::ostringstream out;
    out << "id,dimension,intercept,slope,car1_mean,car1_theta,car1_scale,car1_converged\n";
    for (const auto& f : fits) {
        for (std::size_t r = 0; r < f.linear.dim(); ++r) {
            const auto& c = f.linear.coefficients[r];
            out << f.id << ',' << r + 1 << ',' << io::format_report(c[0]) << ','
                << io::format_report(c.size() > 1 ? c[1] : 0.0);
            if (r < f.car1.size()) {
                const auto& a = f.car1[r];
                out << ',' << io::format_report(a.mean) << ',' << io::format_report(a.theta) << ','
                    << io::format_report(a.scale) << ',' << (a.converged ? "true" : "false");
            } else {
                out << ",,,,";
            }
            out << '\n';
        }
    }
    return out.str();
}

}  // namespace ldm::baselines
