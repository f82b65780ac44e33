#include "ldm/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "ldm/errors.hpp"
#include "ldm/io.hpp"
#include "ldm/rng.hpp"

namespace ldm::datagen {

bool SimConfig::has_drift() const {
    for (std::size_t i = 0; i < c1.dim(); ++i)
        if (c1[i] != 0.0) return true;
    for (std::size_t i = 0; i < c2.dim(); ++i)
        if (c2[i] != 0.0) return true;
    return false;
}

void SimConfig::validate() const {
    auto fail = [](const std::string& msg) { throw InvalidArgument("simulation config: " + msg); };
    if (individuals < 1) fail("individuals must be >= 1");
    if (items < 1) fail("items must be >= 1");
    if (baseline < 1) fail("baseline must be >= 1");
    if (informative > baseline) fail("informative must not exceed baseline");
    if (min_followups > max_followups) fail("min_followups must not exceed max_followups");
    if (!(std::isfinite(time_min) && std::isfinite(time_max)) || time_min > time_max || time_min <= 0.0)
        fail("time range must satisfy 0 < time_min <= time_max");
    for (double s : {sigma_ind, sigma_var, sigma_info, sigma_noise})
        if (!(s >= 0.0) || !std::isfinite(s)) fail("noise standard deviations must be finite and >= 0");
    const std::size_t d = initial.dim();
    if (d < 1) fail("initial value must be nonempty");
    if (a1.dim() != d || a2.dim() != d || c1.dim() != d || c2.dim() != d)
        fail("group matrices, drifts and initial value must share one dimension");
    if (items < d) fail("need at least one item per latent component");
    if (!initial.all_finite() || !c1.all_finite() || !c2.all_finite()) fail("non-finite parameters");
}

const GroundTruth& SimulatedCohort::truth_for(const std::string& id) const {
    for (const auto& t : truth)
        if (t.id == id) return t;
    throw NotFoundError("no simulated individual with id '" + id + "'");
}

std::vector<double> true_parameter_vector(const SimConfig& config, const ode::OdeParams& params) {
    std::vector<double> out;
    const std::size_t d = params.dim();
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) out.push_back(params.A()(r, c));
    if (config.has_drift())
        for (std::size_t r = 0; r < d; ++r) out.push_back(params.c()[r]);
    return out;
}

SimulatedCohort simulate_cohort(const SimConfig& config) {
    config.validate();
    SimulatedCohort cohort;
    cohort.config = config;
    auto& data = cohort.dataset;
    data.items = config.items;
    data.baseline = config.baseline;

    const std::size_t d = config.latent();
    const ode::OdeParams group_params[2] = {ode::OdeParams(config.a1, config.c1),
                                            ode::OdeParams(config.a2, config.c2)};
    const std::size_t first_group = (config.individuals + 1) / 2;
    const int width = static_cast<int>(std::to_string(config.individuals).size());

    for (std::size_t i = 0; i < config.individuals; ++i) {
        Rng rng = make_rng(config.seed, "individual", i);
        std::normal_distribution<double> normal(0.0, 1.0);
        const int group = i < first_group ? 1 : 2;
        const ode::OdeParams& params = group_params[group - 1];

        char id[32];
        std::snprintf(id, sizeof id, "sim%0*zu", width, i + 1);

        std::uniform_int_distribution<std::size_t> count(config.min_followups, config.max_followups);
        const std::size_t followups = count(rng);
        std::uniform_real_distribution<double> when(config.time_min, config.time_max);
        std::vector<double> times{0.0};
        for (std::size_t k = 0; k < followups; ++k) times.push_back(when(rng));
        std::sort(times.begin() + 1, times.end());
        // Ties would break strict ordering; they have probability zero but
        // a degenerate range (time_min == time_max) makes them certain.
        times.erase(std::unique(times.begin(), times.end()), times.end());

        pipeline::Individual ind;
        ind.id = id;
        ind.items = grad::Tensor(config.items, times.size());
        for (std::size_t k = 0; k < times.size(); ++k) {
            const SmallVector u = ode::solve_ivp(params, config.initial, 0.0, times[k]);
            for (std::size_t j = 0; j < config.items; ++j) {
                const std::size_t comp = j * d / config.items;
                const double delta = config.sigma_var * normal(rng);
                const double eps = config.sigma_ind * normal(rng);
                ind.items(j, k) = u[comp] + delta + eps;
            }
        }
        ind.times = std::move(times);

        const std::vector<double> truth = true_parameter_vector(config, params);
        ind.baseline.resize(config.baseline);
        for (std::size_t b = 0; b < config.baseline; ++b) {
            if (b < config.informative)
                ind.baseline[b] = truth[b % truth.size()] + config.sigma_info * normal(rng);
            else
                ind.baseline[b] = config.sigma_noise * normal(rng);
        }
        data.individuals.push_back(std::move(ind));
        cohort.truth.push_back({id, group, params});
    }
    return cohort;
}

SmallVector true_latent(const SimulatedCohort& cohort, const std::string& id, double t) {
    const GroundTruth& g = cohort.truth_for(id);
    return ode::propagate(g.params, cohort.config.initial, t);
}

std::string ground_truth_csv(const SimulatedCohort& cohort) {
    const std::size_t d = cohort.config.latent();
    const bool drift = cohort.config.has_drift();
    std::ostringstream out;
    out << "id,group";
    for (std::size_t r = 1; r <= d; ++r)
        for (std::size_t c = 1; c <= d; ++c) out << ",a_" << r << c;
    if (drift)
        for (std::size_t r = 1; r <= d; ++r) out << ",c_" << r;
    out << '\n';
    for (const auto& g : cohort.truth) {
        out << g.id << ',' << g.group;
        for (double v : true_parameter_vector(cohort.config, g.params)) out << ',' << io::format_exact(v);
        out << '\n';
    }
    return out.str();
}

}  // namespace ldm::datagen
