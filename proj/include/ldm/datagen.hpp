#pragma once

// Two-group cohort simulator: latent trajectories from two linear ODE
// systems sharing an initial value, irregular follow-up visits, items that
// track one latent component each plus two noise layers, and baseline
// variables that carry noisy copies of the true ODE parameters.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ldm/linalg.hpp"
#include "ldm/odecore.hpp"
#include "ldm/pipeline.hpp"

namespace ldm::datagen {

using linalg::SmallMatrix;
using linalg::SmallVector;

struct SimConfig {
    std::size_t individuals = 100;
    std::size_t items = 10;
    std::size_t baseline = 50;
    std::size_t informative = 10;
    std::size_t min_followups = 1;
    std::size_t max_followups = 8;
    double time_min = 1.5;
    double time_max = 10.0;
    double sigma_ind = 0.5;
    double sigma_var = 0.1;
    double sigma_info = 0.1;
    double sigma_noise = 0.1;
    SmallMatrix a1{{-0.2, 0.1}, {-0.1, 0.1}};
    SmallMatrix a2{{-0.2, -0.1}, {0.1, -0.2}};
    // Group drifts; zero gives the homogeneous systems.
    SmallVector c1{0.0, 0.0};
    SmallVector c2{0.0, 0.0};
    SmallVector initial{3.0, 1.0};
    std::uint64_t seed = 0;

    std::size_t latent() const noexcept { return initial.dim(); }
    bool has_drift() const;
    // Throws InvalidArgument describing the first violated constraint.
    void validate() const;
};

struct GroundTruth {
    std::string id;
    int group = 1;  // 1 or 2
    ode::OdeParams params;
};

struct SimulatedCohort {
    pipeline::Dataset dataset;
    std::vector<GroundTruth> truth;  // aligned with dataset.individuals
    SimConfig config;

    const GroundTruth& truth_for(const std::string& id) const;  // NotFoundError
};

SimulatedCohort simulate_cohort(const SimConfig& config);

// Exact latent state of the individual's group system at t.
SmallVector true_latent(const SimulatedCohort& cohort, const std::string& id, double t);

// Parameters copied into the informative baseline slots: A row-major, then
// c when any drift is nonzero.
std::vector<double> true_parameter_vector(const SimConfig& config, const ode::OdeParams& params);

// id,group,a_11,...,a_dd[,c_1,...,c_d]
std::string ground_truth_csv(const SimulatedCohort& cohort);

}  // namespace ldm::datagen
