#include <cmath>
#include <set>

#include "doctest.h"
#include "ldm/datagen.hpp"
#include "ldm/errors.hpp"
#include "ldm/odecore.hpp"
#include "support.hpp"

using namespace ldm::datagen;
using testing::max_rel_err;

namespace {

SimConfig noiseless() {
    SimConfig c;
    c.sigma_ind = c.sigma_var = c.sigma_info = c.sigma_noise = 0.0;
    return c;
}

}  // namespace

TEST_SUITE("datagen") {

TEST_CASE("default configuration shapes") {
    const auto cohort = simulate_cohort(SimConfig{});
    CHECK(cohort.dataset.individuals.size() == 100);
    CHECK(cohort.dataset.items == 10);
    CHECK(cohort.dataset.baseline == 50);
    std::size_t g1 = 0;
    for (std::size_t i = 0; i < 100; ++i) {
        const auto& ind = cohort.dataset.individuals[i];
        CHECK(ind.items.rows() == 10);
        CHECK(ind.baseline.size() == 50);
        CHECK(ind.times.front() == 0.0);
        CHECK(ind.visits() >= 2);
        CHECK(ind.visits() <= 9);
        for (std::size_t k = 1; k < ind.visits(); ++k) {
            CHECK(ind.times[k] > ind.times[k - 1]);
            CHECK(ind.times[k] >= 1.5);
            CHECK(ind.times[k] <= 10.0);
        }
        g1 += cohort.truth[i].group == 1;
    }
    CHECK(g1 == 50);
}

TEST_CASE("odd cohorts split with sizes differing by at most one") {
    SimConfig c;
    c.individuals = 7;
    const auto cohort = simulate_cohort(c);
    int g1 = 0;
    for (const auto& t : cohort.truth) g1 += t.group == 1;
    CHECK((g1 == 3 || g1 == 4));
}

TEST_CASE("zero noise: items at t = 0 equal the initial value") {
    const auto cohort = simulate_cohort(noiseless());
    for (const auto& ind : cohort.dataset.individuals) {
        for (std::size_t j = 0; j < 5; ++j) CHECK(ind.items(j, 0) == 3.0);
        for (std::size_t j = 5; j < 10; ++j) CHECK(ind.items(j, 0) == 1.0);
    }
}

TEST_CASE("zero noise: each five-item group is constant at every visit") {
    const auto cohort = simulate_cohort(noiseless());
    for (const auto& ind : cohort.dataset.individuals)
        for (std::size_t k = 0; k < ind.visits(); ++k) {
            for (std::size_t j = 1; j < 5; ++j) CHECK(ind.items(j, k) == ind.items(0, k));
            for (std::size_t j = 6; j < 10; ++j) CHECK(ind.items(j, k) == ind.items(5, k));
            const auto u = true_latent(cohort, ind.id, ind.times[k]);
            CHECK(std::abs(ind.items(0, k) - u[0]) <= 1e-14);
            CHECK(std::abs(ind.items(5, k) - u[1]) <= 1e-14);
        }
}

TEST_CASE("true latent trajectories match the RK4 oracle") {
    const auto cohort = simulate_cohort(SimConfig{});
    const ldm::ode::OdeParams g1(SmallMatrix{{-0.2, 0.1}, {-0.1, 0.1}}, {0.0, 0.0});
    const ldm::ode::OdeParams g2(SmallMatrix{{-0.2, -0.1}, {0.1, -0.2}}, {0.0, 0.0});
    const std::string first = cohort.dataset.individuals.front().id;
    const std::string last = cohort.dataset.individuals.back().id;
    REQUIRE(cohort.truth_for(first).group == 1);
    REQUIRE(cohort.truth_for(last).group == 2);
    CHECK(max_rel_err(true_latent(cohort, first, 5.0), ldm::ode::rk4_reference(g1, {3.0, 1.0}, 0.0, 5.0, 1e-3)) <= 1e-6);
    CHECK(max_rel_err(true_latent(cohort, last, 10.0), ldm::ode::rk4_reference(g2, {3.0, 1.0}, 0.0, 10.0, 1e-3)) <= 1e-6);
    for (const auto& ind : cohort.dataset.individuals) CHECK(true_latent(cohort, ind.id, 0.0) == SmallVector{3.0, 1.0});
    CHECK(true_latent(cohort, first, 4.2) == true_latent(cohort, first, 4.2));
    CHECK_THROWS_AS(true_latent(cohort, "nobody", 1.0), ldm::NotFoundError);
}

TEST_CASE("simulation is deterministic given the seed") {
    SimConfig c;
    c.seed = 77;
    const auto a = simulate_cohort(c), b = simulate_cohort(c);
    for (std::size_t i = 0; i < a.dataset.individuals.size(); ++i) {
        CHECK(a.dataset.individuals[i].items == b.dataset.individuals[i].items);
        CHECK(a.dataset.individuals[i].baseline == b.dataset.individuals[i].baseline);
    }
    c.seed = 78;
    CHECK_FALSE(simulate_cohort(c).dataset.individuals[0].items == a.dataset.individuals[0].items);
}

TEST_CASE("individual noise has the configured standard deviation") {
    SimConfig c;
    c.individuals = 4000;
    c.sigma_var = 0.0;
    c.seed = 3;
    const auto cohort = simulate_cohort(c);
    double s = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (const auto& ind : cohort.dataset.individuals)
        for (std::size_t k = 0; k < ind.visits(); ++k) {
            const auto u = true_latent(cohort, ind.id, ind.times[k]);
            for (std::size_t j = 0; j < 10; ++j) {
                const double e = ind.items(j, k) - u[j < 5 ? 0 : 1];
                s += e;
                s2 += e * e;
                ++n;
            }
        }
    const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
    CHECK(std::abs(sd - 0.5) <= 0.05 * 0.5);
}

TEST_CASE("baseline variables carry the true parameters") {
    const auto cohort = simulate_cohort(noiseless());
    std::set<std::vector<double>> distinct;
    for (std::size_t i = 0; i < cohort.truth.size(); ++i) {
        const auto& t = cohort.truth[i];
        const auto params = true_parameter_vector(cohort.config, t.params);
        CHECK(params.size() == 4);
        distinct.insert(params);
        const auto& b = cohort.dataset.individuals[i].baseline;
        for (std::size_t s = 0; s < 10; ++s) CHECK(b[s] == params[s % 4]);
        for (std::size_t s = 10; s < 50; ++s) CHECK(b[s] == 0.0);
    }
    CHECK(distinct.size() == 2);
}

TEST_CASE("drift configuration adds c to the informative cycle") {
    SimConfig c = noiseless();
    c.a1 = c.a2 = SmallMatrix(2);
    c.c1 = {0.3, -0.1};
    c.c2 = {-0.2, 0.2};
    const auto cohort = simulate_cohort(c);
    const auto& ind = cohort.dataset.individuals.front();
    CHECK(ind.baseline[4] == 0.3);
    CHECK(ind.baseline[5] == -0.1);
    const auto u = true_latent(cohort, ind.id, 2.0);
    CHECK(u[0] == doctest::Approx(3.6));
    CHECK(u[1] == doctest::Approx(0.8));
    CHECK(ground_truth_csv(cohort).rfind("id,group,a_11,a_12,a_21,a_22,c_1,c_2\n", 0) == 0);
}

TEST_CASE("invalid configurations are rejected") {
    SimConfig c;
    c.sigma_ind = -0.1;
    CHECK_THROWS_AS(simulate_cohort(c), ldm::InvalidArgument);
    c = SimConfig{};
    c.time_min = 11.0;
    CHECK_THROWS_AS(simulate_cohort(c), ldm::InvalidArgument);
    c = SimConfig{};
    c.individuals = 0;
    CHECK_THROWS_AS(simulate_cohort(c), ldm::InvalidArgument);
    c = SimConfig{};
    c.informative = 51;
    CHECK_THROWS_AS(simulate_cohort(c), ldm::InvalidArgument);
}

TEST_CASE("ground truth csv") {
    SimConfig c;
    c.individuals = 2;
    const auto csv = ground_truth_csv(simulate_cohort(c));
    CHECK(csv == "id,group,a_11,a_12,a_21,a_22\nsim1,1,-0.2,0.1,-0.1,0.1\nsim2,2,-0.2,-0.1,0.1,-0.2\n");
}

}
