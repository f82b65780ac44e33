#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "ldm/baselines.hpp"
#include "ldm/datagen.hpp"
#include "ldm/errors.hpp"
#include "ldm/model.hpp"
#include "loss_oracle.hpp"
#include "support.hpp"

using namespace ldm::model;
using ldm::grad::Tensor;
using ldm::pipeline::Individual;

namespace {

ModelConfig tiny_config(Dynamics dyn = Dynamics::full) {
    ModelConfig c;
    c.items = 3;
    c.baseline = 2;
    c.latent = 2;
    c.encoder_hidden = 4;
    c.decoder_hidden = 4;
    c.baseline_hidden = 4;
    c.dynamics = dyn;
    return c;
}

Individual tiny_individual(std::size_t visits = 2) {
    std::vector<double> times;
    std::vector<std::vector<double>> items;
    for (std::size_t k = 0; k < visits; ++k) {
        times.push_back(k == 0 ? 0.0 : 1.3 * static_cast<double>(k) + 0.2 * std::sin(static_cast<double>(k)));
        items.push_back({0.8 - 0.1 * k, -0.3 + 0.25 * std::cos(1.7 * k), 0.5 * std::sin(0.9 * k)});
    }
    return testing::make_individual("a", times, items, {0.4, -0.7});
}

Tensor fixed_noise(std::size_t d, std::size_t n) {
    Tensor e(d, n);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = std::sin(2.1 * static_cast<double>(i) + 0.3);
    return e;
}

void zero_network(ldm::nnet::Mlp& net) {
    for (auto& L : net.layers()) {
        for (auto& w : L.weight.data()) w = 0.0;
        for (auto& b : L.bias.data()) b = 0.0;
    }
}

// Loss-gradient check against central differences for every weight.
double worst_model_fd(const JointModel& model, const Individual& ind, const Tensor& noise) {
    ldm::grad::Graph g;
    const auto lv = build_loss(g, model, ind, noise, true);
    const auto grads = g.gradient_all(lv.total);
    const auto params = model.parameters();
    double worst = 0.0;
    const double h = 1e-5;
    for (const auto& [name, value] : params) {
        for (std::size_t i = 0; i < value.size(); ++i) {
            auto plus = params, minus = params;
            plus[name][i] += h;
            minus[name][i] -= h;
            JointModel mp = model, mm = model;
            mp.set_parameters(plus);
            mm.set_parameters(minus);
            const double num = (loss(mp, ind, noise).total - loss(mm, ind, noise).total) / (2 * h);
            const double an = grads.at(name)[i];
            worst = std::max(worst, std::abs(an - num) / std::max({1e-3, std::abs(an), std::abs(num)}));
        }
    }
    return worst;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("network shapes follow the configuration") {
    const JointModel full(tiny_config(), {}, 1);
    CHECK(full.eta_size() == 6);
    CHECK(full.encoder.output_size() == 4);
    CHECK(full.baseline_net.output_size() == 6);
    CHECK(JointModel(tiny_config(Dynamics::homogeneous), {}, 1).eta_size() == 4);
    CHECK(JointModel(tiny_config(Dynamics::constant), {}, 1).eta_size() == 2);
    CHECK_THROWS_AS(parse_dynamics("wiggly"), ldm::InvalidArgument);
}

TEST_CASE("encode with a zero encoder gives zero means and unit stds") {
    JointModel m(tiny_config(), {}, 3);
    zero_network(m.encoder);
    const auto enc = encode(m, tiny_individual(3));
    for (double v : enc.mean.data()) CHECK(v == 0.0);
    for (double v : enc.std.data()) CHECK(v == 1.0);
    Individual bad = tiny_individual();
    bad.items = Tensor(4, 2);
    CHECK_THROWS_AS(encode(m, bad), ldm::InvalidArgument);
}

TEST_CASE("encode is column-wise") {
    const JointModel m(tiny_config(), {}, 4);
    const Individual ind = tiny_individual(3);
    Individual perm = ind;
    for (std::size_t j = 0; j < 3; ++j) {
        perm.items(j, 0) = ind.items(j, 2);
        perm.items(j, 2) = ind.items(j, 0);
    }
    const auto a = encode(m, ind), b = encode(m, perm);
    for (std::size_t r = 0; r < 2; ++r) {
        CHECK(a.mean(r, 0) == b.mean(r, 2));
        CHECK(a.mean(r, 1) == b.mean(r, 1));
        CHECK(a.std(r, 2) == b.std(r, 0));
    }
}

TEST_CASE("encode matches a hand-computed forward pass") {
    const JointModel m(tiny_config(), {}, 5);
    const Individual ind = tiny_individual(2);
    const auto enc = encode(m, ind);
    for (std::size_t k = 0; k < 2; ++k) {
        const auto out = testing::forward(m.encoder, ind.items.column_values(k));
        for (std::size_t r = 0; r < 2; ++r) {
            CHECK(std::abs(enc.mean(r, k) - out[r]) <= 1e-12);
            CHECK(std::abs(enc.std(r, k) - std::exp(std::clamp(out[2 + r], -6.0, 3.0))) <= 1e-12);
        }
    }
}

TEST_CASE("baseline_to_params") {
    JointModel m(tiny_config(), {}, 6);
    const std::vector<double> b{0.4, -0.7};
    const auto p = baseline_to_params(m, b);
    const auto out = testing::forward(m.baseline_net, b);
    CHECK(out.size() == 6);
    CHECK(std::abs(p.A()(0, 0) - std::tanh(out[0])) <= 1e-12);
    CHECK(std::abs(p.A()(0, 1) - std::tanh(out[1])) <= 1e-12);
    CHECK(std::abs(p.A()(1, 0) - std::tanh(out[2])) <= 1e-12);
    CHECK(std::abs(p.A()(1, 1) - std::tanh(out[3])) <= 1e-12);
    CHECK(std::abs(p.c()[0] - std::tanh(out[4])) <= 1e-12);
    CHECK(std::abs(p.c()[1] - std::tanh(out[5])) <= 1e-12);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(p.A().row_major()[i]) <= 1.0);

    zero_network(m.baseline_net);
    const auto z = baseline_to_params(m, b);
    CHECK(z.a_is_zero());
    CHECK(z.c_is_zero());
    CHECK_THROWS_AS(baseline_to_params(m, std::vector<double>{1.0}), ldm::InvalidArgument);
}

TEST_CASE("smooth_posterior cases") {
    LatentEncoding one;
    one.mean = Tensor(2, 1, {0.3, -0.2});
    one.std = Tensor(2, 1, 1.0);
    one.times = {0.0};
    const ldm::ode::OdeParams p(SmallMatrix{{-0.2, 0.1}, {-0.1, 0.1}}, {0.1, 0.0});
    const std::vector<double> t0{0.0};
    CHECK(smooth_posterior(one, p, t0).points[0].estimate == SmallVector{0.3, -0.2});

    LatentEncoding three;
    three.mean = Tensor(2, 3, {1.0, 2.0, 4.0, -1.0, 0.0, 3.0});
    three.std = Tensor(2, 3, 1.0);
    three.times = {0.0, 1.0, 2.5};
    const ldm::ode::OdeParams zero(SmallMatrix(2), {0.0, 0.0});
    const std::vector<double> q{0.0, 0.7, 2.5};
    for (const auto& pt : smooth_posterior(three, zero, q).points) {
        CHECK(pt.estimate[0] == doctest::Approx(7.0 / 3.0));
        CHECK(pt.estimate[1] == doctest::Approx(2.0 / 3.0));
    }
}

TEST_CASE("smooth_posterior matches the straight-line oracle") {
    const SmallMatrix a{{-0.2, 0.1}, {-0.1, 0.1}};
    const std::vector<double> c{0.15, -0.05};
    for (std::size_t n : {3u, 5u, 7u}) {
        LatentEncoding enc;
        enc.mean = Tensor(2, n);
        enc.std = Tensor(2, n, 1.0);
        std::vector<testing::Vec> mean(n, testing::Vec(2));
        for (std::size_t k = 0; k < n; ++k) {
            enc.times.push_back(k == 0 ? 0.0 : enc.times.back() + 0.7 + 0.4 * std::sin(3.0 * k));
            for (std::size_t r = 0; r < 2; ++r) {
                mean[k][r] = enc.mean(r, k) = std::cos(1.3 * k + r) + 0.5 * r;
            }
        }
        const auto oracle = testing::oracle_smooth(mean, enc.times, a, c);
        const auto traj = smooth_posterior(enc, ldm::ode::OdeParams(a, {c[0], c[1]}), enc.times);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t r = 0; r < 2; ++r) CHECK(std::abs(traj.points[j].estimate[r] - oracle.smoothed[j][r]) <= 1e-10);
    }
}

TEST_CASE("graph smoothing equals the numeric smoothing") {
    const JointModel m(tiny_config(), {}, 12);
    const Individual ind = tiny_individual(6);
    ldm::grad::Graph g;
    const auto lv = build_loss(g, m, ind, fixed_noise(2, 6), false);
    const auto traj = smooth_posterior(encode(m, ind), baseline_to_params(m, ind.baseline), ind.times);
    for (std::size_t k = 0; k < 6; ++k)
        for (std::size_t r = 0; r < 2; ++r)
            CHECK(std::abs(lv.smoothed.value()(r, k) - traj.points[k].estimate[r]) <= 1e-10);
}

TEST_CASE("kl_diag_gauss") {
    CHECK(kl_diag_gauss({0.0, 0.0}, {1.0, 1.0}) == 0.0);
    CHECK(kl_diag_gauss({1.0}, {1.0}) == doctest::Approx(0.5).epsilon(1e-15));
    const double e = std::exp(1.0);
    CHECK(kl_diag_gauss({0.0}, {e}) == doctest::Approx(0.5 * (e * e - 3.0)).epsilon(1e-14));
    CHECK(0.5 * (e * e - 3.0) == doctest::Approx(2.19453).epsilon(1e-5));
    CHECK_THROWS_AS(kl_diag_gauss({0.0}, {0.0}), ldm::InvalidArgument);
    CHECK_THROWS_AS(kl_diag_gauss({0.0}, {-1.0}), ldm::InvalidArgument);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int i = 0; i < 1000; ++i) CHECK(kl_diag_gauss({u(rng), u(rng)}, {std::exp(u(rng)), std::exp(u(rng))}) >= 0.0);
}

TEST_CASE("loss matches the scalar recomputation") {
    for (Dynamics dyn : {Dynamics::full, Dynamics::homogeneous, Dynamics::constant})
        for (std::size_t visits : {1u, 2u, 5u}) {
            CAPTURE(visits);
            const JointModel m(tiny_config(dyn), {0.7, 1.3, 0.1}, 21);
            const Individual ind = tiny_individual(visits);
            const Tensor noise = fixed_noise(2, visits);
            const auto got = loss(m, ind, noise);
            const auto want = testing::oracle_loss(m, ind, noise);
            CHECK(std::abs(got.kl - want.kl) <= 1e-10);
            CHECK(std::abs(got.reconstruction - want.reconstruction) <= 1e-10);
            CHECK(std::abs(got.consistency - want.consistency) <= 1e-10);
            CHECK(std::abs(got.regularizer - want.regularizer) <= 1e-10);
            CHECK(std::abs(got.total - want.total) <= 1e-10);
            CHECK(got.kl >= 0.0);
            CHECK(std::abs(got.total - (got.kl + got.reconstruction + got.consistency + got.regularizer)) <= 1e-12);
        }
}

TEST_CASE("alpha = beta = 0 reduces the loss to the negative ELBO") {
    const JointModel m(tiny_config(), {0.0, 0.0, 0.1}, 8);
    const Individual ind = tiny_individual(1);
    const Tensor noise = fixed_noise(2, 1);
    const auto b = loss(m, ind, noise);
    CHECK(b.consistency == 0.0);
    CHECK(b.regularizer == 0.0);
    // Independent plain-VAE negative ELBO with the KL helper.
    const auto enc = encode(m, ind);
    const double kl = kl_diag_gauss(enc.mean_at(0), enc.std_at(0));
    SmallVector z(2);
    for (std::size_t r = 0; r < 2; ++r) z[r] = enc.mean(r, 0) + enc.std(r, 0) * noise(r, 0);
    const auto xh = decode(m, z);
    double rec = 0.0;
    for (std::size_t j = 0; j < 3; ++j) rec += 0.5 * (ind.items(j, 0) - xh[j]) * (ind.items(j, 0) - xh[j]);
    CHECK(std::abs(b.total - (kl + rec)) <= 1e-12);
}

TEST_CASE("zero dynamics and a single visit give zero consistency") {
    JointModel m(tiny_config(), {}, 9);
    zero_network(m.baseline_net);
    CHECK(loss(m, tiny_individual(1), fixed_noise(2, 1)).consistency == 0.0);
}

TEST_CASE("loss gradient matches central differences for every weight group") {
    const JointModel m(tiny_config(), {1.0, 1.0, 0.1}, 31);
    CHECK(worst_model_fd(m, tiny_individual(2), fixed_noise(2, 2)) <= 1e-4);
    CHECK(worst_model_fd(m, tiny_individual(5), fixed_noise(2, 5)) <= 1e-4);
    const JointModel h(tiny_config(Dynamics::homogeneous), {1.0, 1.0, 0.1}, 32);
    CHECK(worst_model_fd(h, tiny_individual(4), fixed_noise(2, 4)) <= 1e-4);
}

TEST_CASE("checkpoint round trip is bit exact") {
    const JointModel m(tiny_config(), {0.3, 2.0, 0.1}, 77);
    const auto path = std::filesystem::temp_directory_path() / "ldm_test_checkpoint.json";
    m.save(path);
    const JointModel back = JointModel::load(path);
    CHECK(back == m);
    std::filesystem::remove(path);
    auto j = m.to_json();
    j["networks"]["encoder"]["sizes"] = {3, 4, 5};
    CHECK_THROWS_AS(JointModel::from_json(j), ldm::SchemaError);
}

TEST_CASE("training with zero epochs leaves the model unchanged") {
    JointModel m(tiny_config(), {}, 1);
    const JointModel before = m;
    TrainConfig tc;
    tc.epochs = 0;
    const auto r = train(m, testing::dataset_of({tiny_individual(3)}), tc);
    CHECK(r.trace.empty());
    CHECK(m == before);
}

TEST_CASE("training is deterministic and lowers the loss on the default simulation") {
    ldm::datagen::SimConfig sim;
    sim.seed = 5;
    const auto cohort = ldm::datagen::simulate_cohort(sim);
    auto run = [&] {
        JointModel m(ModelConfig{}, {}, 13);
        TrainConfig tc;
        tc.epochs = 20;
        tc.seed = 99;
        return std::make_pair(train(m, cohort.dataset, tc), m);
    };
    const auto [a, ma] = run();
    const auto [b, mb] = run();
    REQUIRE(a.trace.size() == 20);
    for (std::size_t e = 0; e < 20; ++e) CHECK(a.trace[e].mean.total == b.trace[e].mean.total);
    CHECK(ma == mb);
    CHECK(a.trace.back().mean.total < a.trace.front().mean.total);
}

TEST_CASE("non-finite steps are skipped and too many raise TrainingDiverged") {
    JointModel m(tiny_config(), {}, 1);
    Individual bad = tiny_individual(2);
    bad.items(0, 0) = 1e300;
    TrainConfig tc;
    tc.epochs = 1;
    CHECK_THROWS_AS(train(m, testing::dataset_of({bad}), tc), ldm::TrainingDiverged);

    std::vector<Individual> inds;
    for (int i = 0; i < 20; ++i) inds.push_back(tiny_individual(2));
    inds[3] = bad;
    JointModel m2(tiny_config(), {}, 1);
    const auto r = train(m2, testing::dataset_of(inds), tc);
    CHECK(r.trace[0].skipped == 1);
    CHECK(r.trace[0].steps == 19);
}

TEST_CASE("predict_next contract") {
    const JointModel m(tiny_config(), {}, 40);
    const Individual ind = tiny_individual(4);
    CHECK_THROWS_AS(predict_next(m, ind, 1, ind.times[1]), ldm::InvalidArgument);
    CHECK_THROWS_AS(predict_next(m, ind, 4, 10.0), ldm::InvalidArgument);

    // Limit t_query -> t_0: the only start is visit 0.
    const auto p = predict_next(m, ind, 0, 1e-9);
    const auto enc = encode(m, ind);
    CHECK(std::abs(p.latent[0] - enc.mean(0, 0)) <= 1e-6);
    CHECK(std::abs(p.latent[1] - enc.mean(1, 0)) <= 1e-6);
    CHECK(p.items == decode(m, p.latent));
}

TEST_CASE("predict_next with zero dynamics combines carried-forward encodings") {
    JointModel m(tiny_config(), {}, 41);
    zero_network(m.baseline_net);
    const Individual ind = tiny_individual(4);
    const auto enc = encode(m, ind);
    const auto p = predict_next(m, ind, 1, 5.0);
    for (std::size_t r = 0; r < 2; ++r) CHECK(p.latent[r] == doctest::Approx(0.5 * (enc.mean(r, 0) + enc.mean(r, 1))));
}

TEST_CASE("predict_next never reads future visits") {
    const JointModel m(tiny_config(), {}, 42);
    const Individual ind = tiny_individual(5);
    for (std::size_t k = 0; k + 1 < 5; ++k) {
        Individual mutated = ind;
        for (std::size_t v = k + 1; v < 5; ++v) {
            for (std::size_t j = 0; j < 3; ++j) mutated.items(j, v) += 10.0 * (j + 1);
            mutated.times[v] += 0.5 * static_cast<double>(v);
        }
        const auto a = predict_next(m, ind, k, ind.times[k] + 1.1);
        const auto b = predict_next(m, mutated, k, ind.times[k] + 1.1);
        CHECK(a.latent == b.latent);
        CHECK(a.items == b.items);
    }
}

TEST_CASE("trained model beats shifted regression on most visits of a noiseless cohort") {
    ldm::datagen::SimConfig sim;
    sim.sigma_ind = sim.sigma_var = sim.sigma_info = sim.sigma_noise = 0.0;
    sim.seed = 17;
    const auto cohort = ldm::datagen::simulate_cohort(sim);
    JointModel m(ModelConfig{}, {}, 23);
    TrainConfig tc;
    tc.epochs = 30;
    tc.seed = 3;
    train(m, cohort.dataset, tc);
    std::size_t better = 0, total = 0;
    for (const auto& ind : cohort.dataset.individuals) {
        const auto enc = encode(m, ind);
        for (std::size_t k = 0; k + 1 < ind.visits(); ++k) {
            std::vector<SmallVector> past;
            for (std::size_t j = 0; j <= k; ++j) past.push_back(enc.mean_at(j));
            const std::span<const double> times(ind.times.data(), k + 1);
            const auto fit = ldm::baselines::fit_ols(times, past, std::min<std::size_t>(1, k));
            const auto reg = ldm::baselines::predict_regression(fit, ind.times[k], past[k], ind.times[k + 1], true);
            const auto ode = predict_next(m, ind, k, ind.times[k + 1]).latent;
            const auto obs = enc.mean_at(k + 1);
            double e_reg = 0.0, e_ode = 0.0;
            for (std::size_t r = 0; r < 2; ++r) {
                e_reg += (reg[r] - obs[r]) * (reg[r] - obs[r]);
                e_ode += (ode[r] - obs[r]) * (ode[r] - obs[r]);
            }
            better += e_ode < e_reg;
            ++total;
        }
    }
    MESSAGE("ode better on " << better << " of " << total << " visits");
    CHECK(static_cast<double>(better) >= 0.8 * static_cast<double>(total));
}

}
