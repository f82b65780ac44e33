#include "ldm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ldm/errors.hpp"
#include "ldm/io.hpp"

namespace ldm::model {

using grad::Graph;
using grad::SumAxis;
using grad::Tensor;
using grad::Var;

const char* dynamics_name(Dynamics d) noexcept {
    switch (d) {
        case Dynamics::full: return "full";
        case Dynamics::homogeneous: return "homogeneous";
        case Dynamics::constant: return "constant";
    }
    return "full";
}

Dynamics parse_dynamics(const std::string& s) {
    if (s == "full") return Dynamics::full;
    if (s == "homogeneous") return Dynamics::homogeneous;
    if (s == "constant") return Dynamics::constant;
    throw InvalidArgument("unknown dynamics '" + s + "' (expected full, homogeneous or constant)");
}

SmallVector LatentEncoding::mean_at(std::size_t k) const { return SmallVector(mean.column_values(k)); }
SmallVector LatentEncoding::std_at(std::size_t k) const { return SmallVector(std.column_values(k)); }

JointModel::JointModel(ModelConfig config, LossConfig loss, std::uint64_t seed)
    : config_(config), loss_(loss), seed_(seed) {
    if (config_.items == 0 || config_.baseline == 0 || config_.latent == 0)
        throw InvalidArgument("JointModel: items, baseline and latent sizes must be positive");
    const std::size_t d = config_.latent;
    encoder = nnet::init_mlp({config_.items, config_.encoder_hidden, 2 * d}, derive_seed(seed, "encoder"));
    decoder = nnet::init_mlp({d, config_.decoder_hidden, config_.items}, derive_seed(seed, "decoder"));
    baseline_net = nnet::init_mlp({config_.baseline, config_.baseline_hidden, eta_size()},
                                  derive_seed(seed, "baseline-net"));
}

std::size_t JointModel::eta_size() const noexcept {
    const std::size_t d = config_.latent;
    switch (config_.dynamics) {
        case Dynamics::full: return d * d + d;
        case Dynamics::homogeneous: return d * d;
        case Dynamics::constant: return d;
    }
    return d * d + d;
}

nnet::ParamMap JointModel::parameters() const {
    nnet::ParamMap p;
    nnet::collect_params(encoder, "encoder", p);
    nnet::collect_params(decoder, "decoder", p);
    nnet::collect_params(baseline_net, "baseline", p);
    return p;
}

void JointModel::set_parameters(const nnet::ParamMap& params) {
    nnet::assign_params(encoder, "encoder", params);
    nnet::assign_params(decoder, "decoder", params);
    nnet::assign_params(baseline_net, "baseline", params);
}

nlohmann::json JointModel::to_json() const {
    return {
        {"format", "ldm-checkpoint"},
        {"version", 1},
        {"seed", seed_},
        {"model",
         {{"items", config_.items},
          {"baseline", config_.baseline},
          {"latent", config_.latent},
          {"encoder_hidden", config_.encoder_hidden},
          {"decoder_hidden", config_.decoder_hidden},
          {"baseline_hidden", config_.baseline_hidden},
          {"dynamics", dynamics_name(config_.dynamics)},
          {"param_scale", config_.param_scale}}},
        {"loss", {{"alpha", loss_.alpha}, {"beta", loss_.beta}, {"variance_offset", loss_.variance_offset}}},
        {"optimizer", nnet::adam_to_json(optimizer_)},
        {"networks",
         {{"encoder", nnet::mlp_to_json(encoder)},
          {"decoder", nnet::mlp_to_json(decoder)},
          {"baseline", nnet::mlp_to_json(baseline_net)}}},
    };
}

JointModel JointModel::from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "ldm-checkpoint") throw SchemaError("checkpoint: wrong format tag");
        JointModel m;
        m.seed_ = j.at("seed").get<std::uint64_t>();
        const auto& jm = j.at("model");
        m.config_.items = jm.at("items").get<std::size_t>();
        m.config_.baseline = jm.at("baseline").get<std::size_t>();
        m.config_.latent = jm.at("latent").get<std::size_t>();
        m.config_.encoder_hidden = jm.at("encoder_hidden").get<std::size_t>();
        m.config_.decoder_hidden = jm.at("decoder_hidden").get<std::size_t>();
        m.config_.baseline_hidden = jm.at("baseline_hidden").get<std::size_t>();
        m.config_.dynamics = parse_dynamics(jm.at("dynamics").get<std::string>());
        m.config_.param_scale = jm.at("param_scale").get<double>();
        const auto& jl = j.at("loss");
        m.loss_.alpha = jl.at("alpha").get<double>();
        m.loss_.beta = jl.at("beta").get<double>();
        m.loss_.variance_offset = jl.at("variance_offset").get<double>();
        m.optimizer_ = nnet::adam_from_json(j.at("optimizer"));
        const auto& jn = j.at("networks");
        m.encoder = nnet::mlp_from_json(jn.at("encoder"));
        m.decoder = nnet::mlp_from_json(jn.at("decoder"));
        m.baseline_net = nnet::mlp_from_json(jn.at("baseline"));
        const std::size_t d = m.config_.latent;
        if (m.encoder.input_size() != m.config_.items || m.encoder.output_size() != 2 * d ||
            m.decoder.input_size() != d || m.decoder.output_size() != m.config_.items ||
            m.baseline_net.input_size() != m.config_.baseline || m.baseline_net.output_size() != m.eta_size())
            throw SchemaError("checkpoint: network shapes do not match the model configuration");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("checkpoint: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw SchemaError(std::string("checkpoint: ") + e.what());
    }
}

void JointModel::save(const std::filesystem::path& path) const { io::write_text(path, to_json().dump(2) + "\n"); }

JointModel JointModel::load(const std::filesystem::path& path) {
    const auto lines = io::read_lines(path);
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("checkpoint '" + path.string() + "': " + e.what());
    }
    return from_json(j);
}

namespace {

void check_individual(const JointModel& model, const Individual& ind) {
    if (ind.visits() == 0) throw InvalidArgument("individual '" + ind.id + "' has no visits");
    if (ind.items.rows() != model.config().items || ind.items.cols() != ind.visits())
        throw InvalidArgument("individual '" + ind.id + "': item matrix is " + std::to_string(ind.items.rows()) +
                              "x" + std::to_string(ind.items.cols()) + ", expected " +
                              std::to_string(model.config().items) + " rows and one column per visit");
    if (ind.baseline.size() != model.config().baseline)
        throw InvalidArgument("individual '" + ind.id + "': baseline has " + std::to_string(ind.baseline.size()) +
                              " entries, expected " + std::to_string(model.config().baseline));
}

// Splits the encoder output into (mean, std) with the log-std clamp.
LatentEncoding split_encoder_output(const Tensor& out, std::size_t d, std::vector<double> times) {
    LatentEncoding enc;
    enc.mean = Tensor(d, out.cols());
    enc.std = Tensor(d, out.cols());
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) {
            enc.mean(r, c) = out(r, c);
            enc.std(r, c) = std::exp(std::clamp(out(d + r, c), kLogStdMin, kLogStdMax));
        }
    enc.times = std::move(times);
    return enc;
}

ode::OdeParams params_from_eta(const Tensor& eta, const ModelConfig& cfg) {
    const std::size_t d = cfg.latent;
    SmallMatrix a(d);
    SmallVector c(d);
    std::size_t k = 0;
    if (cfg.dynamics != Dynamics::constant)
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t col = 0; col < d; ++col) a(r, col) = eta[k++];
    if (cfg.dynamics != Dynamics::homogeneous)
        for (std::size_t r = 0; r < d; ++r) c[r] = eta[k++];
    return ode::OdeParams(std::move(a), std::move(c));
}

// Augmented generator [[A, c], [0, 0]] from the squashed network output.
Var augmented_generator(Graph& g, Var eta, const ModelConfig& cfg) {
    const std::size_t d = cfg.latent;
    Var a = cfg.dynamics == Dynamics::constant ? g.constant(Tensor(d, d))
                                               : grad::reshape(grad::slice(eta, 0, d * d, 0, 1), d, d);
    Var c = cfg.dynamics == Dynamics::homogeneous
                ? g.constant(Tensor(d, 1))
                : grad::slice(eta, cfg.dynamics == Dynamics::constant ? 0 : d * d, d, 0, 1);
    const Var top_parts[] = {a, c};
    const Var rows[] = {grad::concat_cols(top_parts), g.constant(Tensor(1, d + 1))};
    return grad::concat_rows(rows);
}

struct SmoothVars {
    Var smoothed;                 // d x n
    std::vector<Var> solutions;   // per target j: d x n, column k = start k
};

// Graph form of the fit-time smoothing; mirrors ode::weighted_estimate with
// StartSet::all and sample variances.
SmoothVars smooth_graph(Graph& g, Var mean, Var generator, std::span<const double> times) {
    const std::size_t n = times.size();
    const std::size_t d = mean.rows();
    SmoothVars out;
    if (n == 1) {
        out.smoothed = mean;
        out.solutions.push_back(mean);
        return out;
    }
    std::vector<Var> fwd, bwd;  // fwd[k]: t_k -> t_{k+1}; bwd[k]: t_{k+1} -> t_k
    for (std::size_t k = 0; k + 1 < n; ++k) {
        const double dt = times[k + 1] - times[k];
        fwd.push_back(grad::expm(generator, dt));
        bwd.push_back(grad::expm(generator, -dt));
    }
    Var one = g.constant(1.0);
    // sol[k][j]: solution from start k evaluated at t_j
    std::vector<std::vector<Var>> sol(n, std::vector<Var>(n));
    for (std::size_t k = 0; k < n; ++k) {
        Var start = grad::col(mean, k);
        sol[k][k] = start;
        const Var parts[] = {start, one};
        const Var aug = grad::concat_rows(parts);
        Var v = aug;
        for (std::size_t j = k + 1; j < n; ++j) {
            v = grad::matmul(fwd[j - 1], v);
            sol[k][j] = grad::rows_range(v, 0, d);
        }
        v = aug;
        for (std::size_t j = k; j-- > 0;) {
            v = grad::matmul(bwd[j], v);
            sol[k][j] = grad::rows_range(v, 0, d);
        }
    }
    Var floor_ = g.constant(Tensor(d, 1, ode::kVarianceFloor));
    (void)floor_;
    std::vector<Var> targets;
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<Var> cols(n);
        for (std::size_t k = 0; k < n; ++k) cols[k] = sol[k][j];
        Var sj = grad::concat_cols(cols);
        out.solutions.push_back(sj);

        std::vector<Var> inv(n);
        std::vector<bool> defined(n, false);
        std::vector<Var> defined_inv;
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t lo = std::min(k, j);
            const std::size_t hi = std::max(k, j);
            const std::size_t between = hi - lo - 1;
            if (hi == lo || between < 2) continue;
            Var var = grad::sample_variance_across_cols(grad::slice(sj, 0, d, lo + 1, between));
            inv[k] = grad::reciprocal(grad::clamp(var, ode::kVarianceFloor, INFINITY));
            defined[k] = true;
            defined_inv.push_back(inv[k]);
        }
        if (defined_inv.empty()) {
            targets.push_back(grad::mean_across_cols(sj));
            continue;
        }
        Var fill = grad::mean_across_cols(grad::concat_cols(defined_inv));
        for (std::size_t k = 0; k < n; ++k)
            if (!defined[k]) inv[k] = fill;
        Var w = grad::concat_cols(inv);
        Var num = grad::sum(w * sj, SumAxis::across_cols);
        Var den = grad::sum(w, SumAxis::across_cols);
        targets.push_back(num * grad::reciprocal(den));
    }
    out.smoothed = grad::concat_cols(targets);
    return out;
}

}  // namespace

LatentEncoding encode(const JointModel& model, const Individual& individual) {
    if (individual.items.rows() != model.config().items)
        throw InvalidArgument("encode: item matrix has " + std::to_string(individual.items.rows()) +
                              " rows, encoder expects " + std::to_string(model.config().items));
    const Tensor out = nnet::mlp_forward(model.encoder, individual.items);
    return split_encoder_output(out, model.config().latent, individual.times);
}

ode::OdeParams baseline_to_params(const JointModel& model, std::span<const double> baseline) {
    if (baseline.size() != model.config().baseline)
        throw InvalidArgument("baseline_to_params: baseline has " + std::to_string(baseline.size()) +
                              " entries, expected " + std::to_string(model.config().baseline));
    Tensor eta = nnet::mlp_forward(model.baseline_net, Tensor::column(baseline));
    for (std::size_t k = 0; k < eta.size(); ++k) eta[k] = model.config().param_scale * std::tanh(eta[k]);
    return params_from_eta(eta, model.config());
}

ode::SmoothedTrajectory smooth_posterior(const LatentEncoding& encoding, const ode::OdeParams& params,
                                         std::span<const double> query_times) {
    std::vector<SmallVector> values;
    for (std::size_t k = 0; k < encoding.visits(); ++k) values.push_back(encoding.mean_at(k));
    const auto starts = ode::make_starts(params, encoding.times, values);
    ode::SmoothedTrajectory traj;
    for (double t : query_times)
        traj.points.push_back(
            ode::weighted_estimate(starts, params, t, ode::SampleVarianceMode{}, ode::StartSet::all));
    return traj;
}

double kl_diag_gauss(const SmallVector& mu, const SmallVector& sigma) {
    if (mu.dim() != sigma.dim()) throw InvalidArgument("kl_diag_gauss: dimension mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < mu.dim(); ++i) {
        if (!(sigma[i] > 0.0)) throw InvalidArgument("kl_diag_gauss: sigma must be positive");
        kl += mu[i] * mu[i] + sigma[i] * sigma[i] - 1.0 - 2.0 * std::log(sigma[i]);
    }
    return 0.5 * kl;
}

LossVars build_loss(Graph& g, const JointModel& model, const Individual& individual, const Tensor& noise,
                    bool trainable) {
    check_individual(model, individual);
    const ModelConfig& cfg = model.config();
    const LossConfig& lc = model.loss_config();
    const std::size_t d = cfg.latent;
    const std::size_t n = individual.visits();
    if (noise.rows() != d || noise.cols() != n) throw InvalidArgument("build_loss: noise must be d x visits");

    const auto enc = trainable ? nnet::bind(g, model.encoder, "encoder") : nnet::bind_constant(g, model.encoder);
    const auto dec = trainable ? nnet::bind(g, model.decoder, "decoder") : nnet::bind_constant(g, model.decoder);
    const auto base =
        trainable ? nnet::bind(g, model.baseline_net, "baseline") : nnet::bind_constant(g, model.baseline_net);

    LossVars lv;
    Var x = g.constant(individual.items);
    Var enc_out = nnet::mlp_forward(enc, x);
    lv.mean = grad::rows_range(enc_out, 0, d);
    Var log_std = grad::clamp(grad::rows_range(enc_out, d, d), kLogStdMin, kLogStdMax);
    lv.std = grad::exp(log_std);

    Var eta = grad::scale(grad::tanh(nnet::mlp_forward(base, g.constant(Tensor::column(individual.baseline)))),
                          cfg.param_scale);
    Var generator = augmented_generator(g, eta, cfg);
    const SmoothVars sm = smooth_graph(g, lv.mean, generator, individual.times);
    lv.smoothed = sm.smoothed;

    // Reparameterized sample around the smoothed mean.
    Var z = lv.smoothed + lv.std * g.constant(noise);
    Var x_hat = nnet::mlp_forward(dec, z);
    lv.reconstruction = grad::scale(grad::sum(grad::square(x - x_hat)), 0.5);

    lv.kl = grad::scale(grad::sum(grad::square(lv.smoothed)) + grad::sum(grad::square(lv.std)), 0.5) -
            grad::sum(log_std) + g.constant(-0.5 * static_cast<double>(d * n));

    lv.consistency = grad::scale(grad::sum(grad::square(lv.mean - lv.smoothed)), lc.alpha);

    if (n >= 2) {
        Var offset = g.constant(Tensor(d, 1, lc.variance_offset));
        Var encoded_term = grad::sum(grad::log(grad::sample_variance_across_cols(lv.mean) + offset));
        std::vector<Var> per_visit;
        for (const Var& sj : sm.solutions)
            per_visit.push_back(grad::sum(grad::log(grad::sample_variance_across_cols(sj) + offset)));
        Var solution_term = grad::sum(grad::concat_rows(per_visit));
        lv.regularizer =
            grad::scale(solution_term - grad::scale(encoded_term, static_cast<double>(n)), lc.beta);
    } else {
        lv.regularizer = g.constant(0.0);
    }
    lv.total = lv.kl + lv.reconstruction + lv.consistency + lv.regularizer;
    return lv;
}

LossBreakdown loss(const JointModel& model, const Individual& individual, const Tensor& noise) {
    Graph g;
    LossVars lv;
    try {
        lv = build_loss(g, model, individual, noise, false);
    } catch (const NonFiniteError& e) {
        throw NonFiniteError(e.where(), std::string("loss for '") + individual.id + "': " + e.what());
    }
    LossBreakdown b{lv.kl.value().item(), lv.reconstruction.value().item(), lv.consistency.value().item(),
                    lv.regularizer.value().item(), lv.total.value().item()};
    return b;
}

Tensor draw_noise(std::size_t latent, std::size_t visits, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor eps(latent, visits);
    for (std::size_t k = 0; k < eps.size(); ++k) eps[k] = normal(rng);
    return eps;
}

LossBreakdown loss(const JointModel& model, const Individual& individual, Rng& rng) {
    return loss(model, individual, draw_noise(model.config().latent, individual.visits(), rng));
}

TrainResult train(JointModel& model, const Dataset& data, const TrainConfig& config, const EpochCallback& on_epoch) {
    TrainResult result;
    if (config.epochs == 0) return result;
    if (data.individuals.empty()) throw InvalidArgument("train: dataset is empty");
    for (const auto& ind : data.individuals) check_individual(model, ind);

    model.optimizer_config() = config.optimizer;
    nnet::OptimizerState state;
    state.config = config.optimizer;
    nnet::ParamMap params = model.parameters();
    const std::size_t n = data.individuals.size();
    std::vector<std::size_t> order(n);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng = make_rng(config.seed, "train-shuffle", epoch);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        Rng noise_rng = make_rng(config.seed, "train-noise", epoch);

        EpochStats stats;
        stats.epoch = epoch + 1;
        for (std::size_t idx : order) {
            const Individual& ind = data.individuals[idx];
            const Tensor noise = draw_noise(model.config().latent, ind.visits(), noise_rng);
            try {
                Graph g;
                const LossVars lv = build_loss(g, model, ind, noise, true);
                const auto grads = g.gradient_all(lv.total);
                nnet::optimizer_step(params, grads, state);
                model.set_parameters(params);
                stats.mean.kl += lv.kl.value().item();
                stats.mean.reconstruction += lv.reconstruction.value().item();
                stats.mean.consistency += lv.consistency.value().item();
                stats.mean.regularizer += lv.regularizer.value().item();
                stats.mean.total += lv.total.value().item();
                ++stats.steps;
            } catch (const NonFiniteError&) {
                ++stats.skipped;
            }
        }
        if (static_cast<double>(stats.skipped) > config.max_skipped_fraction * static_cast<double>(n)) {
            std::ostringstream msg;
            msg << "training diverged: " << stats.skipped << " of " << n << " steps skipped in epoch " << stats.epoch;
            throw TrainingDiverged(msg.str());
        }
        if (stats.steps > 0) {
            const double s = static_cast<double>(stats.steps);
            stats.mean.kl /= s;
            stats.mean.reconstruction /= s;
            stats.mean.consistency /= s;
            stats.mean.regularizer /= s;
            stats.mean.total /= s;
        }
        result.trace.push_back(stats);
        if (on_epoch) on_epoch(stats);
    }
    return result;
}

std::string trace_csv(const TrainResult& result) {
    std::ostringstream out;
    out << "epoch,mean_loss,kl,reconstruction,consistency,regularizer,steps,skipped\n";
    for (const auto& e : result.trace) {
        out << e.epoch << ',' << io::format_report(e.mean.total) << ',' << io::format_report(e.mean.kl) << ','
            << io::format_report(e.mean.reconstruction) << ',' << io::format_report(e.mean.consistency) << ','
            << io::format_report(e.mean.regularizer) << ',' << e.steps << ',' << e.skipped << '\n';
    }
    return out.str();
}

std::vector<double> decode(const JointModel& model, const SmallVector& latent) {
    const Tensor out = nnet::mlp_forward(model.decoder, Tensor::column(latent.values()));
    return std::vector<double>(out.data().begin(), out.data().end());
}

Prediction predict_next(const JointModel& model, const Individual& individual, std::size_t k, double t_query) {
    if (k >= individual.visits()) throw InvalidArgument("predict_next: anchor visit index out of range");
    if (!(t_query > individual.times[k])) throw InvalidArgument("predict_next: t_query must be after t_k");
    const Individual past = individual.prefix(k + 1);
    check_individual(model, past);
    const LatentEncoding enc = encode(model, past);
    const ode::OdeParams params = baseline_to_params(model, past.baseline);
    std::vector<SmallVector> values;
    for (std::size_t j = 0; j < enc.visits(); ++j) values.push_back(enc.mean_at(j));
    const auto starts = ode::make_starts(params, enc.times, values);
    const auto pt = ode::weighted_estimate(starts, params, t_query, ode::SampleVarianceMode{}, ode::StartSet::causal);
    Prediction p;
    p.latent = pt.estimate;
    p.items = decode(model, p.latent);
    return p;
}

}  // namespace ldm::model
