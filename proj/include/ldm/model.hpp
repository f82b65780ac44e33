#pragma once

// Joint model: a VAE whose latent posterior means follow individual linear
// ODE dynamics. A baseline network maps each individual's covariates to
// their ODE parameters; the smoothed latent trajectory is the
// inverse-variance weighted combination of solutions started at every
// visit; everything is trained jointly, one individual per update.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ldm/grad.hpp"
#include "ldm/nnet.hpp"
#include "ldm/odecore.hpp"
#include "ldm/pipeline.hpp"
#include "ldm/rng.hpp"

namespace ldm::model {

using linalg::SmallMatrix;
using linalg::SmallVector;
using pipeline::Dataset;
using pipeline::Individual;

enum class Dynamics {
    full,         // A (d*d) and c (d)
    homogeneous,  // A only, c = 0
    constant,     // c only, A = 0
};

const char* dynamics_name(Dynamics d) noexcept;
Dynamics parse_dynamics(const std::string& s);

inline constexpr double kLogStdMin = -6.0;
inline constexpr double kLogStdMax = 3.0;

struct ModelConfig {
    std::size_t items = 10;
    std::size_t baseline = 50;
    std::size_t latent = 2;
    std::size_t encoder_hidden = 16;
    std::size_t decoder_hidden = 16;
    std::size_t baseline_hidden = 32;
    Dynamics dynamics = Dynamics::full;
    // ODE parameters are param_scale * tanh(network output).
    double param_scale = 1.0;

    bool operator==(const ModelConfig&) const = default;
};

struct LossConfig {
    double alpha = 1.0;  // consistency weight
    double beta = 1.0;   // variance-regularizer weight
    double variance_offset = 0.1;

    bool operator==(const LossConfig&) const = default;
};

struct TrainConfig {
    std::size_t epochs = 30;
    nnet::AdamConfig optimizer;
    std::uint64_t seed = 0;
    double max_skipped_fraction = 0.1;
};

struct LatentEncoding {
    grad::Tensor mean;  // d x visits
    grad::Tensor std;   // d x visits, > 0
    std::vector<double> times;

    std::size_t visits() const noexcept { return times.size(); }
    SmallVector mean_at(std::size_t k) const;
    SmallVector std_at(std::size_t k) const;
};

struct LossBreakdown {
    double kl = 0.0;
    double reconstruction = 0.0;  // 0.5 ||x - x_hat||^2 (Gaussian, unit scale, constant dropped)
    double consistency = 0.0;     // alpha-weighted
    double regularizer = 0.0;     // beta-weighted
    double total = 0.0;
};

class JointModel {
public:
    JointModel() = default;
    JointModel(ModelConfig config, LossConfig loss, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }
    const LossConfig& loss_config() const noexcept { return loss_; }
    LossConfig& loss_config() noexcept { return loss_; }
    std::uint64_t seed() const noexcept { return seed_; }
    nnet::AdamConfig& optimizer_config() noexcept { return optimizer_; }
    const nnet::AdamConfig& optimizer_config() const noexcept { return optimizer_; }

    // Network outputs feeding the ODE parameters.
    std::size_t eta_size() const noexcept;

    nnet::Mlp encoder;       // p -> hidden -> 2d (means, log-stds)
    nnet::Mlp decoder;       // d -> hidden -> p
    nnet::Mlp baseline_net;  // q -> hidden -> eta_size

    nnet::ParamMap parameters() const;
    void set_parameters(const nnet::ParamMap& params);

    nlohmann::json to_json() const;
    static JointModel from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static JointModel load(const std::filesystem::path& path);

    bool operator==(const JointModel&) const = default;

private:
    ModelConfig config_;
    LossConfig loss_;
    nnet::AdamConfig optimizer_;
    std::uint64_t seed_ = 0;
};

LatentEncoding encode(const JointModel& model, const Individual& individual);
ode::OdeParams baseline_to_params(const JointModel& model, std::span<const double> baseline);

// Fit-time smoothing over the observed window: every visit is a start
// (solving backwards where needed) and variances come from the sample
// spread of intermediate solutions.
ode::SmoothedTrajectory smooth_posterior(const LatentEncoding& encoding, const ode::OdeParams& params,
                                         std::span<const double> query_times);

// 0.5 * sum(mu^2 + sigma^2 - 1 - 2 log sigma).
double kl_diag_gauss(const SmallVector& mu, const SmallVector& sigma);

// Graph nodes of one individual's loss.
struct LossVars {
    grad::Var total, kl, reconstruction, consistency, regularizer;
    grad::Var mean, smoothed, std;  // d x visits
};

// Builds the loss in `g`. With `trainable` the network weights are named
// leaves (see JointModel::parameters for the names); otherwise constants.
// `noise` is the d x visits standard-normal draw of the reparameterized
// sample.
LossVars build_loss(grad::Graph& g, const JointModel& model, const Individual& individual,
                    const grad::Tensor& noise, bool trainable = true);

// Evaluates the loss; throws NonFiniteError naming the failing component.
LossBreakdown loss(const JointModel& model, const Individual& individual, const grad::Tensor& noise);
LossBreakdown loss(const JointModel& model, const Individual& individual, Rng& rng);

grad::Tensor draw_noise(std::size_t latent, std::size_t visits, Rng& rng);

struct EpochStats {
    std::size_t epoch = 0;
    LossBreakdown mean;
    std::size_t steps = 0;
    std::size_t skipped = 0;
};

struct TrainResult {
    std::vector<EpochStats> trace;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Batch-size-1 training. Individuals are shuffled each epoch from the run
// seed; steps with a non-finite loss or gradient are skipped and counted;
// more than `max_skipped_fraction` skipped in an epoch throws
// TrainingDiverged.
TrainResult train(JointModel& model, const Dataset& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

std::string trace_csv(const TrainResult& result);

struct Prediction {
    SmallVector latent;
    std::vector<double> items;
};

// Predicts at t_query > t_k from visits 0..k only: causal weighted estimate
// over those starts, decoded to items.
Prediction predict_next(const JointModel& model, const Individual& individual, std::size_t k, double t_query);

// Decoder mean for one latent vector.
std::vector<double> decode(const JointModel& model, const SmallVector& latent);

}  // namespace ldm::model
