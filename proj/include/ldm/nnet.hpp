#pragma once

// Small multilayer perceptrons built on the grad engine, plus an adaptive
// first-order optimizer.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ldm/grad.hpp"

namespace ldm::nnet {

enum class Activation { tanh, identity };

struct Layer {
    grad::Tensor weight;  // out x in
    grad::Tensor bias;    // out x 1
    Activation activation = Activation::identity;

    bool operator==(const Layer&) const = default;
};

class Mlp {
public:
    Mlp() = default;
    Mlp(std::vector<std::size_t> sizes, std::vector<Layer> layers);

    const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }
    std::size_t input_size() const { return sizes_.front(); }
    std::size_t output_size() const { return sizes_.back(); }
    std::vector<Layer>& layers() noexcept { return layers_; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }

    bool operator==(const Mlp&) const = default;

private:
    std::vector<std::size_t> sizes_;
    std::vector<Layer> layers_;
};

// Glorot-uniform weights, zero biases, tanh on hidden layers and identity on
// the output layer. Deterministic given `seed`.
Mlp init_mlp(std::span<const std::size_t> layer_sizes, std::uint64_t seed);
Mlp init_mlp(std::initializer_list<std::size_t> layer_sizes, std::uint64_t seed);

// Graph leaves for one network; names are "<prefix>.<layer>.weight|bias".
struct MlpVars {
    std::vector<grad::Var> weights;
    std::vector<grad::Var> biases;
    std::vector<Activation> activations;
};

MlpVars bind(grad::Graph& g, const Mlp& net, const std::string& prefix);
// Same network as non-differentiable constants.
MlpVars bind_constant(grad::Graph& g, const Mlp& net);

// `input` is (in x n): one sample per column. Returns (out x n).
grad::Var mlp_forward(const MlpVars& net, grad::Var input);
// Graph-free forward pass.
grad::Tensor mlp_forward(const Mlp& net, const grad::Tensor& input);

using ParamMap = std::map<std::string, grad::Tensor>;

void collect_params(const Mlp& net, const std::string& prefix, ParamMap& out);
void assign_params(Mlp& net, const std::string& prefix, const ParamMap& params);
std::string weight_name(const std::string& prefix, std::size_t layer);
std::string bias_name(const std::string& prefix, std::size_t layer);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    // beta2 == 0 disables second-moment scaling, so beta1 = beta2 = 0 is
    // plain stochastic gradient descent.
    double beta2 = 0.999;
    double epsilon = 1e-8;

    bool operator==(const AdamConfig&) const = default;
};

struct OptimizerState {
    AdamConfig config;
    std::uint64_t step = 0;
    ParamMap first_moment;
    ParamMap second_moment;
};

// In-place bias-corrected moment update. Every parameter must have a
// gradient of matching shape. A non-finite gradient throws NonFiniteError
// before anything is modified.
void optimizer_step(ParamMap& params, const grad::GradientMap& grads, OptimizerState& state);

nlohmann::json mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);
nlohmann::json adam_to_json(const AdamConfig& c);
AdamConfig adam_from_json(const nlohmann::json& j);

}  // namespace ldm::nnet
