#include "ldm/nnet.hpp"

#include <cmath>
#include <random>

#include "json.hpp"

#include "ldm/errors.hpp"
#include "ldm/rng.hpp"

namespace ldm::nnet {

using grad::Tensor;
using grad::Var;

Mlp::Mlp(std::vector<std::size_t> sizes, std::vector<Layer> layers)
    : sizes_(std::move(sizes)), layers_(std::move(layers)) {
    if (sizes_.size() < 2) throw InvalidArgument("Mlp: need at least two layer sizes");
    if (layers_.size() + 1 != sizes_.size()) throw InvalidArgument("Mlp: layer count mismatch");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& L = layers_[l];
        if (L.weight.rows() != sizes_[l + 1] || L.weight.cols() != sizes_[l] ||
            L.bias.rows() != sizes_[l + 1] || L.bias.cols() != 1)
            throw InvalidArgument("Mlp: layer " + std::to_string(l) + " has inconsistent shape");
    }
}

Mlp init_mlp(std::span<const std::size_t> layer_sizes, std::uint64_t seed) {
    if (layer_sizes.size() < 2) throw InvalidArgument("init_mlp: need at least two layer sizes");
    for (std::size_t s : layer_sizes)
        if (s == 0) throw InvalidArgument("init_mlp: layer sizes must be positive");
    Rng rng = make_rng(seed, "mlp-init");
    std::vector<Layer> layers;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        const std::size_t in = layer_sizes[l];
        const std::size_t out = layer_sizes[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> unif(-limit, limit);
        Layer layer;
        layer.weight = Tensor(out, in);
        for (std::size_t k = 0; k < layer.weight.size(); ++k) layer.weight[k] = unif(rng);
        layer.bias = Tensor(out, 1);
        layer.activation = (l + 2 == layer_sizes.size()) ? Activation::identity : Activation::tanh;
        layers.push_back(std::move(layer));
    }
    return Mlp(std::vector<std::size_t>(layer_sizes.begin(), layer_sizes.end()), std::move(layers));
}

Mlp init_mlp(std::initializer_list<std::size_t> layer_sizes, std::uint64_t seed) {
    return init_mlp(std::span<const std::size_t>(layer_sizes.begin(), layer_sizes.size()), seed);
}

std::string weight_name(const std::string& prefix, std::size_t layer) {
    return prefix + "." + std::to_string(layer) + ".weight";
}

std::string bias_name(const std::string& prefix, std::size_t layer) {
    return prefix + "." + std::to_string(layer) + ".bias";
}

MlpVars bind(grad::Graph& g, const Mlp& net, const std::string& prefix) {
    MlpVars vars;
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        const auto& L = net.layers()[l];
        vars.weights.push_back(g.param(weight_name(prefix, l), L.weight));
        vars.biases.push_back(g.param(bias_name(prefix, l), L.bias));
        vars.activations.push_back(L.activation);
    }
    return vars;
}

MlpVars bind_constant(grad::Graph& g, const Mlp& net) {
    MlpVars vars;
    for (const auto& L : net.layers()) {
        vars.weights.push_back(g.constant(L.weight));
        vars.biases.push_back(g.constant(L.bias));
        vars.activations.push_back(L.activation);
    }
    return vars;
}

Var mlp_forward(const MlpVars& net, Var input) {
    if (net.weights.empty()) throw InvalidArgument("mlp_forward: empty network");
    if (input.rows() != net.weights.front().cols())
        throw InvalidArgument("mlp_forward: input has " + std::to_string(input.rows()) +
                              " rows, network expects " + std::to_string(net.weights.front().cols()));
    Var h = input;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        Var pre = grad::matmul(net.weights[l], h);
        pre = pre + grad::broadcast(net.biases[l], pre.rows(), pre.cols());
        h = net.activations[l] == Activation::tanh ? grad::tanh(pre) : pre;
    }
    return h;
}

Tensor mlp_forward(const Mlp& net, const Tensor& input) {
    if (input.rows() != net.input_size())
        throw InvalidArgument("mlp_forward: input has " + std::to_string(input.rows()) +
                              " rows, network expects " + std::to_string(net.input_size()));
    Tensor h = input;
    for (const auto& L : net.layers()) {
        Tensor next(L.weight.rows(), h.cols());
        for (std::size_t r = 0; r < L.weight.rows(); ++r)
            for (std::size_t c = 0; c < h.cols(); ++c) {
                double s = L.bias(r, 0);
                for (std::size_t k = 0; k < L.weight.cols(); ++k) s += L.weight(r, k) * h(k, c);
                next(r, c) = L.activation == Activation::tanh ? std::tanh(s) : s;
            }
        h = std::move(next);
    }
    return h;
}

void collect_params(const Mlp& net, const std::string& prefix, ParamMap& out) {
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        out.insert_or_assign(weight_name(prefix, l), net.layers()[l].weight);
        out.insert_or_assign(bias_name(prefix, l), net.layers()[l].bias);
    }
}

void assign_params(Mlp& net, const std::string& prefix, const ParamMap& params) {
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        auto& L = net.layers()[l];
        for (auto [name, dst] : {std::pair{weight_name(prefix, l), &L.weight},
                                 std::pair{bias_name(prefix, l), &L.bias}}) {
            auto it = params.find(name);
            if (it == params.end()) throw InvalidArgument("assign_params: missing '" + name + "'");
            if (!it->second.same_shape(*dst)) throw InvalidArgument("assign_params: shape mismatch for '" + name + "'");
            *dst = it->second;
        }
    }
}

void optimizer_step(ParamMap& params, const grad::GradientMap& grads, OptimizerState& state) {
    for (const auto& [name, p] : params) {
        auto it = grads.find(name);
        if (it == grads.end()) throw InvalidArgument("optimizer_step: no gradient for '" + name + "'");
        if (!it->second.same_shape(p)) throw InvalidArgument("optimizer_step: shape mismatch for '" + name + "'");
        if (!it->second.all_finite())
            throw NonFiniteError(name, "optimizer_step: non-finite gradient for '" + name + "'");
    }
    const AdamConfig& cfg = state.config;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& [name, p] : params) {
        const Tensor& g = grads.at(name);
        auto [m_it, m_new] = state.first_moment.try_emplace(name, p.rows(), p.cols());
        auto [v_it, v_new] = state.second_moment.try_emplace(name, p.rows(), p.cols());
        Tensor& m = m_it->second;
        Tensor& v = v_it->second;
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            const double m_hat = m[k] / bc1;
            if (cfg.beta2 == 0.0) {
                p[k] -= cfg.learning_rate * m_hat;
            } else {
                const double v_hat = v[k] / bc2;
                p[k] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
            }
        }
    }
}

nlohmann::json mlp_to_json(const Mlp& net) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& L : net.layers()) {
        layers.push_back({
            {"activation", L.activation == Activation::tanh ? "tanh" : "identity"},
            {"weight", std::vector<double>(L.weight.data().begin(), L.weight.data().end())},
            {"bias", std::vector<double>(L.bias.data().begin(), L.bias.data().end())},
        });
    }
    return {{"sizes", net.sizes()}, {"layers", layers}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
    try {
        const auto sizes = j.at("sizes").get<std::vector<std::size_t>>();
        const auto& jl = j.at("layers");
        if (sizes.size() < 2 || jl.size() + 1 != sizes.size())
            throw SchemaError("checkpoint: layer list does not match sizes");
        std::vector<Layer> layers;
        for (std::size_t l = 0; l < jl.size(); ++l) {
            Layer L;
            const auto act = jl[l].at("activation").get<std::string>();
            if (act == "tanh") L.activation = Activation::tanh;
            else if (act == "identity") L.activation = Activation::identity;
            else throw SchemaError("checkpoint: unknown activation '" + act + "'");
            auto w = jl[l].at("weight").get<std::vector<double>>();
            auto b = jl[l].at("bias").get<std::vector<double>>();
            if (w.size() != sizes[l + 1] * sizes[l] || b.size() != sizes[l + 1])
                throw SchemaError("checkpoint: layer " + std::to_string(l) + " has wrong weight count");
            L.weight = Tensor(sizes[l + 1], sizes[l], std::move(w));
            L.bias = Tensor(sizes[l + 1], 1, std::move(b));
            layers.push_back(std::move(L));
        }
        return Mlp(sizes, std::move(layers));
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("checkpoint: ") + e.what());
    }
}

nlohmann::json adam_to_json(const AdamConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon}};
}

AdamConfig adam_from_json(const nlohmann::json& j) {
    AdamConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.epsilon = j.at("epsilon").get<double>();
    return c;
}

}  // namespace ldm::nnet
