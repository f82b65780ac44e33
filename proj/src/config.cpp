#include "ldm/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "ldm/errors.hpp"
#include "ldm/rng.hpp"

namespace ldm::config {

using nlohmann::json;

namespace {

// Reads typed fields from one JSON object and reports unknown keys.
class Block {
public:
    Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw SchemaError("config: '" + path_ + "' must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw SchemaError("config: '" + path_ + "." + key + "' has the wrong type");
        }
    }

    // Null-safe sub-block; absent means defaults.
    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string path(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw SchemaError("config: unknown key '" + (path_.empty() ? "" : path_ + ".") + it.key() + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

linalg::SmallMatrix matrix_from(const json& j, const std::string& path) {
    try {
        const auto rows = j.get<std::vector<std::vector<double>>>();
        std::vector<double> flat;
        for (const auto& r : rows) {
            if (r.size() != rows.size()) throw SchemaError("config: '" + path + "' must be a square matrix");
            flat.insert(flat.end(), r.begin(), r.end());
        }
        if (rows.empty()) throw SchemaError("config: '" + path + "' must be nonempty");
        return linalg::SmallMatrix(rows.size(), flat);
    } catch (const json::exception&) {
        throw SchemaError("config: '" + path + "' must be an array of numeric rows");
    } catch (const InvalidArgument& e) {
        throw SchemaError("config: '" + path + "': " + e.what());
    }
}

json matrix_to(const linalg::SmallMatrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.dim(); ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < m.dim(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

linalg::SmallVector vector_from(const json& j, const std::string& path) {
    try {
        return linalg::SmallVector(j.get<std::vector<double>>());
    } catch (const json::exception&) {
        throw SchemaError("config: '" + path + "' must be an array of numbers");
    }
}

void read_simulation(const json& j, datagen::SimConfig& s) {
    Block b(j, "simulation");
    b.get("individuals", s.individuals);
    b.get("items", s.items);
    b.get("baseline", s.baseline);
    b.get("informative", s.informative);
    b.get("min_followups", s.min_followups);
    b.get("max_followups", s.max_followups);
    b.get("time_min", s.time_min);
    b.get("time_max", s.time_max);
    b.get("sigma_ind", s.sigma_ind);
    b.get("sigma_var", s.sigma_var);
    b.get("sigma_info", s.sigma_info);
    b.get("sigma_noise", s.sigma_noise);
    if (const json* m = b.child("a1")) s.a1 = matrix_from(*m, "simulation.a1");
    if (const json* m = b.child("a2")) s.a2 = matrix_from(*m, "simulation.a2");
    if (const json* v = b.child("c1")) s.c1 = vector_from(*v, "simulation.c1");
    if (const json* v = b.child("c2")) s.c2 = vector_from(*v, "simulation.c2");
    if (const json* v = b.child("initial")) s.initial = vector_from(*v, "simulation.initial");
    b.finish();
}

void read_model(const json& j, model::ModelConfig& m) {
    Block b(j, "model");
    b.get("items", m.items);
    b.get("baseline", m.baseline);
    b.get("latent", m.latent);
    b.get("encoder_hidden", m.encoder_hidden);
    b.get("decoder_hidden", m.decoder_hidden);
    b.get("baseline_hidden", m.baseline_hidden);
    b.get("param_scale", m.param_scale);
    std::string dyn = model::dynamics_name(m.dynamics);
    b.get("dynamics", dyn);
    try {
        m.dynamics = model::parse_dynamics(dyn);
    } catch (const InvalidArgument& e) {
        throw SchemaError(std::string("config: model.dynamics: ") + e.what());
    }
    b.finish();
}

void read_loss(const json& j, model::LossConfig& l) {
    Block b(j, "loss");
    b.get("alpha", l.alpha);
    b.get("beta", l.beta);
    b.get("variance_offset", l.variance_offset);
    b.finish();
}

void read_training(const json& j, model::TrainConfig& t) {
    Block b(j, "training");
    b.get("epochs", t.epochs);
    b.get("learning_rate", t.optimizer.learning_rate);
    b.get("beta1", t.optimizer.beta1);
    b.get("beta2", t.optimizer.beta2);
    b.get("epsilon", t.optimizer.epsilon);
    b.get("max_skipped_fraction", t.max_skipped_fraction);
    b.finish();
}

void read_pipeline(const json& j, pipeline::PipelineConfig& p) {
    Block b(j, "pipeline");
    b.get("filter", p.filter);
    b.get("min_visits", p.min_visits);
    b.get("variance_threshold", p.variance_threshold);
    b.get("remove_outliers", p.remove_outliers);
    b.get("logit_transform", p.logit_transform);
    b.finish();
}

eval::Method method_from(const std::string& s, const std::string& path) {
    try {
        return eval::parse_method(s);
    } catch (const InvalidArgument& e) {
        throw SchemaError("config: " + path + ": " + e.what());
    }
}

void read_evaluation(const json& j, EvaluationConfig& e) {
    Block b(j, "evaluation");
    if (b.child("methods")) {
        std::vector<std::string> names;
        b.get("methods", names);
        e.methods.clear();
        for (const auto& n : names) e.methods.push_back(method_from(n, "evaluation.methods"));
    }
    std::string ref = eval::method_name(e.reference);
    b.get("reference", ref);
    e.reference = method_from(ref, "evaluation.reference");
    b.get("replicates", e.replicates);
    b.finish();
}

void read_data(const json& j, DataPaths& d) {
    Block b(j, "data");
    b.get("time_series", d.time_series);
    b.get("baseline", d.baseline);
    b.get("checkpoint", d.checkpoint);
    b.finish();
}

}  // namespace

void RunConfig::apply_seed(std::uint64_t root) {
    seed = root;
    simulation.seed = derive_seed(root, "simulation");
    init_seed = derive_seed(root, "init");
    training.seed = derive_seed(root, "train");
}

void RunConfig::validate() const {
    try {
        simulation.validate();
    } catch (const InvalidArgument& e) {
        throw SchemaError(std::string("config: ") + e.what());
    }
    auto fail = [](const std::string& m) { throw SchemaError("config: " + m); };
    if (model.items == 0 || model.baseline == 0 || model.latent == 0) fail("model sizes must be positive");
    if (model.encoder_hidden == 0 || model.decoder_hidden == 0 || model.baseline_hidden == 0)
        fail("hidden sizes must be positive");
    if (!(model.param_scale > 0.0)) fail("model.param_scale must be > 0");
    if (loss.alpha < 0.0 || loss.beta < 0.0) fail("loss weights must be >= 0");
    if (!(loss.variance_offset > 0.0)) fail("loss.variance_offset must be > 0");
    if (!(training.optimizer.learning_rate > 0.0)) fail("training.learning_rate must be > 0");
    if (training.optimizer.beta1 < 0.0 || training.optimizer.beta1 >= 1.0 || training.optimizer.beta2 < 0.0 ||
        training.optimizer.beta2 >= 1.0)
        fail("training.beta1 and training.beta2 must lie in [0, 1)");
    if (!(training.optimizer.epsilon > 0.0)) fail("training.epsilon must be > 0");
    if (training.max_skipped_fraction < 0.0 || training.max_skipped_fraction > 1.0)
        fail("training.max_skipped_fraction must lie in [0, 1]");
    if (evaluation.methods.empty()) fail("evaluation.methods must be nonempty");
}

RunConfig from_json(const json& j) {
    RunConfig c;
    Block b(j, "");
    std::uint64_t seed = 0;
    b.get("seed", seed);
    c.apply_seed(seed);
    if (const json* s = b.child("simulation")) read_simulation(*s, c.simulation);
    if (const json* s = b.child("model")) read_model(*s, c.model);
    if (const json* s = b.child("loss")) read_loss(*s, c.loss);
    if (const json* s = b.child("training")) read_training(*s, c.training);
    if (const json* s = b.child("pipeline")) read_pipeline(*s, c.pipeline);
    if (const json* s = b.child("evaluation")) read_evaluation(*s, c.evaluation);
    if (const json* s = b.child("data")) read_data(*s, c.data);
    if (const json* s = b.child("derived_seeds")) {
        // Written into resolved configs; must agree with the root seed.
        const json expected = to_json(c).at("derived_seeds");
        if (*s != expected) throw SchemaError("config: 'derived_seeds' disagrees with 'seed'");
    }
    b.finish();
    // Model input sizes follow the simulated data unless set explicitly.
    if (!(j.contains("model") && j.at("model").contains("items"))) c.model.items = c.simulation.items;
    if (!(j.contains("model") && j.at("model").contains("baseline"))) c.model.baseline = c.simulation.baseline;
    c.validate();
    return c;
}

json to_json(const RunConfig& c) {
    const auto& s = c.simulation;
    json methods = json::array();
    for (auto m : c.evaluation.methods) methods.push_back(eval::method_name(m));
    return {
        {"seed", c.seed},
        {"derived_seeds", {{"simulation", c.simulation.seed}, {"init", c.init_seed}, {"train", c.training.seed}}},
        {"simulation",
         {{"individuals", s.individuals},
          {"items", s.items},
          {"baseline", s.baseline},
          {"informative", s.informative},
          {"min_followups", s.min_followups},
          {"max_followups", s.max_followups},
          {"time_min", s.time_min},
          {"time_max", s.time_max},
          {"sigma_ind", s.sigma_ind},
          {"sigma_var", s.sigma_var},
          {"sigma_info", s.sigma_info},
          {"sigma_noise", s.sigma_noise},
          {"a1", matrix_to(s.a1)},
          {"a2", matrix_to(s.a2)},
          {"c1", s.c1.values()},
          {"c2", s.c2.values()},
          {"initial", s.initial.values()}}},
        {"model",
         {{"items", c.model.items},
          {"baseline", c.model.baseline},
          {"latent", c.model.latent},
          {"encoder_hidden", c.model.encoder_hidden},
          {"decoder_hidden", c.model.decoder_hidden},
          {"baseline_hidden", c.model.baseline_hidden},
          {"dynamics", model::dynamics_name(c.model.dynamics)},
          {"param_scale", c.model.param_scale}}},
        {"loss", {{"alpha", c.loss.alpha}, {"beta", c.loss.beta}, {"variance_offset", c.loss.variance_offset}}},
        {"training",
         {{"epochs", c.training.epochs},
          {"learning_rate", c.training.optimizer.learning_rate},
          {"beta1", c.training.optimizer.beta1},
          {"beta2", c.training.optimizer.beta2},
          {"epsilon", c.training.optimizer.epsilon},
          {"max_skipped_fraction", c.training.max_skipped_fraction}}},
        {"pipeline",
         {{"filter", c.pipeline.filter},
          {"min_visits", c.pipeline.min_visits},
          {"variance_threshold", c.pipeline.variance_threshold},
          {"remove_outliers", c.pipeline.remove_outliers},
          {"logit_transform", c.pipeline.logit_transform}}},
        {"evaluation",
         {{"methods", methods},
          {"reference", eval::method_name(c.evaluation.reference)},
          {"replicates", c.evaluation.replicates}}},
        {"data",
         {{"time_series", c.data.time_series}, {"baseline", c.data.baseline}, {"checkpoint", c.data.checkpoint}}},
    };
}

RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("config: cannot open '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw SchemaError("config '" + path.string() + "': " + e.what());
    }
    return from_json(j);
}

}  // namespace ldm::config
