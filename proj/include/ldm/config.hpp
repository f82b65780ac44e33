#pragma once

// Declarative JSON run configuration shared by all CLI commands. Every
// block is optional; unknown keys are rejected with their JSON path.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "ldm/datagen.hpp"
#include "ldm/eval.hpp"
#include "ldm/model.hpp"
#include "ldm/pipeline.hpp"

namespace ldm::config {

struct DataPaths {
    std::string time_series = "time_series.csv";
    std::string baseline = "baseline.csv";
    std::string checkpoint = "checkpoint.json";
};

struct EvaluationConfig {
    std::vector<eval::Method> methods{eval::Method::ode,
                                      eval::Method::shifted_regression,
                                      eval::Method::unshifted_regression,
                                      eval::Method::quadratic_shifted,
                                      eval::Method::quadratic_unshifted,
                                      eval::Method::baseline_regression,
                                      eval::Method::car1};
    eval::Method reference = eval::Method::shifted_regression;
    std::size_t replicates = 0;  // > 0 runs the replicate study
};

struct RunConfig {
    std::uint64_t seed = 0;
    datagen::SimConfig simulation;
    model::ModelConfig model;
    model::LossConfig loss;
    model::TrainConfig training;
    pipeline::PipelineConfig pipeline;
    EvaluationConfig evaluation;
    DataPaths data;

    // Derived from `seed` by apply_seed.
    std::uint64_t init_seed = 0;

    // Sets the root seed and the simulation, initialization and training
    // seeds derived from it.
    void apply_seed(std::uint64_t root);
    void validate() const;
};

// Throws SchemaError on unknown keys, wrong types or invalid values.
RunConfig from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig load(const std::filesystem::path& path);

}  // namespace ldm::config
