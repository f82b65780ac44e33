#pragma once

// Next-visit prediction records for the model and each comparator, error
// metrics in latent and item space, and the seeded replicate study.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ldm/baselines.hpp"
#include "ldm/datagen.hpp"
#include "ldm/model.hpp"

namespace ldm::eval {

using linalg::SmallVector;

enum class Method {
    ode,
    shifted_regression,
    unshifted_regression,
    quadratic_shifted,
    quadratic_unshifted,
    baseline_regression,
    car1,
    oracle,  // returns the encoded next value; sanity check only
};

const char* method_name(Method m) noexcept;
Method parse_method(const std::string& s);
const std::vector<Method>& all_methods();

struct PredictionRecord {
    std::string id;
    std::size_t anchor = 0;  // visit k; the target is visit k + 1
    double anchor_time = 0.0;
    double target_time = 0.0;
    Method method = Method::ode;
    SmallVector predicted_latent;
    std::vector<double> predicted_items;
    SmallVector observed_latent;  // encoder mean at the target visit
    SmallVector observed_std;     // encoder std at the target visit
    std::vector<double> observed_items;
};

struct MethodRun {
    Method method = Method::ode;
    std::vector<PredictionRecord> records;
    std::size_t excluded = 0;  // anchors without a defined prediction
};

// Everything the predictors may consult. Baseline regression needs
// `slopes`; every method needs the model for encodings and decoding.
struct EvalContext {
    const model::JointModel* model = nullptr;
    std::optional<baselines::SlopePredictor> slopes;
};

// Stage-1/2 slope predictor fitted on the model's encodings of `data`.
baselines::SlopePredictor fit_slopes(const model::JointModel& model, const pipeline::Dataset& data);

// For each individual and anchor k = 0..T-1, predicts visit k + 1 from
// visits 0..k only. Throws PreconditionError when the context lacks what
// the method needs.
MethodRun next_visit_predictions(Method method, const EvalContext& ctx, const pipeline::Dataset& data);

enum class Space { latent, reconstructed };

// Mean over records of the squared Euclidean error; EmptyInput if empty.
double mse(const std::vector<PredictionRecord>& records, Space space);

// 100 (reference - candidate) / reference.
double relative_improvement(double candidate_mse, double reference_mse);

struct MethodSummary {
    Method method = Method::ode;
    double latent_mse = 0.0;
    double item_mse = 0.0;
    std::size_t records = 0;
    std::size_t excluded = 0;
};

struct ReplicateResult {
    std::size_t index = 0;
    std::uint64_t simulation_seed = 0;
    std::uint64_t init_seed = 0;
    std::uint64_t train_seed = 0;
    bool failed = false;
    std::string error;
    std::vector<MethodSummary> methods;
    double improvement = 0.0;  // ode vs reference, percent
};

struct ImprovementStats {
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
    std::size_t count = 0;
};

ImprovementStats summarize(const std::vector<double>& improvements);

struct MetricsReport {
    Method reference = Method::shifted_regression;
    std::vector<MethodSummary> methods;        // single-dataset evaluation
    std::vector<ReplicateResult> replicates;   // replicate study
    std::optional<ImprovementStats> improvement;

    const MethodSummary& summary(Method m) const;  // NotFoundError
    nlohmann::json to_json() const;
    std::string to_csv() const;
};

MethodSummary summarize_run(const MethodRun& run);

struct Evaluation {
    std::vector<MethodRun> runs;
    MetricsReport report;
    std::vector<std::string> warnings;
};

Evaluation evaluate(const model::JointModel& model, const pipeline::Dataset& data, const std::vector<Method>& methods,
                    Method reference = Method::shifted_regression);

// Long format: id,method,anchor,anchor_time,time,observed_latent_r,
// observed_std_r,predicted_latent_r for r = 1..d.
std::string predictions_csv(const std::vector<MethodRun>& runs);

struct StudyConfig {
    datagen::SimConfig simulation;
    model::ModelConfig model;
    model::LossConfig loss;
    model::TrainConfig training;
    std::vector<Method> methods{Method::ode, Method::shifted_regression, Method::baseline_regression};
    Method reference = Method::shifted_regression;
    std::size_t replicates = 20;
    std::uint64_t seed = 0;
};

// Per replicate r: simulation, initialization and training seeds derived
// from (seed, r); train, evaluate, and record the ODE improvement over the
// reference. Diverged replicates are marked failed and skipped in the
// statistics.
using ReplicateCallback = std::function<void(const ReplicateResult&)>;
MetricsReport replicate_study(const StudyConfig& config, const ReplicateCallback& on_replicate = {});

}  // namespace ldm::eval
