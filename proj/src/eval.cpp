#include "ldm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ldm/errors.hpp"
#include "ldm/io.hpp"
#include "ldm/rng.hpp"

namespace ldm::eval {

namespace {

struct MethodEntry {
    Method method;
    const char* name;
};

constexpr MethodEntry kMethods[] = {
    {Method::ode, "ode"},
    {Method::shifted_regression, "shifted_regression"},
    {Method::unshifted_regression, "unshifted_regression"},
    {Method::quadratic_shifted, "quadratic_shifted"},
    {Method::quadratic_unshifted, "quadratic_unshifted"},
    {Method::baseline_regression, "baseline_regression"},
    {Method::car1, "car1"},
    {Method::oracle, "oracle"},
};

std::vector<SmallVector> columns(const model::LatentEncoding& enc, std::size_t n) {
    std::vector<SmallVector> out;
    for (std::size_t k = 0; k < n; ++k) out.push_back(enc.mean_at(k));
    return out;
}

std::optional<SmallVector> regression_prediction(const model::LatentEncoding& enc, std::size_t k,
                                                 std::size_t max_degree, bool shifted) {
    const std::span<const double> times(enc.times.data(), k + 1);
    const auto values = columns(enc, k + 1);
    const std::size_t distinct = baselines::distinct_count(times);
    const std::size_t degree = std::min(max_degree, distinct - 1);
    const auto fit = baselines::fit_ols(times, values, degree);
    return baselines::predict_regression(fit, enc.times[k], values[k], enc.times[k + 1], shifted);
}

std::optional<SmallVector> car1_prediction(const model::LatentEncoding& enc, std::size_t k) {
    if (k + 1 < 3) return std::nullopt;
    const std::size_t d = enc.mean.rows();
    const std::span<const double> times(enc.times.data(), k + 1);
    SmallVector out(d);
    for (std::size_t r = 0; r < d; ++r) {
        std::vector<double> v(k + 1);
        for (std::size_t j = 0; j <= k; ++j) v[j] = enc.mean(r, j);
        const auto fit = baselines::fit_car1(times, v);
        if (!fit.converged) return std::nullopt;
        out[r] = baselines::predict_car1(fit, v[k], enc.times[k + 1] - enc.times[k]);
    }
    return out;
}

}  // namespace

const char* method_name(Method m) noexcept {
    for (const auto& e : kMethods)
        if (e.method == m) return e.name;
    return "ode";
}

Method parse_method(const std::string& s) {
    for (const auto& e : kMethods)
        if (s == e.name) return e.method;
    throw InvalidArgument("unknown method '" + s + "'");
}

const std::vector<Method>& all_methods() {
    static const std::vector<Method> methods = [] {
        std::vector<Method> out;
        for (const auto& e : kMethods) out.push_back(e.method);
        return out;
    }();
    return methods;
}

baselines::SlopePredictor fit_slopes(const model::JointModel& model, const pipeline::Dataset& data) {
    std::vector<baselines::LatentSeries> series;
    std::vector<std::vector<double>> covariates;
    for (const auto& ind : data.individuals) {
        if (baselines::distinct_count(ind.times) < 2) continue;
        const auto enc = model::encode(model, ind);
        series.push_back({enc.times, columns(enc, enc.visits())});
        covariates.push_back(ind.baseline);
    }
    return baselines::fit_baseline_informed_slopes(series, covariates);
}

MethodRun next_visit_predictions(Method method, const EvalContext& ctx, const pipeline::Dataset& data) {
    if (ctx.model == nullptr) throw PreconditionError("next_visit_predictions: no trained model supplied");
    if (method == Method::baseline_regression && !ctx.slopes)
        throw PreconditionError("next_visit_predictions: baseline regression requires a fitted slope predictor");
    const model::JointModel& m = *ctx.model;
    MethodRun run;
    run.method = method;
    for (const auto& ind : data.individuals) {
        if (ind.visits() < 2) continue;
        const auto enc = model::encode(m, ind);
        for (std::size_t k = 0; k + 1 < ind.visits(); ++k) {
            PredictionRecord rec;
            rec.id = ind.id;
            rec.anchor = k;
            rec.anchor_time = ind.times[k];
            rec.target_time = ind.times[k + 1];
            rec.method = method;
            rec.observed_latent = enc.mean_at(k + 1);
            rec.observed_std = enc.std_at(k + 1);
            rec.observed_items = ind.items.column_values(k + 1);

            std::optional<SmallVector> latent;
            try {
                switch (method) {
                    case Method::ode: {
                        auto p = model::predict_next(m, ind, k, rec.target_time);
                        latent = std::move(p.latent);
                        rec.predicted_items = std::move(p.items);
                        break;
                    }
                    case Method::shifted_regression: latent = regression_prediction(enc, k, 1, true); break;
                    case Method::unshifted_regression: latent = regression_prediction(enc, k, 1, false); break;
                    case Method::quadratic_shifted: latent = regression_prediction(enc, k, 2, true); break;
                    case Method::quadratic_unshifted: latent = regression_prediction(enc, k, 2, false); break;
                    case Method::baseline_regression:
                        latent = ctx.slopes->predict(ind.baseline, rec.anchor_time, enc.mean_at(k), rec.target_time);
                        break;
                    case Method::car1: latent = car1_prediction(enc, k); break;
                    case Method::oracle: latent = rec.observed_latent; break;
                }
            } catch (const UnderdeterminedFit&) {
                latent.reset();
            }
            if (!latent || !latent->all_finite()) {
                ++run.excluded;
                continue;
            }
            rec.predicted_latent = std::move(*latent);
            if (rec.predicted_items.empty()) rec.predicted_items = model::decode(m, rec.predicted_latent);
            run.records.push_back(std::move(rec));
        }
    }
    return run;
}

double mse(const std::vector<PredictionRecord>& records, Space space) {
    if (records.empty()) throw EmptyInput("mse: no prediction records");
    double total = 0.0;
    for (const auto& r : records) {
        double se = 0.0;
        if (space == Space::latent) {
            for (std::size_t i = 0; i < r.observed_latent.dim(); ++i) {
                const double e = r.predicted_latent[i] - r.observed_latent[i];
                se += e * e;
            }
        } else {
            for (std::size_t i = 0; i < r.observed_items.size(); ++i) {
                const double e = r.predicted_items[i] - r.observed_items[i];
                se += e * e;
            }
        }
        total += se;
    }
    return total / static_cast<double>(records.size());
}

double relative_improvement(double candidate_mse, double reference_mse) {
    if (!(reference_mse > 0.0)) throw InvalidArgument("relative_improvement: reference MSE must be positive");
    return 100.0 * (reference_mse - candidate_mse) / reference_mse;
}

MethodSummary summarize_run(const MethodRun& run) {
    MethodSummary s;
    s.method = run.method;
    s.records = run.records.size();
    s.excluded = run.excluded;
    if (run.records.empty()) {
        s.latent_mse = s.item_mse = std::numeric_limits<double>::quiet_NaN();
    } else {
        s.latent_mse = mse(run.records, Space::latent);
        s.item_mse = mse(run.records, Space::reconstructed);
    }
    return s;
}

ImprovementStats summarize(const std::vector<double>& improvements) {
    ImprovementStats s;
    s.count = improvements.size();
    if (improvements.empty()) return s;
    s.min = *std::min_element(improvements.begin(), improvements.end());
    s.max = *std::max_element(improvements.begin(), improvements.end());
    for (double v : improvements) s.mean += v;
    s.mean /= static_cast<double>(improvements.size());
    return s;
}

const MethodSummary& MetricsReport::summary(Method m) const {
    for (const auto& s : methods)
        if (s.method == m) return s;
    throw NotFoundError(std::string("no metrics for method '") + method_name(m) + "'");
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json summaries_json(const std::vector<MethodSummary>& methods) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : methods)
        arr.push_back({{"method", method_name(s.method)},
                       {"latent_mse", number_or_null(s.latent_mse)},
                       {"item_mse", number_or_null(s.item_mse)},
                       {"records", s.records},
                       {"excluded", s.excluded}});
    return arr;
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j;
    j["reference"] = method_name(reference);
    j["methods"] = summaries_json(methods);
    if (!replicates.empty()) {
        nlohmann::json reps = nlohmann::json::array();
        for (const auto& r : replicates) {
            nlohmann::json jr{{"index", r.index},
                              {"simulation_seed", r.simulation_seed},
                              {"init_seed", r.init_seed},
                              {"train_seed", r.train_seed},
                              {"failed", r.failed}};
            if (r.failed) {
                jr["error"] = r.error;
            } else {
                jr["methods"] = summaries_json(r.methods);
                jr["improvement_percent"] = number_or_null(r.improvement);
            }
            reps.push_back(jr);
        }
        j["replicates"] = reps;
        j["replicate_count"] = replicates.size();
    }
    if (improvement)
        j["improvement_percent"] = {{"mean", improvement->mean},
                                    {"min", improvement->min},
                                    {"max", improvement->max},
                                    {"count", improvement->count}};
    return j;
}

std::string MetricsReport::to_csv() const {
    std::ostringstream out;
    out << "replicate,method,latent_mse,item_mse,records,excluded,improvement_percent\n";
    auto row = [&](const std::string& rep, const MethodSummary& s, const std::string& imp) {
        out << rep << ',' << method_name(s.method) << ',' << io::format_report(s.latent_mse) << ','
            << io::format_report(s.item_mse) << ',' << s.records << ',' << s.excluded << ',' << imp << '\n';
    };
    for (const auto& s : methods) {
        std::string imp;
        if (reference != s.method) {
            const auto& ref = summary(reference);
            if (ref.latent_mse > 0.0 && std::isfinite(s.latent_mse))
                imp = io::format_report(relative_improvement(s.latent_mse, ref.latent_mse));
        }
        row("all", s, imp);
    }
    for (const auto& r : replicates) {
        if (r.failed) continue;
        for (const auto& s : r.methods)
            row(std::to_string(r.index), s, s.method == Method::ode ? io::format_report(r.improvement) : "");
    }
    return out.str();
}

Evaluation evaluate(const model::JointModel& model, const pipeline::Dataset& data, const std::vector<Method>& methods,
                    Method reference) {
    EvalContext ctx;
    ctx.model = &model;
    if (std::find(methods.begin(), methods.end(), Method::baseline_regression) != methods.end())
        ctx.slopes = fit_slopes(model, data);
    Evaluation ev;
    if (ctx.slopes && ctx.slopes->rank_deficient)
        ev.warnings.push_back("baseline regression: stage-2 design is rank deficient; slopes rely on ridge damping");
    ev.report.reference = reference;
    for (Method m : methods) {
        ev.runs.push_back(next_visit_predictions(m, ctx, data));
        ev.report.methods.push_back(summarize_run(ev.runs.back()));
    }
    return ev;
}

std::string predictions_csv(const std::vector<MethodRun>& runs) {
    std::size_t d = 0;
    for (const auto& r : runs)
        if (!r.records.empty()) d = r.records.front().observed_latent.dim();
    std::ostringstream out;
    out << "id,method,anchor,anchor_time,time";
    for (std::size_t i = 1; i <= d; ++i) out << ",observed_latent_" << i;
    for (std::size_t i = 1; i <= d; ++i) out << ",observed_std_" << i;
    for (std::size_t i = 1; i <= d; ++i) out << ",predicted_latent_" << i;
    out << '\n';
    for (const auto& run : runs)
        for (const auto& r : run.records) {
            out << r.id << ',' << method_name(r.method) << ',' << r.anchor << ',' << io::format_report(r.anchor_time)
                << ',' << io::format_report(r.target_time);
            for (std::size_t i = 0; i < d; ++i) out << ',' << io::format_report(r.observed_latent[i]);
            for (std::size_t i = 0; i < d; ++i) out << ',' << io::format_report(r.observed_std[i]);
            for (std::size_t i = 0; i < d; ++i) out << ',' << io::format_report(r.predicted_latent[i]);
            out << '\n';
        }
    return out.str();
}

MetricsReport replicate_study(const StudyConfig& config, const ReplicateCallback& on_replicate) {
    MetricsReport report;
    report.reference = config.reference;
    std::vector<Method> methods = config.methods;
    for (Method m : {Method::ode, config.reference})
        if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);

    std::vector<double> improvements;
    for (std::size_t r = 0; r < config.replicates; ++r) {
        ReplicateResult res;
        res.index = r + 1;
        res.simulation_seed = derive_seed(config.seed, "replicate-simulation", r);
        res.init_seed = derive_seed(config.seed, "replicate-init", r);
        res.train_seed = derive_seed(config.seed, "replicate-train", r);
        try {
            datagen::SimConfig sim = config.simulation;
            sim.seed = res.simulation_seed;
            const auto cohort = datagen::simulate_cohort(sim);
            model::ModelConfig mc = config.model;
            mc.items = sim.items;
            mc.baseline = sim.baseline;
            model::JointModel jm(mc, config.loss, res.init_seed);
            model::TrainConfig tc = config.training;
            tc.seed = res.train_seed;
            model::train(jm, cohort.dataset, tc);
            const Evaluation ev = evaluate(jm, cohort.dataset, methods, config.reference);
            res.methods = ev.report.methods;
            res.improvement = relative_improvement(ev.report.summary(Method::ode).latent_mse,
                                                   ev.report.summary(config.reference).latent_mse);
            improvements.push_back(res.improvement);
        } catch (const TrainingDiverged& e) {
            res.failed = true;
            res.error = e.what();
        } catch (const NonFiniteError& e) {
            res.failed = true;
            res.error = e.what();
        }
        if (on_replicate) on_replicate(res);
        report.replicates.push_back(std::move(res));
    }
    report.improvement = summarize(improvements);
    return report;
}

}  // namespace ldm::eval
