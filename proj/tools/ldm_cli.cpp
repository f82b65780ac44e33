// ldm: simulate cohorts, preprocess, train the joint model, and evaluate
// next-visit predictions against the regression and AR(1) comparators.
//
// Exit codes: 0 success, 2 input or configuration error, 3 numerical
// failure, 1 unexpected internal error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "ldm/config.hpp"
#include "ldm/datagen.hpp"
#include "ldm/errors.hpp"
#include "ldm/eval.hpp"
#include "ldm/io.hpp"
#include "ldm/model.hpp"
#include "ldm/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ldm;

namespace {

struct Options {
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> replicates;
};

config::RunConfig resolve(const Options& opt) {
    config::RunConfig cfg = opt.config.empty() ? config::from_json(nlohmann::json::object()) : config::load(opt.config);
    if (opt.seed) cfg.apply_seed(*opt.seed);
    if (opt.replicates) cfg.evaluation.replicates = *opt.replicates;
    cfg.validate();
    return cfg;
}

fs::path prepare_out(const Options& opt) {
    const fs::path out(opt.out);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) throw SchemaError("cannot create output directory '" + opt.out + "'");
    return out;
}

void write_resolved(const fs::path& out, const config::RunConfig& cfg) {
    io::write_text(out / "resolved_config.json", config::to_json(cfg).dump(2) + "\n");
}

pipeline::Filtered load_and_filter(const config::RunConfig& cfg) {
    const auto data = pipeline::load_dataset(cfg.data.time_series, cfg.data.baseline);
    return pipeline::run_pipeline(data, cfg.pipeline);
}

int cmd_simulate(const Options& opt) {
    const auto cfg = resolve(opt);
    const auto cohort = datagen::simulate_cohort(cfg.simulation);
    const fs::path out = prepare_out(opt);
    pipeline::write_dataset(cohort.dataset, out / "time_series.csv", out / "baseline.csv");
    io::write_text(out / "ground_truth.csv", datagen::ground_truth_csv(cohort));
    write_resolved(out, cfg);
    std::cout << "simulated " << cohort.dataset.individuals.size() << " individuals, "
              << cohort.dataset.total_visits() << " visits -> " << out.string() << "\n";
    return 0;
}

int cmd_preprocess(const Options& opt) {
    const auto cfg = resolve(opt);
    const auto filtered = load_and_filter(cfg);
    const fs::path out = prepare_out(opt);
    pipeline::write_dataset(filtered.dataset, out / "time_series.csv", out / "baseline.csv");
    io::write_text(out / "filter_report.json", filtered.report.to_json().dump(2) + "\n");
    write_resolved(out, cfg);
    std::cout << "retained " << filtered.report.retained_individuals << " of " << filtered.report.input_individuals
              << " individuals\n";
    return 0;
}

int cmd_train(const Options& opt) {
    auto cfg = resolve(opt);
    const auto filtered = load_and_filter(cfg);
    if (filtered.dataset.individuals.empty()) throw EmptyInput("no individuals left after preprocessing");
    cfg.model.items = filtered.dataset.items;
    cfg.model.baseline = filtered.dataset.baseline;
    const fs::path out = prepare_out(opt);
    write_resolved(out, cfg);
    io::write_text(out / "filter_report.json", filtered.report.to_json().dump(2) + "\n");

    model::JointModel jm(cfg.model, cfg.loss, cfg.init_seed);
    jm.optimizer_config() = cfg.training.optimizer;
    const auto result = model::train(jm, filtered.dataset, cfg.training, [&](const model::EpochStats& e) {
        std::cout << "epoch " << e.epoch << "/" << cfg.training.epochs << " loss " << io::format_report(e.mean.total)
                  << (e.skipped ? " skipped " + std::to_string(e.skipped) : "") << "\n";
    });
    jm.save(out / "checkpoint.json");
    io::write_text(out / "training_trace.csv", model::trace_csv(result));
    return 0;
}

void write_report(const fs::path& out, const eval::MetricsReport& report) {
    io::write_text(out / "metrics.json", report.to_json().dump(2) + "\n");
    io::write_text(out / "metrics.csv", report.to_csv());
}

int cmd_evaluate(const Options& opt) {
    const auto cfg = resolve(opt);
    if (cfg.evaluation.replicates > 0) {
        eval::StudyConfig study;
        study.simulation = cfg.simulation;
        study.model = cfg.model;
        study.loss = cfg.loss;
        study.training = cfg.training;
        study.methods = cfg.evaluation.methods;
        study.reference = cfg.evaluation.reference;
        study.replicates = cfg.evaluation.replicates;
        study.seed = cfg.seed;
        const fs::path out = prepare_out(opt);
        write_resolved(out, cfg);
        const auto report = eval::replicate_study(study, [](const eval::ReplicateResult& r) {
            if (r.failed)
                std::cout << "replicate " << r.index << " failed: " << r.error << "\n";
            else
                std::cout << "replicate " << r.index << " improvement " << io::format_report(r.improvement) << "%\n";
        });
        write_report(out, report);
        if (report.improvement && report.improvement->count > 0)
            std::cout << "improvement mean " << io::format_report(report.improvement->mean) << "% min "
                      << io::format_report(report.improvement->min) << "% max "
                      << io::format_report(report.improvement->max) << "%\n";
        return 0;
    }
    if (!fs::exists(cfg.data.checkpoint)) throw SchemaError("checkpoint '" + cfg.data.checkpoint + "' not found");
    const auto jm = model::JointModel::load(cfg.data.checkpoint);
    const auto filtered = load_and_filter(cfg);
    const auto ev = eval::evaluate(jm, filtered.dataset, cfg.evaluation.methods, cfg.evaluation.reference);
    for (const auto& w : ev.warnings) std::cerr << "warning: " << w << "\n";
    const fs::path out = prepare_out(opt);
    write_resolved(out, cfg);
    write_report(out, ev.report);
    io::write_text(out / "predictions.csv", eval::predictions_csv(ev.runs));
    for (const auto& s : ev.report.methods)
        std::cout << eval::method_name(s.method) << " latent_mse " << io::format_report(s.latent_mse) << " item_mse "
                  << io::format_report(s.item_mse) << " records " << s.records << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent dynamic models of longitudinal cohort data"};
    app.require_subcommand(1);
    Options opt;
    auto add_common = [&](CLI::App* sub, bool replicates) {
        sub->add_option("--config", opt.config, "JSON run configuration")->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out, "Output directory");
        sub->add_option("--seed", opt.seed, "Root seed (overrides the config)");
        if (replicates) sub->add_option("--replicates", opt.replicates, "Run the replicate study with N replicates");
    };
    auto* simulate = app.add_subcommand("simulate", "Simulate a two-group cohort");
    auto* preprocess = app.add_subcommand("preprocess", "Filter a dataset");
    auto* train = app.add_subcommand("train", "Train the joint model");
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate next-visit predictions");
    add_common(simulate, false);
    add_common(preprocess, false);
    add_common(train, false);
    add_common(evaluate, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*simulate) return cmd_simulate(opt);
        if (*preprocess) return cmd_preprocess(opt);
        if (*train) return cmd_train(opt);
        if (*evaluate) return cmd_evaluate(opt);
    } catch (const TrainingDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const NonFiniteError& e) {
        std::cerr << "error: non-finite value in " << e.where() << ": " << e.what() << "\n";
        return 3;
    } catch (const SingularMatrixError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ContractViolation& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
