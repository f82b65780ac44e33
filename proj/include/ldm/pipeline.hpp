#pragma once

// Cohort data model, CSV ingestion, and the preprocessing filters applied
// before model fitting.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "ldm/grad.hpp"

namespace ldm::pipeline {

struct Individual {
    std::string id;
    std::vector<double> times;     // strictly increasing, first = 0
    grad::Tensor items;            // p x visits
    std::vector<double> baseline;  // q

    std::size_t visits() const noexcept { return times.size(); }
    // Per-visit total over all items.
    std::vector<double> sum_scores() const;
    // Copy restricted to the first `n` visits.
    Individual prefix(std::size_t n) const;
    Individual without_visits(const std::vector<bool>& drop) const;
};

struct ItemRange {
    double min = 0.0;
    double max = 0.0;
};

struct Dataset {
    std::vector<Individual> individuals;
    std::size_t items = 0;
    std::size_t baseline = 0;
    // Per-item scale bounds used by the rescale + logit transform. Empty
    // means the observed range is used.
    std::vector<ItemRange> item_ranges;

    std::size_t total_visits() const noexcept;
    const Individual& find(const std::string& id) const;  // NotFoundError
};

// Time-series CSV: `id,time,item_1,...,item_p`; baseline CSV:
// `id,base_1,...,base_q`. Errors name the file row and column.
Dataset load_dataset(const std::filesystem::path& time_series, const std::filesystem::path& baseline);
void write_dataset(const Dataset& data, const std::filesystem::path& time_series,
                   const std::filesystem::path& baseline);
std::string time_series_csv(const Dataset& data);
std::string baseline_csv(const Dataset& data);

struct FilterReport {
    std::size_t input_individuals = 0;
    std::size_t retained_individuals = 0;
    std::size_t removed_min_visits = 0;
    std::size_t removed_low_variance = 0;
    std::size_t removed_min_visits_recheck = 0;
    std::size_t input_visits = 0;
    std::size_t retained_visits = 0;
    std::size_t outlier_visits_removed = 0;

    std::size_t min_visits = 2;
    double variance_threshold = 1.0;
    double iqr_multiplier = 2.0;
    double zero_iqr_floor = 2.0;

    std::size_t removed_individuals() const noexcept {
        return removed_min_visits + removed_low_variance + removed_min_visits_recheck;
    }
    nlohmann::json to_json() const;
};

struct Filtered {
    Dataset dataset;
    FilterReport report;
};

// Drops individuals with fewer than `min_visits` visits.
Filtered filter_min_visits(const Dataset& data, std::size_t min_visits = 2);
// Drops individuals whose sum-score sample variance across visits is below
// `threshold` (fewer than two visits counts as variance 0).
Filtered filter_low_variance(const Dataset& data, double threshold = 1.0);
// Visit k (k >= 1) is removed when |S_k - S_{k-1}| exceeds max(2 * IQR, 2),
// IQR taken over that individual's adjacent sum-score differences. Each pass
// scans left to right on its input series; passes repeat until none removes
// a visit. The baseline visit is never removed.
Filtered remove_outlier_visits(const Dataset& data);

struct PipelineConfig {
    bool filter = true;
    std::size_t min_visits = 2;
    double variance_threshold = 1.0;
    bool remove_outliers = true;
    bool logit_transform = false;
};

// min-visits -> low-variance -> outlier removal -> min-visits again, then
// the optional item transform.
Filtered run_pipeline(const Dataset& data, const PipelineConfig& config);

inline constexpr double kLogitClamp = 0.01;

double rescale_logit(double x, ItemRange range);
double inverse_rescale_logit(double y, ItemRange range);

// Maps every item from its range onto [0.01, 0.99] and applies the logit.
// Resolves `item_ranges` from the observed data when they are absent and
// stores them in the result. Throws InvalidArgument listing degenerate items
// (max == min).
Dataset transform_items(const Dataset& data);
Dataset inverse_transform_items(const Dataset& data);

// Linear-interpolation quantile (type 7) of unsorted values.
double quantile(std::vector<double> values, double q);

}  // namespace ldm::pipeline
