#include "ldm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "ldm/errors.hpp"
#include "ldm/io.hpp"

namespace ldm::pipeline {

using grad::Tensor;

std::vector<double> Individual::sum_scores() const {
    std::vector<double> s(visits(), 0.0);
    for (std::size_t r = 0; r < items.rows(); ++r)
        for (std::size_t c = 0; c < items.cols(); ++c) s[c] += items(r, c);
    return s;
}

Individual Individual::prefix(std::size_t n) const {
    if (n > visits()) throw InvalidArgument("Individual::prefix: not enough visits");
    Individual out;
    out.id = id;
    out.baseline = baseline;
    out.times.assign(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(n));
    out.items = Tensor(items.rows(), n);
    for (std::size_t r = 0; r < items.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) out.items(r, c) = items(r, c);
    return out;
}

Individual Individual::without_visits(const std::vector<bool>& drop) const {
    Individual out;
    out.id = id;
    out.baseline = baseline;
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < visits(); ++c)
        if (!drop[c]) keep.push_back(c);
    out.items = Tensor(items.rows(), keep.size());
    for (std::size_t k = 0; k < keep.size(); ++k) {
        out.times.push_back(times[keep[k]]);
        for (std::size_t r = 0; r < items.rows(); ++r) out.items(r, k) = items(r, keep[k]);
    }
    return out;
}

std::size_t Dataset::total_visits() const noexcept {
    std::size_t n = 0;
    for (const auto& ind : individuals) n += ind.visits();
    return n;
}

const Individual& Dataset::find(const std::string& id) const {
    for (const auto& ind : individuals)
        if (ind.id == id) return ind;
    throw NotFoundError("no individual with id '" + id + "'");
}

namespace {

std::string where(const std::filesystem::path& file, std::size_t line, const std::string& column) {
    std::ostringstream s;
    s << file.filename().string() << ": row " << line << ", column '" << column << "'";
    return s.str();
}

std::vector<std::string> expect_header(const std::vector<std::string>& lines,
                                       const std::filesystem::path& file, const std::string& first,
                                       const std::string& second, const std::string& prefix) {
    if (lines.empty()) throw EmptyInput(file.filename().string() + ": file is empty");
    auto header = io::split_csv_line(lines[0]);
    if (!header.empty() && header[0].size() >= 3 && header[0].compare(0, 3, "\xEF\xBB\xBF") == 0)
        header[0].erase(0, 3);
    std::size_t fixed = second.empty() ? 1 : 2;
    if (header.size() <= fixed || header[0] != first || (!second.empty() && header[1] != second))
        throw SchemaError(file.filename().string() + ": header must start with '" + first +
                          (second.empty() ? "" : "," + second) + "' followed by " + prefix + "1..");
    for (std::size_t j = fixed; j < header.size(); ++j)
        if (header[j] != prefix + std::to_string(j - fixed + 1))
            throw SchemaError(file.filename().string() + ": expected column '" + prefix +
                              std::to_string(j - fixed + 1) + "', found '" + header[j] + "'");
    return header;
}

bool blank(const std::string& line) {
    return std::all_of(line.begin(), line.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& ts_path, const std::filesystem::path& base_path) {
    const auto ts_lines = io::read_lines(ts_path);
    const auto ts_header = expect_header(ts_lines, ts_path, "id", "time", "item_");
    const std::size_t p = ts_header.size() - 2;

    struct Rows {
        std::vector<std::pair<double, std::vector<double>>> visits;
    };
    std::vector<std::string> order;
    std::unordered_map<std::string, Rows> rows;
    for (std::size_t li = 1; li < ts_lines.size(); ++li) {
        if (blank(ts_lines[li])) continue;
        const auto cells = io::split_csv_line(ts_lines[li]);
        if (cells.size() != ts_header.size())
            throw SchemaError(ts_path.filename().string() + ": row " + std::to_string(li + 1) + " has " +
                              std::to_string(cells.size()) + " cells, expected " +
                              std::to_string(ts_header.size()));
        if (cells[0].empty()) throw SchemaError(where(ts_path, li + 1, "id") + ": empty id");
        std::vector<double> values(cells.size() - 1);
        for (std::size_t j = 1; j < cells.size(); ++j) {
            try {
                values[j - 1] = io::parse_double(cells[j]);
            } catch (const std::invalid_argument&) {
                throw SchemaError(where(ts_path, li + 1, ts_header[j]) + ": non-numeric cell '" + cells[j] + "'");
            }
            if (!std::isfinite(values[j - 1]))
                throw SchemaError(where(ts_path, li + 1, ts_header[j]) + ": non-finite value");
        }
        auto [it, inserted] = rows.try_emplace(cells[0]);
        if (inserted) order.push_back(cells[0]);
        const double t = values[0];
        for (const auto& v : it->second.visits)
            if (v.first == t)
                throw SchemaError(ts_path.filename().string() + ": duplicate row for id '" + cells[0] +
                                  "' at time " + cells[1] + " (row " + std::to_string(li + 1) + ")");
        it->second.visits.emplace_back(t, std::vector<double>(values.begin() + 1, values.end()));
    }
    if (order.empty()) throw EmptyInput(ts_path.filename().string() + ": no time-series rows (empty dataset)");

    const auto base_lines = io::read_lines(base_path);
    const auto base_header = expect_header(base_lines, base_path, "id", "", "base_");
    const std::size_t q = base_header.size() - 1;
    std::map<std::string, std::vector<double>> baselines;
    for (std::size_t li = 1; li < base_lines.size(); ++li) {
        if (blank(base_lines[li])) continue;
        const auto cells = io::split_csv_line(base_lines[li]);
        if (cells.size() != base_header.size())
            throw SchemaError(base_path.filename().string() + ": row " + std::to_string(li + 1) + " has " +
                              std::to_string(cells.size()) + " cells, expected " +
                              std::to_string(base_header.size()));
        std::vector<double> values(q);
        for (std::size_t j = 1; j < cells.size(); ++j) {
            try {
                values[j - 1] = io::parse_double(cells[j]);
            } catch (const std::invalid_argument&) {
                throw SchemaError(where(base_path, li + 1, base_header[j]) + ": non-numeric cell '" + cells[j] + "'");
            }
            if (!std::isfinite(values[j - 1]))
                throw SchemaError(where(base_path, li + 1, base_header[j]) + ": non-finite value");
        }
        if (rows.find(cells[0]) == rows.end())
            throw SchemaError(base_path.filename().string() + ": baseline id '" + cells[0] +
                              "' has no time series (row " + std::to_string(li + 1) + ")");
        if (!baselines.emplace(cells[0], std::move(values)).second)
            throw SchemaError(base_path.filename().string() + ": duplicate baseline row for id '" + cells[0] + "'");
    }

    Dataset data;
    data.items = p;
    data.baseline = q;
    for (const auto& id : order) {
        auto b = baselines.find(id);
        if (b == baselines.end()) throw SchemaError("time-series id '" + id + "' has no baseline row");
        auto visits = rows[id].visits;
        std::sort(visits.begin(), visits.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        if (visits.front().first != 0.0)
            throw SchemaError("id '" + id + "': first visit must be at time 0");
        Individual ind;
        ind.id = id;
        ind.baseline = b->second;
        ind.items = Tensor(p, visits.size());
        for (std::size_t k = 0; k < visits.size(); ++k) {
            ind.times.push_back(visits[k].first);
            for (std::size_t r = 0; r < p; ++r) ind.items(r, k) = visits[k].second[r];
        }
        data.individuals.push_back(std::move(ind));
    }
    return data;
}

std::string time_series_csv(const Dataset& data) {
    std::ostringstream out;
    out << "id,time";
    for (std::size_t j = 0; j < data.items; ++j) out << ",item_" << j + 1;
    out << '\n';
    for (const auto& ind : data.individuals)
        for (std::size_t k = 0; k < ind.visits(); ++k) {
            out << ind.id << ',' << io::format_exact(ind.times[k]);
            for (std::size_t r = 0; r < ind.items.rows(); ++r) out << ',' << io::format_exact(ind.items(r, k));
            out << '\n';
        }
    return out.str();
}

std::string baseline_csv(const Dataset& data) {
    std::ostringstream out;
    out << "id";
    for (std::size_t j = 0; j < data.baseline; ++j) out << ",base_" << j + 1;
    out << '\n';
    for (const auto& ind : data.individuals) {
        out << ind.id;
        for (double b : ind.baseline) out << ',' << io::format_exact(b);
        out << '\n';
    }
    return out.str();
}

void write_dataset(const Dataset& data, const std::filesystem::path& ts, const std::filesystem::path& base) {
    io::write_text(ts, time_series_csv(data));
    io::write_text(base, baseline_csv(data));
}

nlohmann::json FilterReport::to_json() const {
    return {
        {"input_individuals", input_individuals},
        {"retained_individuals", retained_individuals},
        {"removed_individuals",
         {{"min_visits", removed_min_visits},
          {"low_variance", removed_low_variance},
          {"min_visits_after_outliers", removed_min_visits_recheck}}},
        {"input_visits", input_visits},
        {"retained_visits", retained_visits},
        {"outlier_visits_removed", outlier_visits_removed},
        {"thresholds",
         {{"min_visits", min_visits},
          {"variance_threshold", variance_threshold},
          {"iqr_multiplier", iqr_multiplier},
          {"zero_iqr_floor", zero_iqr_floor}}},
    };
}

namespace {

Dataset empty_like(const Dataset& data) {
    Dataset out;
    out.items = data.items;
    out.baseline = data.baseline;
    out.item_ranges = data.item_ranges;
    return out;
}

FilterReport start_report(const Dataset& data) {
    FilterReport r;
    r.input_individuals = data.individuals.size();
    r.input_visits = data.total_visits();
    return r;
}

void finish_report(FilterReport& r, const Dataset& out) {
    r.retained_individuals = out.individuals.size();
    r.retained_visits = out.total_visits();
}

double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(v.size() - 1);
}

}  // namespace

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw EmptyInput("quantile: no values");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Filtered filter_min_visits(const Dataset& data, std::size_t min_visits) {
    Filtered f{empty_like(data), start_report(data)};
    f.report.min_visits = min_visits;
    for (const auto& ind : data.individuals) {
        if (ind.visits() < min_visits) ++f.report.removed_min_visits;
        else f.dataset.individuals.push_back(ind);
    }
    finish_report(f.report, f.dataset);
    return f;
}

Filtered filter_low_variance(const Dataset& data, double threshold) {
    Filtered f{empty_like(data), start_report(data)};
    f.report.variance_threshold = threshold;
    for (const auto& ind : data.individuals) {
        if (sample_variance(ind.sum_scores()) < threshold) ++f.report.removed_low_variance;
        else f.dataset.individuals.push_back(ind);
    }
    finish_report(f.report, f.dataset);
    return f;
}

namespace {

// One left-to-right pass; returns the number of visits removed.
std::size_t outlier_pass(Individual& ind, const FilterReport& report) {
    if (ind.visits() < 2) return 0;
    const auto s = ind.sum_scores();
    std::vector<double> diffs;
    for (std::size_t k = 1; k < s.size(); ++k) diffs.push_back(s[k] - s[k - 1]);
    const double iqr = quantile(diffs, 0.75) - quantile(diffs, 0.25);
    const double threshold = std::max(report.iqr_multiplier * iqr, report.zero_iqr_floor);
    std::vector<bool> drop(s.size(), false);
    std::size_t removed = 0;
    for (std::size_t k = 1; k < s.size(); ++k)
        if (std::abs(diffs[k - 1]) > threshold) {
            drop[k] = true;
            ++removed;
        }
    if (removed > 0) ind = ind.without_visits(drop);
    return removed;
}

}  // namespace

Filtered remove_outlier_visits(const Dataset& data) {
    Filtered f{empty_like(data), start_report(data)};
    for (const auto& original : data.individuals) {
        Individual ind = original;
        // Removing a jump exposes a new difference; repeat until stable.
        while (std::size_t removed = outlier_pass(ind, f.report)) f.report.outlier_visits_removed += removed;
        f.dataset.individuals.push_back(std::move(ind));
    }
    finish_report(f.report, f.dataset);
    return f;
}

Filtered run_pipeline(const Dataset& data, const PipelineConfig& config) {
    Filtered out{data, start_report(data)};
    out.report.min_visits = config.min_visits;
    out.report.variance_threshold = config.variance_threshold;
    if (config.filter) {
        auto a = filter_min_visits(out.dataset, config.min_visits);
        out.report.removed_min_visits = a.report.removed_min_visits;
        auto b = filter_low_variance(a.dataset, config.variance_threshold);
        out.report.removed_low_variance = b.report.removed_low_variance;
        out.dataset = std::move(b.dataset);
        if (config.remove_outliers) {
            auto c = remove_outlier_visits(out.dataset);
            out.report.outlier_visits_removed = c.report.outlier_visits_removed;
            auto d = filter_min_visits(c.dataset, config.min_visits);
            out.report.removed_min_visits_recheck = d.report.removed_min_visits;
            out.dataset = std::move(d.dataset);
        }
    }
    if (config.logit_transform) out.dataset = transform_items(out.dataset);
    finish_report(out.report, out.dataset);
    return out;
}

double rescale_logit(double x, ItemRange range) {
    const double u = (x - range.min) / (range.max - range.min);
    const double y = kLogitClamp + (1.0 - 2.0 * kLogitClamp) * std::clamp(u, 0.0, 1.0);
    return std::log(y / (1.0 - y));
}

double inverse_rescale_logit(double y, ItemRange range) {
    const double p = 1.0 / (1.0 + std::exp(-y));
    const double u = (p - kLogitClamp) / (1.0 - 2.0 * kLogitClamp);
    return range.min + u * (range.max - range.min);
}

Dataset transform_items(const Dataset& data) {
    Dataset out = data;
    if (out.item_ranges.empty()) {
        out.item_ranges.assign(data.items, ItemRange{INFINITY, -INFINITY});
        for (const auto& ind : data.individuals)
            for (std::size_t r = 0; r < ind.items.rows(); ++r)
                for (std::size_t c = 0; c < ind.items.cols(); ++c) {
                    out.item_ranges[r].min = std::min(out.item_ranges[r].min, ind.items(r, c));
                    out.item_ranges[r].max = std::max(out.item_ranges[r].max, ind.items(r, c));
                }
    }
    if (out.item_ranges.size() != data.items) throw InvalidArgument("transform_items: item range count mismatch");
    std::vector<std::string> degenerate;
    for (std::size_t r = 0; r < data.items; ++r)
        if (!(out.item_ranges[r].max > out.item_ranges[r].min)) degenerate.push_back("item_" + std::to_string(r + 1));
    if (!degenerate.empty()) {
        std::string list;
        for (const auto& d : degenerate) list += (list.empty() ? "" : ", ") + d;
        throw InvalidArgument("transform_items: degenerate items (max == min): " + list);
    }
    for (auto& ind : out.individuals)
        for (std::size_t r = 0; r < ind.items.rows(); ++r)
            for (std::size_t c = 0; c < ind.items.cols(); ++c)
                ind.items(r, c) = rescale_logit(ind.items(r, c), out.item_ranges[r]);
    return out;
}

Dataset inverse_transform_items(const Dataset& data) {
    if (data.item_ranges.size() != data.items)
        throw InvalidArgument("inverse_transform_items: dataset carries no item ranges");
    Dataset out = data;
    for (auto& ind : out.individuals)
        for (std::size_t r = 0; r < ind.items.rows(); ++r)
            for (std::size_t c = 0; c < ind.items.cols(); ++c)
                ind.items(r, c) = inverse_rescale_logit(ind.items(r, c), out.item_ranges[r]);
    return out;
}

}  // namespace ldm::pipeline
