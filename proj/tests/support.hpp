#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ldm/grad.hpp"
#include "ldm/linalg.hpp"
#include "ldm/pipeline.hpp"

namespace testing {

using ldm::linalg::SmallMatrix;
using ldm::linalg::SmallVector;

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

inline double max_rel_err(const SmallMatrix& a, const SmallMatrix& b) {
    double scale = 0.0, diff = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i)
        for (std::size_t j = 0; j < a.dim(); ++j) {
            diff = std::max(diff, std::abs(a(i, j) - b(i, j)));
            scale = std::max(scale, std::abs(b(i, j)));
        }
    return diff / scale;
}

inline double max_rel_err(const SmallVector& a, const SmallVector& b) {
    double scale = 0.0, diff = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max(scale, std::abs(b[i]));
    }
    return diff / scale;
}

// Plain Taylor sum of exp(A s), the independent oracle.
inline SmallMatrix taylor_exp(const SmallMatrix& a, double s, int terms = 50) {
    const std::size_t n = a.dim();
    SmallMatrix sum = SmallMatrix::identity(n);
    SmallMatrix term = SmallMatrix::identity(n);
    for (int k = 1; k <= terms; ++k) {
        SmallMatrix next(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double v = 0.0;
                for (std::size_t l = 0; l < n; ++l) v += term(i, l) * a(l, j);
                next(i, j) = v * s / k;
            }
        term = next;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) sum(i, j) += term(i, j);
    }
    return sum;
}

inline ldm::pipeline::Individual make_individual(std::string id, std::vector<double> times,
                                                 const std::vector<std::vector<double>>& items_by_visit,
                                                 std::vector<double> baseline) {
    ldm::pipeline::Individual ind;
    ind.id = std::move(id);
    ind.times = std::move(times);
    const std::size_t p = items_by_visit.front().size();
    ind.items = ldm::grad::Tensor(p, items_by_visit.size());
    for (std::size_t k = 0; k < items_by_visit.size(); ++k)
        for (std::size_t j = 0; j < p; ++j) ind.items(j, k) = items_by_visit[k][j];
    ind.baseline = std::move(baseline);
    return ind;
}

// Individual whose p items all equal the given sum score / p at each visit.
inline ldm::pipeline::Individual with_sum_scores(std::string id, const std::vector<double>& scores, std::size_t p = 2) {
    std::vector<double> times;
    std::vector<std::vector<double>> items;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        times.push_back(static_cast<double>(k));
        items.push_back(std::vector<double>(p, scores[k] / static_cast<double>(p)));
    }
    return make_individual(std::move(id), times, items, {0.0});
}

inline ldm::pipeline::Dataset dataset_of(std::vector<ldm::pipeline::Individual> inds) {
    ldm::pipeline::Dataset d;
    d.items = inds.front().items.rows();
    d.baseline = inds.front().baseline.size();
    d.individuals = std::move(inds);
    return d;
}

}  // namespace testing
