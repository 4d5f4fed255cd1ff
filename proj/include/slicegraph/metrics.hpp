#pragma once

#include <slicegraph/errors.hpp>
#include <slicegraph/numerics.hpp>

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace slicegraph {

/// Softmax outputs for m samples plus their true classes.
struct EvalBatch {
    Matrix probs; // m x C
    std::vector<int> labels;
};

/// Mann-Whitney AUROC: the fraction of (positive, negative) pairs in which the
/// positive scores higher, ties counted as one half. Computed from midranks.
inline double binary_auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ConfigError("binary_auroc: scores/labels length mismatch");
    const std::size_t m = scores.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double pos = 0.0, rank_sum = 0.0;
    std::size_t i = 0;
    while (i < m) {
        std::size_t j = i;
        while (j < m && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j); // mean of ranks i+1 .. j
        for (std::size_t t = i; t < j; ++t)
            if (labels[order[t]] != 0) rank_sum += midrank;
        i = j;
    }
    for (int y : labels) {
        if (y != 0 && y != 1) throw DataError("binary_auroc: labels must be 0 or 1");
        pos += y;
    }
    const double neg = static_cast<double>(m) - pos;
    if (pos == 0.0 || neg == 0.0) throw MetricError("AUROC is undefined when only one class is present");
    return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

struct MacroAuroc {
    double value = 0.0;
    std::vector<int> skipped_classes; // classes with no samples in the batch
};

/// Unweighted one-vs-rest mean over the classes present in `labels`.
inline MacroAuroc macro_auroc_detail(const EvalBatch& batch) {
    const auto classes = static_cast<int>(batch.probs.cols());
    if (static_cast<std::size_t>(batch.probs.rows()) != batch.labels.size())
        throw ConfigError("macro_auroc: probs/labels length mismatch");
    std::vector<int> count(static_cast<std::size_t>(classes), 0);
    for (int y : batch.labels) {
        if (y < 0 || y >= classes) throw DataError("macro_auroc: label " + std::to_string(y) + " out of range");
        ++count[static_cast<std::size_t>(y)];
    }
    const auto present = std::count_if(count.begin(), count.end(), [](int c) { return c > 0; });
    if (present < 2) throw MetricError("AUROC is undefined with fewer than 2 distinct labels");

    MacroAuroc out;
    std::vector<double> scores(batch.labels.size());
    std::vector<int> onehot(batch.labels.size());
    double total = 0.0;
    for (int c = 0; c < classes; ++c) {
        if (count[static_cast<std::size_t>(c)] == 0) {
            out.skipped_classes.push_back(c);
            continue;
        }
        for (std::size_t i = 0; i < scores.size(); ++i) {
            scores[i] = batch.probs(static_cast<Eigen::Index>(i), c);
            onehot[i] = batch.labels[i] == c ? 1 : 0;
        }
        total += binary_auroc(scores, onehot);
    }
    out.value = total / static_cast<double>(present);
    return out;
}

inline double macro_auroc(const EvalBatch& batch) {
    if (batch.probs.cols() == 2) {
        // Two classes: one-vs-rest on class 0 and class 1 give the same value.
        std::vector<double> scores(batch.labels.size());
        for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = batch.probs(static_cast<Eigen::Index>(i), 1);
        return binary_auroc(scores, batch.labels);
    }
    return macro_auroc_detail(batch).value;
}

/// Fraction of rows whose argmax equals the label; argmax ties resolve to the lowest class.
inline double accuracy(const EvalBatch& batch) {
    const auto m = batch.probs.rows();
    if (m == 0) throw DataError("accuracy of an empty batch");
    if (static_cast<std::size_t>(m) != batch.labels.size()) throw ConfigError("accuracy: probs/labels length mismatch");
    int correct = 0;
    for (Eigen::Index r = 0; r < m; ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < batch.probs.cols(); ++c)
            if (batch.probs(r, c) > batch.probs(r, best)) best = c;
        correct += best == batch.labels[static_cast<std::size_t>(r)] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(m);
}

} // namespace slicegraph
