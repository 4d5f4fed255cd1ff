#pragma once

#include <slicegraph/data_io.hpp>
#include <slicegraph/errors.hpp>
#include <slicegraph/graph.hpp>
#include <slicegraph/metrics.hpp>
#include <slicegraph/models.hpp>
#include <slicegraph/numerics.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace slicegraph {

struct TrainConfig {
    int batch_size = 16;
    int epochs = 300;
    double initial_lr = 1e-3;
    double lr_decay = 0.995;
    double weight_decay = 0.1;
    std::vector<std::uint64_t> seeds{0, 1, 2};

    LrSchedule schedule() const { return {initial_lr, lr_decay}; }

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch_size must be positive");
        if (epochs < 1) throw ConfigError("epochs must be positive");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
        if (seeds.empty()) throw ConfigError("at least one seed is required");
        schedule().validate();
    }
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_auroc = 0.0;
    double val_acc = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct RunResult {
    int best_epoch = 0;
    double val_auroc_at_best = 0.0;
    double test_auroc = 0.0;
    double test_acc = 0.0;
    double wall_clock_minutes = 0.0;
    std::uint64_t seed = 0;
};

struct Splits {
    std::vector<SubjectGraph> train, val, test;
};

inline Splits build_splits(const Dataset& ds, const TopologySpec& topology) {
    return {build_graphs(ds.train, topology), build_graphs(ds.val, topology), build_graphs(ds.test, topology)};
}

/// Shuffled partition of [0, count) for one epoch, keyed by (run_seed, epoch).
/// The last batch keeps the remainder.
inline std::vector<std::vector<std::size_t>> batch_iter(std::size_t count, int batch_size, std::uint64_t run_seed,
                                                        int epoch) {
    if (count == 0) throw DataError("cannot batch an empty dataset");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_rng({run_seed, 0xBA7C4, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < count; i += static_cast<std::size_t>(batch_size))
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + batch_size)));
    return batches;
}

inline GraphBatch gather_batch(const std::vector<SubjectGraph>& graphs, std::span<const std::size_t> idx) {
    std::vector<const SubjectGraph*> ptrs;
    ptrs.reserve(idx.size());
    for (std::size_t i : idx) ptrs.push_back(&graphs[i]);
    return make_batch(ptrs);
}

/// Softmax outputs of `model` for every graph, in input order.
inline EvalBatch predict(const Model& model, const std::vector<SubjectGraph>& graphs, int chunk = 32) {
    EvalBatch out;
    out.probs.resize(static_cast<Eigen::Index>(graphs.size()), model.config().num_classes);
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < graphs.size(); start += static_cast<std::size_t>(chunk)) {
        idx.clear();
        for (std::size_t i = start; i < std::min(graphs.size(), start + chunk); ++i) idx.push_back(i);
        const Matrix logits = model.forward(gather_batch(graphs, idx));
        out.probs.middleRows(static_cast<Eigen::Index>(start), logits.rows()) = softmax_rows(logits);
    }
    for (const auto& g : graphs) out.labels.push_back(g.label);
    return out;
}

struct TrainOutcome {
    RunResult result;
    std::vector<EpochRecord> history;
    Model best_model;
};

/// Raised when the training loss turns non-finite. Carries what was learned up to that point.
class TrainingAborted : public NumericError {
public:
    TrainingAborted(const std::string& message, TrainOutcome partial)
        : NumericError(message), partial_(std::move(partial)) {}
    const TrainOutcome& partial() const { return partial_; }

private:
    TrainOutcome partial_;
};

inline void check_splits(const Splits& s, int num_classes) {
    if (s.train.empty() || s.val.empty() || s.test.empty()) throw DataError("train, val and test splits must be non-empty");
    std::set<std::string> train_ids, val_ids;
    for (const auto& g : s.train) train_ids.insert(g.subject_id);
    for (const auto& g : s.val) val_ids.insert(g.subject_id);
    for (const auto& g : s.val)
        if (train_ids.count(g.subject_id)) throw DataError("subject " + g.subject_id + " is in train and val");
    for (const auto& g : s.test)
        if (train_ids.count(g.subject_id) || val_ids.count(g.subject_id))
            throw DataError("subject " + g.subject_id + " is in test and another split");
    for (const auto* split : {&s.train, &s.val, &s.test})
        for (const auto& g : *split)
            if (g.label < 0 || g.label >= num_classes)
                throw DataError("subject " + g.subject_id + " has label " + std::to_string(g.label) + " for " +
                                std::to_string(num_classes) + " classes");
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// One full training run: SGD with per-epoch learning-rate decay, model selection on
/// validation AUROC (earliest epoch wins ties), and a single test evaluation at the end.
inline TrainOutcome train(const ModelConfig& model_cfg, const TrainConfig& cfg, const Splits& splits,
                          std::uint64_t seed, const EpochCallback& on_epoch = {}) {
    model_cfg.validate();
    cfg.validate();
    check_splits(splits, model_cfg.num_classes);
    const auto started = std::chrono::steady_clock::now();

    Model model(model_cfg, seed);
    auto params = model.parameters();
    TrainOutcome out;
    out.result.seed = seed;
    out.best_model = model;
    double best_val = -1.0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg.schedule(), epoch);
        double loss_sum = 0.0;
        for (const auto& idx : batch_iter(splits.train.size(), cfg.batch_size, seed, epoch)) {
            const GraphBatch batch = gather_batch(splits.train, idx);
            Tape tape;
            const Matrix logits = model.forward(batch, &tape);
            const LossResult loss = cross_entropy(logits, batch.labels);
            if (!std::isfinite(loss.loss)) {
                out.result.wall_clock_minutes =
                    std::chrono::duration<double, std::ratio<60>>(std::chrono::steady_clock::now() - started).count();
                throw TrainingAborted("non-finite training loss at epoch " + std::to_string(epoch) +
                                          "; keeping checkpoint from epoch " + std::to_string(out.result.best_epoch),
                                      std::move(out));
            }
            loss_sum += loss.loss * static_cast<double>(idx.size());
            model.backward(batch, tape, loss.grad);
            sgd_step(params, lr, cfg.weight_decay);
        }

        const EvalBatch val = predict(model, splits.val);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = loss_sum / static_cast<double>(splits.train.size());
        rec.val_auroc = macro_auroc(val);
        rec.val_acc = accuracy(val);
        out.history.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (rec.val_auroc > best_val) {
            best_val = rec.val_auroc;
            out.result.best_epoch = epoch;
            out.result.val_auroc_at_best = rec.val_auroc;
            out.best_model = model;
        }
    }

    const EvalBatch test = predict(out.best_model, splits.test);
    out.result.test_auroc = macro_auroc(test);
    out.result.test_acc = accuracy(test);
    out.result.wall_clock_minutes =
        std::chrono::duration<double, std::ratio<60>>(std::chrono::steady_clock::now() - started).count();
    return out;
}

// ---------------------------------------------------------------------------
// Multi-seed aggregation

struct MeanStd {
    double mean = 0.0;
    double std = 0.0; // sample standard deviation; 0 for a single value
};

inline MeanStd mean_std(std::span<const double> xs) {
    if (xs.empty()) throw DataError("mean of an empty set");
    MeanStd r;
    r.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - r.mean) * (x - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return r;
}

struct AggregateResult {
    MeanStd auroc;
    MeanStd acc;
    double mean_runtime_minutes = 0.0;
    bool single_run = false;
    std::vector<RunResult> runs;
};

inline AggregateResult aggregate(std::span<const RunResult> runs) {
    if (runs.empty()) throw DataError("no runs to aggregate");
    std::vector<double> auroc, acc, minutes;
    for (const auto& r : runs) {
        auroc.push_back(r.test_auroc);
        acc.push_back(r.test_acc);
        minutes.push_back(r.wall_clock_minutes);
    }
    AggregateResult a;
    a.auroc = mean_std(auroc);
    a.acc = mean_std(acc);
    a.mean_runtime_minutes = mean_std(minutes).mean;
    a.single_run = runs.size() == 1;
    a.runs.assign(runs.begin(), runs.end());
    return a;
}

inline AggregateResult repeat_runs(const ModelConfig& model_cfg, const TrainConfig& cfg, const Splits& splits) {
    cfg.validate();
    std::vector<RunResult> runs;
    for (auto seed : cfg.seeds) runs.push_back(train(model_cfg, cfg, splits, seed).result);
    return aggregate(runs);
}

} // namespace slicegraph
