#pragma once

#include <slicegraph/data_io.hpp>
#include <slicegraph/errors.hpp>
#include <slicegraph/graph.hpp>
#include <slicegraph/models.hpp>
#include <slicegraph/training.hpp>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace slicegraph {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Files

inline json read_json_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

/// Writes through a temporary file and renames, so readers never see a partial file.
inline void write_json_file(const fs::path& path, const json& j, int indent = 2) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw ConfigError("cannot open " + tmp.string() + " for writing");
        os << j.dump(indent) << '\n';
        if (!os) throw ConfigError("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

/// 64-bit FNV-1a. Used for stable, platform-independent result file keys.
inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

// ---------------------------------------------------------------------------
// Topology

inline std::string topology_to_string(const TopologySpec& t) {
    if (const auto* e = std::get_if<EncodingBased>(&t)) return to_string(e->metric) + ":" + std::to_string(e->k);
    return to_string(std::get<SliceBased>(t).kind);
}

inline TopologySpec topology_from_json(const json& j) {
    if (j.is_string()) return parse_topology(j.get<std::string>());
    const auto family = j.value("family", std::string{});
    if (family == "slice_based") return SliceBased{parse_slice_topology(j.at("kind").get<std::string>())};
    if (family == "encoding_based") return EncodingBased{parse_metric(j.at("metric").get<std::string>()), j.at("k").get<int>()};
    throw ConfigError("topology needs family slice_based or encoding_based");
}

// ---------------------------------------------------------------------------
// Configs

inline json to_json(const ModelConfig& c) {
    return {{"arch", to_string(c.arch)},     {"in_dim", c.in_dim},
            {"hidden_dim", c.hidden_dim},    {"num_classes", c.num_classes},
            {"gat_negative_slope", c.gat_negative_slope}, {"gat_heads", c.gat_heads}};
}

/// Missing keys fall back to the default head for the architecture.
inline ModelConfig model_config_from_json(const json& j, int num_classes, int in_dim) {
    const Arch arch = parse_arch(j.value("arch", std::string{"sage"}));
    ModelConfig c = default_model_config(arch, j.value("num_classes", num_classes), j.value("in_dim", in_dim));
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.gat_negative_slope = j.value("gat_negative_slope", c.gat_negative_slope);
    c.gat_heads = j.value("gat_heads", c.gat_heads);
    return c;
}

inline json to_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size}, {"epochs", c.epochs},           {"initial_lr", c.initial_lr},
            {"lr_decay", c.lr_decay},     {"weight_decay", c.weight_decay}, {"seeds", c.seeds}};
}

inline TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.initial_lr = j.value("initial_lr", c.initial_lr);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    return c;
}

inline json to_json(const SynthSpec& s) {
    return {{"num_train", s.num_train},   {"num_val", s.num_val},     {"num_test", s.num_test},
            {"num_classes", s.num_classes}, {"signal", s.signal},     {"noise", s.noise},
            {"seed", s.seed},             {"num_slices", s.num_slices}, {"feature_dim", s.feature_dim},
            {"levels", s.levels},         {"level_noise", s.level_noise}};
}

inline SynthSpec synth_spec_from_json(const json& j) {
    SynthSpec s;
    s.num_train = j.value("num_train", s.num_train);
    s.num_val = j.value("num_val", s.num_val);
    s.num_test = j.value("num_test", s.num_test);
    s.num_classes = j.value("num_classes", s.num_classes);
    s.signal = j.value("signal", s.signal);
    s.noise = j.value("noise", s.noise);
    s.seed = j.value("seed", s.seed);
    s.num_slices = j.value("num_slices", s.num_slices);
    s.feature_dim = j.value("feature_dim", s.feature_dim);
    if (j.contains("levels")) s.levels = j.at("levels").get<std::vector<double>>();
    s.level_noise = j.value("level_noise", s.level_noise);
    return s;
}

// ---------------------------------------------------------------------------
// Results

inline json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},           {"lr", r.lr},           {"train_loss", r.train_loss},
            {"val_auroc", r.val_auroc},   {"val_acc", r.val_acc}};
}

inline EpochRecord epoch_record_from_json(const json& j) {
    return {j.at("epoch").get<int>(), j.at("lr").get<double>(), j.at("train_loss").get<double>(),
            j.at("val_auroc").get<double>(), j.value("val_acc", 0.0)};
}

inline json to_json(const RunResult& r) {
    return {{"best_epoch", r.best_epoch},
            {"val_auroc_at_best", r.val_auroc_at_best},
            {"test_auroc", r.test_auroc},
            {"test_acc", r.test_acc},
            {"wall_clock_minutes", r.wall_clock_minutes},
            {"seed", r.seed}};
}

inline RunResult run_result_from_json(const json& j) {
    RunResult r;
    r.best_epoch = j.at("best_epoch").get<int>();
    r.val_auroc_at_best = j.at("val_auroc_at_best").get<double>();
    r.test_auroc = j.at("test_auroc").get<double>();
    r.test_acc = j.at("test_acc").get<double>();
    r.wall_clock_minutes = j.at("wall_clock_minutes").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
}

inline json to_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }
inline MeanStd mean_std_from_json(const json& j) { return {j.at("mean").get<double>(), j.at("std").get<double>()}; }

inline json to_json(const AggregateResult& a) {
    json runs = json::array();
    for (const auto& r : a.runs) runs.push_back(to_json(r));
    return {{"auroc", to_json(a.auroc)},
            {"acc", to_json(a.acc)},
            {"mean_runtime_minutes", a.mean_runtime_minutes},
            {"single_run", a.single_run},
            {"runs", runs}};
}

inline AggregateResult aggregate_from_json(const json& j) {
    AggregateResult a;
    a.auroc = mean_std_from_json(j.at("auroc"));
    a.acc = mean_std_from_json(j.at("acc"));
    a.mean_runtime_minutes = j.at("mean_runtime_minutes").get<double>();
    a.single_run = j.value("single_run", false);
    for (const auto& r : j.value("runs", json::array())) a.runs.push_back(run_result_from_json(r));
    return a;
}

// ---------------------------------------------------------------------------
// Checkpoints: model config, topology and every parameter tensor. Doubles are
// written with round-trip precision, so a reloaded model reproduces logits exactly.

struct Checkpoint {
    std::string dataset;
    TopologySpec topology = SliceBased{};
    RunResult result;
    Model model;
};

inline json to_json(const Checkpoint& c) {
    json tensors = json::array();
    for (const ParamTensor* p : c.model.parameters()) {
        std::vector<double> values(p->value.data(), p->value.data() + p->value.size());
        tensors.push_back({{"rows", p->value.rows()}, {"cols", p->value.cols()}, {"values", std::move(values)}});
    }
    return {{"format", "slicegraph-checkpoint"},
            {"version", 1},
            {"dataset", c.dataset},
            {"topology", topology_to_string(c.topology)},
            {"model", to_json(c.model.config())},
            {"result", to_json(c.result)},
            {"params", std::move(tensors)}};
}

inline Checkpoint checkpoint_from_json(const json& j) {
    if (j.value("format", std::string{}) != "slicegraph-checkpoint") throw FormatError("not a checkpoint file");
    Checkpoint c;
    c.dataset = j.value("dataset", std::string{});
    c.topology = topology_from_json(j.at("topology"));
    c.result = run_result_from_json(j.at("result"));
    const auto& m = j.at("model");
    c.model = Model(model_config_from_json(m, m.at("num_classes").get<int>(), m.at("in_dim").get<int>()), 0);
    auto params = c.model.parameters();
    const auto& tensors = j.at("params");
    if (tensors.size() != params.size())
        throw FormatError("checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& t = tensors[i];
        if (t.at("rows").get<Eigen::Index>() != params[i]->value.rows() ||
            t.at("cols").get<Eigen::Index>() != params[i]->value.cols())
            throw FormatError("checkpoint tensor " + std::to_string(i) + " has the wrong shape");
        const auto values = t.at("values").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(values.size()) != params[i]->value.size())
            throw FormatError("checkpoint tensor " + std::to_string(i) + " has the wrong length");
        std::copy(values.begin(), values.end(), params[i]->value.data());
    }
    return c;
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& c) { write_json_file(path, to_json(c), -1); }
inline Checkpoint load_checkpoint(const fs::path& path) { return checkpoint_from_json(read_json_file(path)); }

} // namespace slicegraph
