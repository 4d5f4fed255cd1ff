#pragma once

#include <slicegraph/data_io.hpp>
#include <slicegraph/errors.hpp>
#include <slicegraph/graph.hpp>
#include <slicegraph/metrics.hpp>
#include <slicegraph/models.hpp>
#include <slicegraph/serialization.hpp>
#include <slicegraph/training.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace slicegraph {

// ---------------------------------------------------------------------------
// Configuration

struct SweepGrid {
    std::vector<TopologySpec> topologies;
    std::vector<Arch> convolutions{Arch::sage, Arch::gat};

    /// Slice topologies plus every metric crossed with every k.
    static SweepGrid make(const std::vector<SliceTopology>& slice, const std::vector<Metric>& metrics,
                          const std::vector<int>& k_grid, std::vector<Arch> convolutions = {Arch::sage, Arch::gat}) {
        SweepGrid g;
        for (auto s : slice) g.topologies.emplace_back(SliceBased{s});
        for (auto m : metrics)
            for (int k : k_grid) g.topologies.emplace_back(EncodingBased{m, k});
        g.convolutions = std::move(convolutions);
        return g;
    }

    static SweepGrid full() {
        return make({SliceTopology::fully_connected, SliceTopology::star, SliceTopology::line, SliceTopology::custom},
                    {Metric::l1, Metric::l2, Metric::linf, Metric::cosine}, {3, 5, 7, 9});
    }

    std::size_t size() const { return topologies.size() * convolutions.size(); }
};

struct ExperimentConfig {
    std::string dataset = "dataset";
    fs::path manifest;
    json model = json::object();          // resolved against the data's class count and width
    std::map<Arch, int> hidden_dims;      // per-architecture overrides used by sweeps
    TrainConfig train;
    TopologySpec topology = SliceBased{SliceTopology::custom};
    SweepGrid grid = SweepGrid::full();
    GraphShape shape;
    int workers = 1;
    bool save_checkpoints = false;        // sweeps only; single runs always checkpoint
};

inline SweepGrid sweep_grid_from_json(const json& j) {
    std::vector<SliceTopology> slice;
    std::vector<Metric> metrics;
    std::vector<Arch> convs;
    for (const auto& s : j.value("slice_topologies", json::array({"fully_connected", "star", "line", "custom"})))
        slice.push_back(parse_slice_topology(s.get<std::string>()));
    for (const auto& s : j.value("metrics", json::array({"l1", "l2", "linf", "cosine"})))
        metrics.push_back(parse_metric(s.get<std::string>()));
    for (const auto& s : j.value("convolutions", json::array({"sage", "gat"})))
        convs.push_back(parse_arch(s.get<std::string>()));
    const auto k_grid = j.value("k_grid", std::vector<int>{3, 5, 7, 9});
    SweepGrid g = SweepGrid::make(slice, metrics, k_grid, convs);
    if (g.size() == 0) throw ConfigError("sweep grid is empty");
    return g;
}

inline ExperimentConfig experiment_config_from_json(const json& j, const fs::path& base_dir = {}) {
    ExperimentConfig c;
    c.dataset = j.value("dataset", c.dataset);
    if (j.contains("manifest")) {
        c.manifest = j.at("manifest").get<std::string>();
        if (c.manifest.is_relative() && !base_dir.empty()) c.manifest = base_dir / c.manifest;
    }
    c.model = j.value("model", json::object());
    if (c.model.contains("hidden_dims"))
        for (const auto& [arch, width] : c.model.at("hidden_dims").items()) c.hidden_dims[parse_arch(arch)] = width.get<int>();
    c.train = train_config_from_json(j.value("train", json::object()));
    if (j.contains("topology")) c.topology = topology_from_json(j.at("topology"));
    if (j.contains("sweep")) c.grid = sweep_grid_from_json(j.at("sweep"));
    if (j.contains("shape")) {
        c.shape.num_nodes = j.at("shape").value("num_slices", c.shape.num_nodes);
        c.shape.feature_dim = j.at("shape").value("feature_dim", c.shape.feature_dim);
    }
    c.workers = j.value("workers", c.workers);
    c.save_checkpoints = j.value("save_checkpoints", c.save_checkpoints);
    return c;
}

inline ExperimentConfig load_experiment_config(const fs::path& path) {
    return experiment_config_from_json(read_json_file(path), path.parent_path());
}

inline ModelConfig resolve_model(const ExperimentConfig& cfg, Arch arch, int num_classes, int in_dim) {
    json m = cfg.model;
    m["arch"] = to_string(arch);
    m.erase("hidden_dims");
    if (m.contains("hidden_dim") && parse_arch(cfg.model.value("arch", std::string{"sage"})) != arch) m.erase("hidden_dim");
    ModelConfig mc = model_config_from_json(m, num_classes, in_dim);
    if (auto it = cfg.hidden_dims.find(arch); it != cfg.hidden_dims.end()) mc.hidden_dim = it->second;
    mc.num_classes = num_classes;
    mc.in_dim = in_dim;
    return mc;
}

inline Arch configured_arch(const ExperimentConfig& cfg) { return parse_arch(cfg.model.value("arch", std::string{"sage"})); }

// ---------------------------------------------------------------------------
// Persisted runs. Each (dataset, cell config, seed) maps to one file named by a
// stable hash, so re-running skips work that already finished.

inline std::string conv_display_name(Arch a) {
    switch (a) {
    case Arch::sage: return "SAGEConv";
    case Arch::gat: return "GATConv";
    case Arch::cond_mlp: return "MLP";
    }
    return "?";
}

inline std::string cell_label(Arch arch, const TopologySpec& t) {
    const auto k = topology_k(t);
    return conv_display_name(arch) + " / " + topology_name(t) + " / k=" + (k ? std::to_string(*k) : "n/a");
}

inline json run_identity(const std::string& dataset, const ModelConfig& model, const TrainConfig& train,
                         const TopologySpec& topology, std::uint64_t seed) {
    json t = to_json(train);
    t.erase("seeds");
    json id = {{"dataset", dataset}, {"model", to_json(model)}, {"train", t}, {"seed", seed}};
    if (model.arch != Arch::cond_mlp) id["topology"] = topology_to_string(topology);
    return id;
}

inline std::string run_key(const json& identity) { return hex64(fnv1a64(identity.dump())); }

struct CellResult {
    Arch arch = Arch::sage;
    TopologySpec topology = SliceBased{};
    bool ok = false;
    std::string error;
    AggregateResult aggregate;
    std::vector<std::string> run_files; // relative to the output directory
};

struct RunOptions {
    bool save_checkpoint = false;
    bool write_history = true;
};

/// Trains every configured seed for one (architecture, topology) cell, reusing
/// any run file already present under `out_dir/runs`.
inline CellResult run_cell(const ExperimentConfig& cfg, const Dataset& ds, Arch arch, const TopologySpec& topology,
                           const fs::path& out_dir, RunOptions opts = {}) {
    CellResult cell;
    cell.arch = arch;
    cell.topology = topology;
    const int in_dim = static_cast<int>(ds.train.front().features->cols());
    const ModelConfig mc = resolve_model(cfg, arch, ds.num_classes, in_dim);
    std::optional<Splits> splits;
    std::vector<RunResult> runs;
    for (auto seed : cfg.train.seeds) {
        const json id = run_identity(cfg.dataset, mc, cfg.train, topology, seed);
        const std::string key = run_key(id);
        const fs::path rel = fs::path("runs") / (key + ".json");
        const fs::path ckpt = out_dir / "checkpoints" / (key + ".json");
        cell.run_files.push_back(rel.generic_string());
        if (fs::exists(out_dir / rel) && (!opts.save_checkpoint || fs::exists(ckpt))) {
            const json stored = read_json_file(out_dir / rel);
            if (stored.at("identity") == id) {
                runs.push_back(run_result_from_json(stored.at("result")));
                continue;
            }
        }
        if (!splits) splits = build_splits(ds, topology);
        const TrainOutcome outcome = train(mc, cfg.train, *splits, seed);
        if (opts.write_history) {
            fs::create_directories(out_dir / "runs");
            std::ofstream hist(out_dir / "runs" / (key + ".history.jsonl"), std::ios::trunc);
            for (const auto& r : outcome.history) hist << to_json(r).dump() << '\n';
        }
        if (opts.save_checkpoint)
            save_checkpoint(ckpt, Checkpoint{cfg.dataset, topology, outcome.result, outcome.best_model});
        write_json_file(out_dir / rel, {{"identity", id},
                                        {"label", cell_label(arch, topology)},
                                        {"result", to_json(outcome.result)},
                                        {"checkpoint", opts.save_checkpoint ? ("checkpoints/" + key + ".json") : ""}});
        runs.push_back(outcome.result);
    }
    cell.aggregate = aggregate(runs);
    cell.ok = true;
    return cell;
}

inline json to_json(const CellResult& c) {
    json j = {{"arch", to_string(c.arch)},
              {"topology", topology_name(c.topology)},
              {"k", topology_k(c.topology) ? json(*topology_k(c.topology)) : json(nullptr)},
              {"label", cell_label(c.arch, c.topology)},
              {"status", c.ok ? "ok" : "failed"},
              {"run_files", c.run_files}};
    if (c.ok) j["aggregate"] = to_json(c.aggregate);
    else j["error"] = c.error;
    return j;
}

inline CellResult cell_result_from_json(const json& j) {
    CellResult c;
    c.arch = parse_arch(j.at("arch").get<std::string>());
    const auto topo = j.at("topology").get<std::string>();
    c.topology = j.at("k").is_null() ? parse_topology(topo) : parse_topology(topo + ":" + std::to_string(j.at("k").get<int>()));
    c.ok = j.at("status").get<std::string>() == "ok";
    c.run_files = j.value("run_files", std::vector<std::string>{});
    if (c.ok) c.aggregate = aggregate_from_json(j.at("aggregate"));
    else c.error = j.value("error", std::string{});
    return c;
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepResult {
    std::string dataset;
    std::vector<CellResult> cells;
    std::optional<std::size_t> best;
};

/// Highest mean AUROC; ties go to higher mean accuracy, then to the smaller label.
inline std::optional<std::size_t> select_best(const std::vector<CellResult>& cells) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (!cells[i].ok) continue;
        if (!best) {
            best = i;
            continue;
        }
        const auto& a = cells[i].aggregate;
        const auto& b = cells[*best].aggregate;
        if (a.auroc.mean != b.auroc.mean) {
            if (a.auroc.mean > b.auroc.mean) best = i;
        } else if (a.acc.mean != b.acc.mean) {
            if (a.acc.mean > b.acc.mean) best = i;
        } else if (cell_label(cells[i].arch, cells[i].topology) < cell_label(cells[*best].arch, cells[*best].topology)) {
            best = i;
        }
    }
    return best;
}

inline json to_json(const SweepResult& s) {
    json cells = json::array();
    for (const auto& c : s.cells) cells.push_back(to_json(c));
    return {{"kind", "sweep"}, {"dataset", s.dataset}, {"cells", cells},
            {"best", s.best ? json(*s.best) : json(nullptr)}};
}

inline SweepResult sweep_result_from_json(const json& j) {
    SweepResult s;
    s.dataset = j.at("dataset").get<std::string>();
    for (const auto& c : j.at("cells")) s.cells.push_back(cell_result_from_json(c));
    if (!j.at("best").is_null()) s.best = j.at("best").get<std::size_t>();
    return s;
}

using ProgressCallback = std::function<void(const CellResult&)>;

/// Runs every (convolution, topology) cell with `cfg.workers` threads. Cells are
/// independent; a failing cell is recorded and the sweep carries on.
inline SweepResult run_sweep(const ExperimentConfig& cfg, const Dataset& ds, const fs::path& out_dir,
                             const ProgressCallback& progress = {}) {
    if (cfg.grid.size() == 0) throw ConfigError("sweep grid is empty");
    if (ds.train.empty() || ds.val.empty() || ds.test.empty()) throw DataError("sweep needs train, val and test subjects");
    struct Job {
        Arch arch;
        TopologySpec topology;
    };
    std::vector<Job> jobs;
    for (const auto& t : cfg.grid.topologies)
        for (Arch a : cfg.grid.convolutions) jobs.push_back({a, t});

    SweepResult result;
    result.dataset = cfg.dataset;
    result.cells.resize(jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex report_mutex;
    const auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            CellResult cell;
            try {
                cell = run_cell(cfg, ds, jobs[i].arch, jobs[i].topology, out_dir,
                                RunOptions{cfg.save_checkpoints, true});
            } catch (const std::exception& e) {
                cell.arch = jobs[i].arch;
                cell.topology = jobs[i].topology;
                cell.ok = false;
                cell.error = e.what();
            }
            std::lock_guard lock(report_mutex);
            result.cells[i] = std::move(cell);
            if (progress) progress(result.cells[i]);
        }
    };
    const int width = std::max(1, std::min<int>(cfg.workers, static_cast<int>(jobs.size())));
    if (width == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < width; ++w) pool.emplace_back(worker);
    }
    result.best = select_best(result.cells);
    write_json_file(out_dir / "sweep_summary.json", to_json(result));
    return result;
}

// ---------------------------------------------------------------------------
// Robustness

struct RobustnessPoint {
    double level = 0.0;
    double auroc = 0.0;
    double acc = 0.0;
    std::size_t num_subjects = 0;
};

/// Evaluates a frozen model on the test split of every requested perturbation level.
inline std::vector<RobustnessPoint> robustness_eval(const Model& model, const TopologySpec& topology,
                                                    const fs::path& manifest, const std::vector<double>& levels,
                                                    std::optional<GraphShape> shape = GraphShape{}) {
    if (levels.empty()) throw ConfigError("no perturbation levels requested");
    const auto available = manifest_levels(manifest);
    for (double level : levels) {
        const bool present =
            std::any_of(available.begin(), available.end(), [&](double l) { return same_level(l, level); });
        if (!present) {
            std::ostringstream os;
            os << "perturbation level " << level << " is not present in " << manifest.string();
            throw LoadError(os.str());
        }
    }
    std::vector<RobustnessPoint> out;
    for (double level : levels) {
        const Dataset ds = load_dataset(manifest, level, shape);
        if (ds.test.empty()) {
            std::ostringstream os;
            os << "perturbation level " << level << " has no test subjects";
            throw LoadError(os.str());
        }
        const auto graphs = build_graphs(ds.test, topology);
        const EvalBatch eval = predict(model, graphs);
        out.push_back({level, macro_auroc(eval), accuracy(eval), graphs.size()});
    }
    return out;
}

inline json to_json(const std::vector<RobustnessPoint>& pts) {
    json a = json::array();
    for (const auto& p : pts)
        a.push_back({{"level", p.level}, {"auroc", p.auroc}, {"acc", p.acc}, {"num_subjects", p.num_subjects}});
    return a;
}

/// Shortest text that parses back to the same double.
inline std::string exact_decimal(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}

inline std::string robustness_csv(const std::vector<RobustnessPoint>& pts) {
    std::ostringstream os;
    os << "level,auroc\n";
    for (const auto& p : pts) os << exact_decimal(p.level) << ',' << exact_decimal(p.auroc) << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Report

struct ReportRow {
    std::string dataset;
    std::string head; // "MLP" or "GNN"
    MeanStd auroc;
    MeanStd acc;
    double runtime_minutes = 0.0;
    std::string configuration; // "SAGEConv / custom / k=n/a" for GNN rows
    std::vector<std::string> sources;
};

/// Rounds half away from zero at three decimals: 0.9175 -> "0.918".
inline std::string format3(double v) {
    const double r = std::round(v * 1000.0) / 1000.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", r == 0.0 ? 0.0 : r);
    return buf;
}

inline std::string format_mean_std(const MeanStd& m) { return format3(m.mean) + " ± " + format3(m.std); }

inline std::string format_minutes(double minutes) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", minutes);
    return buf;
}

inline std::string render_csv(const std::vector<ReportRow>& rows) {
    std::ostringstream os;
    os << "dataset,head,auroc_mean,auroc_std,acc_mean,acc_std,runtime_minutes,configuration\n";
    for (const auto& r : rows)
        os << r.dataset << ',' << r.head << ',' << exact_decimal(r.auroc.mean) << ',' << exact_decimal(r.auroc.std)
           << ',' << exact_decimal(r.acc.mean) << ',' << exact_decimal(r.acc.std) << ','
           << exact_decimal(r.runtime_minutes) << ",\"" << r.configuration << "\"\n";
    return os.str();
}

inline std::string render_table(const std::vector<ReportRow>& rows) {
    const std::vector<std::string> header{"Dataset", "Head", "AUROC", "ACC", "Runtime [min]", "GNN configuration"};
    std::vector<std::vector<std::string>> cells{header};
    for (const auto& r : rows)
        cells.push_back({r.dataset, r.head, format_mean_std(r.auroc), format_mean_std(r.acc),
                         format_minutes(r.runtime_minutes), r.configuration.empty() ? "-" : r.configuration});
    // "±" occupies two bytes but one column.
    const auto width = [](const std::string& s) {
        std::size_t w = 0;
        for (unsigned char c : s) w += (c & 0xC0) != 0x80;
        return w;
    };
    std::vector<std::size_t> widths(header.size(), 0);
    for (const auto& row : cells)
        for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], width(row[i]));
    std::ostringstream os;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        for (std::size_t i = 0; i < cells[r].size(); ++i) {
            os << (i ? " | " : "") << cells[r][i];
            if (i + 1 < cells[r].size()) os << std::string(widths[i] - width(cells[r][i]), ' ');
        }
        os << '\n';
        if (r == 0) {
            for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "-+-" : "") << std::string(widths[i], '-');
            os << '\n';
        }
    }
    return os.str();
}

inline ReportRow report_row(const std::string& dataset, const CellResult& cell) {
    ReportRow r;
    r.dataset = dataset;
    r.head = cell.arch == Arch::cond_mlp ? "MLP" : "GNN";
    r.auroc = cell.aggregate.auroc;
    r.acc = cell.aggregate.acc;
    r.runtime_minutes = cell.aggregate.mean_runtime_minutes;
    if (cell.arch != Arch::cond_mlp) r.configuration = cell_label(cell.arch, cell.topology);
    r.sources = cell.run_files;
    return r;
}

/// One MLP row and one best-GNN row per dataset from every `summary.json` (single
/// trainings) and `sweep_summary.json` found under `roots`.
inline std::vector<ReportRow> collect_report_rows(const std::vector<fs::path>& roots) {
    std::map<std::string, std::map<std::string, std::vector<CellResult>>> found; // dataset -> head -> cells
    const auto consider = [&](const fs::path& file) {
        const json j = read_json_file(file);
        const std::string dataset = j.at("dataset").get<std::string>();
        const fs::path dir = file.parent_path();
        const auto add = [&](CellResult c) {
            if (!c.ok) return;
            for (auto& f : c.run_files) f = (dir / f).generic_string();
            found[dataset][c.arch == Arch::cond_mlp ? "MLP" : "GNN"].push_back(std::move(c));
        };
        if (j.value("kind", std::string{}) == "sweep") {
            for (const auto& c : j.at("cells")) add(cell_result_from_json(c));
        } else {
            add(cell_result_from_json(j.at("cell")));
        }
    };
    for (const auto& root : roots) {
        if (!fs::exists(root)) throw ConfigError("report input " + root.string() + " does not exist");
        if (fs::is_regular_file(root)) {
            consider(root);
            continue;
        }
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(root))
            if (e.is_regular_file() && (e.path().filename() == "summary.json" || e.path().filename() == "sweep_summary.json"))
                files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) consider(f);
    }
    std::vector<ReportRow> rows;
    for (auto& [dataset, heads] : found)
        for (const char* head : {"MLP", "GNN"}) {
            auto it = heads.find(head);
            if (it == heads.end()) continue;
            if (auto best = select_best(it->second)) rows.push_back(report_row(dataset, it->second[*best]));
        }
    return rows;
}

struct RobustnessSeries {
    std::string name;
    std::vector<RobustnessPoint> points;
};

/// Writes report.csv, report.txt and one curve file per robustness series.
inline void render_report(const std::vector<ReportRow>& rows, const std::vector<RobustnessSeries>& curves,
                          const fs::path& out_dir) {
    if (rows.empty() && curves.empty()) throw DataError("nothing to report");
    fs::create_directories(out_dir);
    std::ofstream(out_dir / "report.csv", std::ios::trunc) << render_csv(rows);
    std::ofstream(out_dir / "report.txt", std::ios::trunc) << render_table(rows);
    for (const auto& c : curves) {
        fs::create_directories(out_dir / "curves");
        std::ofstream(out_dir / "curves" / (c.name + ".csv"), std::ios::trunc) << robustness_csv(c.points);
    }
}

} // namespace slicegraph
