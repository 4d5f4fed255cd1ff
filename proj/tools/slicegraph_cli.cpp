// slicegraph: experiment runner for latent slice-graph classification.
//
//   slicegraph synth      --config synth.json --out data/
//   slicegraph train      --config exp.json --manifest data/manifest.jsonl --out runs/ --seeds 0,1,2
//   slicegraph evaluate   --checkpoint runs/checkpoints/<key>.json --manifest data/manifest.jsonl
//   slicegraph sweep      --config exp.json --manifest data/manifest.jsonl --out sweep/ --workers 4
//   slicegraph robustness --checkpoint ... --manifest ... --level 0 --level 0.5 --out robust/
//   slicegraph report     --in runs/ --in sweep/ --out report/

#include <slicegraph/slicegraph.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <iostream>
#include <string>
#include <vector>

namespace sg = slicegraph;
using sg::json;

namespace {

struct Options {
    std::string config;
    std::string manifest;
    std::string out = "out";
    std::string seeds;
    int workers = 0;
    std::vector<double> levels;
    std::string checkpoint;
    std::vector<std::string> inputs;
    std::string topology;
    std::string dataset;
    std::optional<double> signal, noise;
    bool out_given = false;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            seeds.push_back(std::stoull(item));
        } catch (const std::exception&) {
            throw sg::ConfigError("bad seed '" + item + "'");
        }
    }
    if (seeds.empty()) throw sg::ConfigError("--seeds needs at least one value");
    return seeds;
}

sg::ExperimentConfig experiment_config(const Options& o) {
    sg::ExperimentConfig cfg = o.config.empty() ? sg::ExperimentConfig{} : sg::load_experiment_config(o.config);
    if (!o.manifest.empty()) cfg.manifest = o.manifest;
    if (cfg.manifest.empty()) throw sg::ConfigError("no manifest given (--manifest or \"manifest\" in the config)");
    if (!o.seeds.empty()) cfg.train.seeds = parse_seeds(o.seeds);
    if (o.workers > 0) cfg.workers = o.workers;
    if (!o.topology.empty()) cfg.topology = sg::parse_topology(o.topology);
    if (!o.dataset.empty()) cfg.dataset = o.dataset;
    cfg.train.validate();
    return cfg;
}

sg::Dataset load_level0(const sg::ExperimentConfig& cfg) {
    sg::Dataset ds = sg::load_dataset(cfg.manifest, 0.0, cfg.shape);
    for (const auto& w : ds.warnings) std::cerr << "warning: " << w << '\n';
    if (ds.train.empty() || ds.val.empty() || ds.test.empty())
        throw sg::DataError("manifest " + cfg.manifest.string() + " lacks train, val or test subjects at level 0");
    return ds;
}

int cmd_synth(const Options& o) {
    sg::SynthSpec spec = o.config.empty() ? sg::SynthSpec{} : sg::synth_spec_from_json(sg::read_json_file(o.config));
    if (!o.seeds.empty()) spec.seed = parse_seeds(o.seeds).front();
    if (!o.levels.empty()) spec.levels = o.levels;
    if (o.signal) spec.signal = *o.signal;
    if (o.noise) spec.noise = *o.noise;
    const auto manifest = sg::synth_dataset(spec, o.out);
    sg::write_json_file(sg::fs::path(o.out) / "synth_spec.json", sg::to_json(spec));
    std::cout << json{{"status", "ok"}, {"manifest", manifest.string()}}.dump() << '\n';
    return 0;
}

int cmd_train(const Options& o) {
    const auto cfg = experiment_config(o);
    const auto ds = load_level0(cfg);
    const sg::Arch arch = sg::configured_arch(cfg);
    const sg::fs::path out = o.out;
    const auto cell = sg::run_cell(cfg, ds, arch, cfg.topology, out, sg::RunOptions{true, true});
    sg::write_json_file(out / "summary.json", {{"kind", "train"}, {"dataset", cfg.dataset}, {"cell", sg::to_json(cell)}});
    std::cout << json{{"status", "ok"},
                      {"label", sg::cell_label(arch, cfg.topology)},
                      {"auroc", sg::format_mean_std(cell.aggregate.auroc)},
                      {"acc", sg::format_mean_std(cell.aggregate.acc)},
                      {"summary", (out / "summary.json").string()}}
                     .dump()
              << '\n';
    return 0;
}

int cmd_evaluate(const Options& o) {
    if (o.checkpoint.empty()) throw sg::ConfigError("evaluate needs --checkpoint");
    if (o.manifest.empty()) throw sg::ConfigError("evaluate needs --manifest");
    const auto ckpt = sg::load_checkpoint(o.checkpoint);
    const double level = o.levels.empty() ? 0.0 : o.levels.front();
    const auto points = sg::robustness_eval(ckpt.model, ckpt.topology, o.manifest, {level}, std::nullopt);
    const json result = {{"status", "ok"},        {"level", level},
                         {"auroc", points[0].auroc}, {"acc", points[0].acc},
                         {"num_subjects", points[0].num_subjects}};
    if (o.out_given) sg::write_json_file(sg::fs::path(o.out) / "evaluation.json", result);
    std::cout << result.dump() << '\n';
    return 0;
}

int cmd_sweep(const Options& o) {
    const auto cfg = experiment_config(o);
    const auto ds = load_level0(cfg);
    const auto started = std::chrono::steady_clock::now();
    const auto result = sg::run_sweep(cfg, ds, o.out, [](const sg::CellResult& c) {
        std::cerr << (c.ok ? "done   " : "FAILED ") << sg::cell_label(c.arch, c.topology);
        if (c.ok) std::cerr << "  auroc " << sg::format_mean_std(c.aggregate.auroc);
        else std::cerr << "  " << c.error;
        std::cerr << '\n';
    });
    const double minutes =
        std::chrono::duration<double, std::ratio<60>>(std::chrono::steady_clock::now() - started).count();
    std::size_t failed = 0;
    for (const auto& c : result.cells) failed += c.ok ? 0 : 1;
    json summary = {{"status", failed ? "partial" : "ok"},
                    {"cells", result.cells.size()},
                    {"failed", failed},
                    {"minutes", minutes},
                    {"summary", (sg::fs::path(o.out) / "sweep_summary.json").string()}};
    if (result.best) summary["best"] = sg::cell_label(result.cells[*result.best].arch, result.cells[*result.best].topology);
    std::cout << summary.dump() << '\n';
    return result.best ? 0 : 1;
}

int cmd_robustness(const Options& o) {
    if (o.checkpoint.empty()) throw sg::ConfigError("robustness needs --checkpoint");
    if (o.manifest.empty()) throw sg::ConfigError("robustness needs --manifest");
    const auto ckpt = sg::load_checkpoint(o.checkpoint);
    const auto levels = o.levels.empty() ? sg::manifest_levels(o.manifest) : o.levels;
    const auto points = sg::robustness_eval(ckpt.model, ckpt.topology, o.manifest, levels, std::nullopt);
    const sg::fs::path out = o.out;
    sg::fs::create_directories(out);
    std::ofstream(out / "robustness.csv", std::ios::trunc) << sg::robustness_csv(points);
    const std::string head = ckpt.model.config().arch == sg::Arch::cond_mlp ? "MLP" : "GNN";
    sg::write_json_file(out / "robustness.json", {{"dataset", ckpt.dataset},
                                                  {"name", ckpt.dataset + "_" + head},
                                                  {"label", sg::cell_label(ckpt.model.config().arch, ckpt.topology)},
                                                  {"points", sg::to_json(points)}});
    std::cout << json{{"status", "ok"}, {"points", sg::to_json(points)}}.dump() << '\n';
    return 0;
}

int cmd_report(const Options& o) {
    if (o.inputs.empty()) throw sg::ConfigError("report needs at least one --in directory");
    std::vector<sg::fs::path> roots(o.inputs.begin(), o.inputs.end());
    const auto rows = sg::collect_report_rows(roots);
    std::vector<sg::RobustnessSeries> curves;
    for (const auto& root : roots) {
        if (!sg::fs::is_directory(root)) continue;
        for (const auto& e : sg::fs::recursive_directory_iterator(root)) {
            if (!e.is_regular_file() || e.path().filename() != "robustness.json") continue;
            const json j = sg::read_json_file(e.path());
            sg::RobustnessSeries s;
            s.name = j.value("name", std::string{"series"});
            for (const auto& p : j.at("points"))
                s.points.push_back({p.at("level").get<double>(), p.at("auroc").get<double>(), p.value("acc", 0.0),
                                    p.value("num_subjects", std::size_t{0})});
            curves.push_back(std::move(s));
        }
    }
    sg::render_report(rows, curves, o.out);
    std::cout << sg::render_table(rows);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent slice-graph classification: synthetic data, training, sweeps, robustness and reports"};
    app.require_subcommand(1);
    Options o;

    auto* synth = app.add_subcommand("synth", "Write a synthetic feature-file dataset and manifest");
    synth->add_option("--config", o.config, "Synthetic dataset spec (JSON)");
    synth->add_option("--out", o.out, "Output directory");
    synth->add_option("--seeds", o.seeds, "Seed (first value is used)");
    synth->add_option("--level", o.levels, "Perturbation levels to generate (repeatable)");
    synth->add_option("--signal", o.signal, "Class signal strength");
    synth->add_option("--noise", o.noise, "Noise standard deviation");

    auto* train = app.add_subcommand("train", "Train one head over every seed");
    auto* sweep = app.add_subcommand("sweep", "Train every topology x convolution cell");
    for (auto* sub : {train, sweep}) {
        sub->add_option("--config", o.config, "Experiment config (JSON)")->required();
        sub->add_option("--manifest", o.manifest, "Dataset manifest (overrides the config)");
        sub->add_option("--out", o.out, "Output directory");
        sub->add_option("--seeds", o.seeds, "Comma-separated seeds, e.g. 0,1,2");
        sub->add_option("--dataset", o.dataset, "Dataset name used in reports");
    }
    train->add_option("--topology", o.topology, "Topology override: line, custom, l2:5, cosine:7, ...");
    sweep->add_option("--workers", o.workers, "Parallel cells");

    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
    auto* robust = app.add_subcommand("robustness", "Evaluate a checkpoint across perturbation levels");
    for (auto* sub : {evaluate, robust}) {
        sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
        sub->add_option("--manifest", o.manifest, "Dataset manifest")->required();
        sub->add_option("--level", o.levels, "Perturbation level (repeatable for robustness)");
        sub->add_option("--out", o.out, "Output directory");
    }

    auto* report = app.add_subcommand("report", "Render result tables and robustness curves");
    report->add_option("--in", o.inputs, "Result directories or summary files (repeatable)")->required();
    report->add_option("--out", o.out, "Output directory");

    CLI11_PARSE(app, argc, argv);

    o.out_given = evaluate->count("--out") > 0;
    try {
        if (*synth) return cmd_synth(o);
        if (*train) return cmd_train(o);
        if (*evaluate) return cmd_evaluate(o);
        if (*sweep) return cmd_sweep(o);
        if (*robust) return cmd_robustness(o);
        if (*report) return cmd_report(o);
    } catch (const sg::Error& e) {
        std::cerr << json{{"status", "error"}, {"kind", e.kind()}, {"message", e.what()}}.dump() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"status", "error"}, {"kind", "internal"}, {"message", e.what()}}.dump() << '\n';
        return 1;
    }
    return 1;
}
