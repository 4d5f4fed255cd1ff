#pragma once

#include <slicegraph/errors.hpp>
#include <slicegraph/graph.hpp>
#include <slicegraph/numerics.hpp>

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace slicegraph {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Feature files
//
//   offset  size  field
//   0       4     magic "LGF1"
//   4       2     version, u16 LE (= 1)
//   6       4     num_slices, u32 LE
//   10      4     feat_dim, u32 LE
//   14      4*N   float32 LE payload, row-major, slice 0 first

inline constexpr std::array<char, 4> kFeatureMagic{'L', 'G', 'F', '1'};
inline constexpr std::uint16_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 14;

inline std::size_t feature_file_size(std::size_t slices, std::size_t dim) {
    return kFeatureHeaderBytes + slices * dim * sizeof(float);
}

namespace detail {

template <typename T>
void put_le(std::string& buf, T v) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const unsigned char* p) {
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::make_unsigned_t<T>>(p[i]) << (8 * i);
    return static_cast<T>(u);
}

} // namespace detail

/// Serializes `features` into the byte layout above. Values are narrowed to float32.
inline std::string encode_feature_file(const Matrix& features) {
    if (!features.allFinite()) throw DataError("feature matrix contains non-finite values");
    std::string buf;
    buf.reserve(feature_file_size(static_cast<std::size_t>(features.rows()), static_cast<std::size_t>(features.cols())));
    buf.append(kFeatureMagic.data(), kFeatureMagic.size());
    detail::put_le<std::uint16_t>(buf, kFeatureVersion);
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(features.rows()));
    detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(features.cols()));
    for (Eigen::Index i = 0; i < features.size(); ++i)
        detail::put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(static_cast<float>(features.data()[i])));
    return buf;
}

/// Parses a feature file image. When `expected` is given, the header shape must match it.
inline Matrix decode_feature_file(const std::string& bytes, std::optional<GraphShape> expected = GraphShape{},
                                  const std::string& origin = "<memory>") {
    const auto fail = [&](std::size_t offset, const std::string& what) {
        return FormatError(origin + ": at byte offset " + std::to_string(offset) + ": " + what);
    };
    if (bytes.size() < kFeatureHeaderBytes)
        throw fail(bytes.size(), "truncated header (" + std::to_string(bytes.size()) + " of " +
                                     std::to_string(kFeatureHeaderBytes) + " bytes)");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (std::memcmp(p, kFeatureMagic.data(), 4) != 0) throw fail(0, "bad magic, expected \"LGF1\"");
    const auto version = detail::get_le<std::uint16_t>(p + 4);
    if (version != kFeatureVersion) throw fail(4, "unsupported version " + std::to_string(version));
    const auto slices = detail::get_le<std::uint32_t>(p + 6);
    const auto dim = detail::get_le<std::uint32_t>(p + 10);
    if (expected && (slices != static_cast<std::uint32_t>(expected->num_nodes) ||
                     dim != static_cast<std::uint32_t>(expected->feature_dim)))
        throw fail(6, "shape " + std::to_string(slices) + "x" + std::to_string(dim) + ", expected " +
                          std::to_string(expected->num_nodes) + "x" + std::to_string(expected->feature_dim));
    const std::size_t want = feature_file_size(slices, dim);
    if (bytes.size() != want)
        throw fail(std::min(bytes.size(), want), "payload length mismatch: file has " + std::to_string(bytes.size()) +
                                                     " bytes, header implies " + std::to_string(want));
    Matrix out(slices, dim);
    const unsigned char* payload = p + kFeatureHeaderBytes;
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        const float v = std::bit_cast<float>(detail::get_le<std::uint32_t>(payload + 4 * i));
        if (!std::isfinite(v)) throw fail(kFeatureHeaderBytes + 4 * static_cast<std::size_t>(i), "non-finite value");
        out.data()[i] = v;
    }
    return out;
}

inline void write_feature_file(const fs::path& path, const Matrix& features) {
    const std::string bytes = encode_feature_file(features);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw FormatError("short write to " + path.string());
}

inline Matrix read_feature_file(const fs::path& path, std::optional<GraphShape> expected = GraphShape{}) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return decode_feature_file(ss.str(), expected, path.string());
}

// ---------------------------------------------------------------------------
// Manifests: one JSON object per line.

enum class Split { train, val, test };

inline std::string to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "?";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val" || s == "validation") return Split::val;
    if (s == "test") return Split::test;
    throw DataError("unknown split '" + s + "'");
}

struct ManifestRecord {
    std::string subject_id;
    Split split = Split::train;
    int label = 0;
    int num_classes = 2;
    std::string feature_path; // relative to the manifest's directory
    double perturbation_level = 0.0;
};

inline nlohmann::json to_json(const ManifestRecord& r) {
    return {{"subject_id", r.subject_id},   {"split", to_string(r.split)},
            {"label", r.label},             {"num_classes", r.num_classes},
            {"feature_path", r.feature_path}, {"perturbation_level", r.perturbation_level}};
}

inline ManifestRecord manifest_record_from_json(const nlohmann::json& j) {
    ManifestRecord r;
    r.subject_id = j.at("subject_id").get<std::string>();
    r.split = parse_split(j.at("split").get<std::string>());
    r.label = j.at("label").get<int>();
    r.num_classes = j.at("num_classes").get<int>();
    r.feature_path = j.at("feature_path").get<std::string>();
    r.perturbation_level = j.value("perturbation_level", 0.0);
    return r;
}

inline void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw LoadError("cannot open " + path.string() + " for writing");
    for (const auto& r : records) os << to_json(r).dump() << '\n';
}

inline std::vector<ManifestRecord> read_manifest(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw LoadError("cannot open manifest " + path.string());
    std::vector<ManifestRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(manifest_record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw LoadError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const DataError& e) {
            throw LoadError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loading

/// A subject before a topology is attached.
struct Subject {
    std::string subject_id;
    int label = 0;
    std::shared_ptr<const Matrix> features;
};

struct Dataset {
    std::vector<Subject> train, val, test;
    int num_classes = 0;
    std::vector<std::string> warnings;

    std::vector<Subject>& split(Split s) { return s == Split::train ? train : s == Split::val ? val : test; }
    const std::vector<Subject>& split(Split s) const {
        return s == Split::train ? train : s == Split::val ? val : test;
    }
    std::size_t size() const { return train.size() + val.size() + test.size(); }
};

inline bool same_level(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); }

/// Loads every record at `perturbation_level`. All problems are collected and
/// reported together in one LoadError.
inline Dataset load_dataset(const fs::path& manifest_path, double perturbation_level,
                            std::optional<GraphShape> shape = GraphShape{}) {
    const auto records = read_manifest(manifest_path);
    const fs::path root = manifest_path.parent_path();
    Dataset ds;
    std::vector<std::string> problems;
    std::set<std::pair<int, std::string>> seen;
    bool any_level = false;
    for (const auto& r : records) {
        if (!same_level(r.perturbation_level, perturbation_level)) continue;
        any_level = true;
        if (ds.num_classes == 0) ds.num_classes = r.num_classes;
        if (r.num_classes != ds.num_classes)
            problems.push_back(r.subject_id + ": num_classes " + std::to_string(r.num_classes) + " disagrees with " +
                               std::to_string(ds.num_classes));
        if (r.label < 0 || r.label >= r.num_classes)
            problems.push_back(r.subject_id + ": label " + std::to_string(r.label) + " out of range [0, " +
                               std::to_string(r.num_classes) + ")");
        if (!seen.emplace(static_cast<int>(r.split), r.subject_id).second)
            problems.push_back(r.subject_id + ": duplicate subject id in split " + to_string(r.split));
        const fs::path file = root / r.feature_path;
        if (!fs::exists(file)) {
            problems.push_back(r.subject_id + ": missing feature file " + file.string());
            continue;
        }
        try {
            auto x = std::make_shared<const Matrix>(read_feature_file(file, shape));
            ds.split(r.split).push_back(Subject{r.subject_id, r.label, std::move(x)});
        } catch (const FormatError& e) {
            problems.push_back(r.subject_id + ": " + e.what());
        }
    }
    if (!problems.empty()) {
        std::string msg = "failed to load " + manifest_path.string() + " (" + std::to_string(problems.size()) +
                          " problem(s)):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw LoadError(msg);
    }
    if (!any_level) {
        std::ostringstream w;
        w << "no records at perturbation level " << perturbation_level << " in " << manifest_path.string();
        ds.warnings.push_back(w.str());
    }
    return ds;
}

/// Distinct perturbation levels present in a manifest, ascending.
inline std::vector<double> manifest_levels(const fs::path& manifest_path) {
    std::vector<double> levels;
    for (const auto& r : read_manifest(manifest_path)) {
        bool known = false;
        for (double l : levels) known = known || same_level(l, r.perturbation_level);
        if (!known) levels.push_back(r.perturbation_level);
    }
    std::sort(levels.begin(), levels.end());
    return levels;
}

/// Attaches a topology to every subject.
inline std::vector<SubjectGraph> build_graphs(const std::vector<Subject>& subjects, const TopologySpec& topology) {
    std::vector<SubjectGraph> out;
    out.reserve(subjects.size());
    for (const auto& s : subjects)
        out.push_back(SubjectGraph{s.features, build_topology(topology, *s.features), s.label, s.subject_id});
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic datasets
//
// Subject features are N(0, noise^2) plus signal * pattern_c on the slice rows
// r with r % num_classes == c, where pattern_c is a fixed random unit vector
// for class c. Perturbed copies add level * level_noise * N(0, 1) on top.

struct SynthSpec {
    int num_train = 200;
    int num_val = 50;
    int num_test = 100;
    int num_classes = 2;
    double signal = 5.0;
    double noise = 1.0;
    std::uint64_t seed = 0;
    int num_slices = kNumSlices;
    int feature_dim = kFeatureDim;
    std::vector<double> levels{0.0};
    double level_noise = 1.0;

    void validate() const {
        if (num_train < 1 || num_val < 1 || num_test < 1) throw ConfigError("every split needs subjects");
        if (num_classes < 2) throw ConfigError("need at least 2 classes");
        if (signal < 0.0 || noise < 0.0) throw ConfigError("signal and noise must be >= 0");
        if (num_slices < 3 || feature_dim < 1) throw ConfigError("bad synthetic shape");
        for (double l : levels)
            if (l < 0.0) throw ConfigError("perturbation levels must be >= 0");
    }

    int count(Split s) const { return s == Split::train ? num_train : s == Split::val ? num_val : num_test; }
};

inline Matrix class_patterns(const SynthSpec& spec) {
    Matrix patterns(spec.num_classes, spec.feature_dim);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int c = 0; c < spec.num_classes; ++c) {
        auto rng = make_rng({spec.seed, 0xC1A55, static_cast<std::uint64_t>(c)});
        for (int d = 0; d < spec.feature_dim; ++d) patterns(c, d) = normal(rng);
        patterns.row(c).normalize();
    }
    return patterns;
}

inline std::string synth_subject_id(Split split, int index) {
    std::ostringstream os;
    os << to_string(split) << '_' << std::setw(5) << std::setfill('0') << index;
    return os.str();
}

/// Labels cycle through the classes so every split is balanced.
inline int synth_label(const SynthSpec& spec, int index) { return index % spec.num_classes; }

/// Features of one synthetic subject at one perturbation level, rounded to float32.
inline Matrix synth_features(const SynthSpec& spec, const Matrix& patterns, Split split, int index, double level) {
    const int label = synth_label(spec, index);
    auto rng = make_rng({spec.seed, static_cast<std::uint64_t>(split) + 1, static_cast<std::uint64_t>(index)});
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix x(spec.num_slices, spec.feature_dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = spec.noise * normal(rng);
    for (int r = 0; r < spec.num_slices; ++r)
        if (r % spec.num_classes == label) x.row(r) += spec.signal * patterns.row(label);
    if (level > 0.0) {
        auto prng = make_rng({spec.seed, static_cast<std::uint64_t>(split) + 1, static_cast<std::uint64_t>(index),
                              std::bit_cast<std::uint64_t>(level)});
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += level * spec.level_noise * normal(prng);
    }
    return x.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
}

/// In-memory synthetic dataset at one level (same content `synth_dataset` writes to disk).
inline Dataset synth_in_memory(const SynthSpec& spec, double level = 0.0) {
    spec.validate();
    const Matrix patterns = class_patterns(spec);
    Dataset ds;
    ds.num_classes = spec.num_classes;
    for (Split split : {Split::train, Split::val, Split::test})
        for (int i = 0; i < spec.count(split); ++i)
            ds.split(split).push_back(Subject{synth_subject_id(split, i), synth_label(spec, i),
                                              std::make_shared<const Matrix>(
                                                  synth_features(spec, patterns, split, i, level))});
    return ds;
}

inline std::string level_tag(double level) {
    std::ostringstream os;
    os << "level_" << std::setprecision(6) << level;
    return os.str();
}

/// Writes feature files for every split and level plus `manifest.jsonl` under `out_dir`.
/// Returns the manifest path.
inline fs::path synth_dataset(const SynthSpec& spec, const fs::path& out_dir) {
    spec.validate();
    const Matrix patterns = class_patterns(spec);
    std::vector<ManifestRecord> records;
    for (double level : spec.levels)
        for (Split split : {Split::train, Split::val, Split::test})
            for (int i = 0; i < spec.count(split); ++i) {
                ManifestRecord r;
                r.subject_id = synth_subject_id(split, i);
                r.split = split;
                r.label = synth_label(spec, i);
                r.num_classes = spec.num_classes;
                r.perturbation_level = level;
                r.feature_path = (fs::path("features") / level_tag(level) / (r.subject_id + ".lgf")).generic_string();
                write_feature_file(out_dir / r.feature_path, synth_features(spec, patterns, split, i, level));
                records.push_back(std::move(r));
            }
    const fs::path manifest = out_dir / "manifest.jsonl";
    write_manifest(manifest, records);
    return manifest;
}

} // namespace slicegraph
