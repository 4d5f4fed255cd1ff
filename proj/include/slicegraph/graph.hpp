#pragma once

#include <slicegraph/errors.hpp>
#include <slicegraph/numerics.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace slicegraph {

inline constexpr int kNumSlices = 64;
inline constexpr int kFeatureDim = 1152; // 3 views x 384

// ---------------------------------------------------------------------------
// Topology descriptors

enum class SliceTopology { fully_connected, star, line, custom };
enum class Metric { l1, l2, linf, cosine };

struct SliceBased {
    SliceTopology kind = SliceTopology::line;
    friend bool operator==(const SliceBased&, const SliceBased&) = default;
};

struct EncodingBased {
    Metric metric = Metric::l2;
    int k = 5;
    friend bool operator==(const EncodingBased&, const EncodingBased&) = default;
};

using TopologySpec = std::variant<SliceBased, EncodingBased>;

inline std::string to_string(SliceTopology t) {
    switch (t) {
    case SliceTopology::fully_connected: return "fully_connected";
    case SliceTopology::star: return "star";
    case SliceTopology::line: return "line";
    case SliceTopology::custom: return "custom";
    }
    return "?";
}

inline std::string to_string(Metric m) {
    switch (m) {
    case Metric::l1: return "l1";
    case Metric::l2: return "l2";
    case Metric::linf: return "linf";
    case Metric::cosine: return "cosine";
    }
    return "?";
}

inline SliceTopology parse_slice_topology(const std::string& s) {
    if (s == "fully_connected") return SliceTopology::fully_connected;
    if (s == "star") return SliceTopology::star;
    if (s == "line") return SliceTopology::line;
    if (s == "custom") return SliceTopology::custom;
    throw ConfigError("unknown slice topology '" + s + "'");
}

inline Metric parse_metric(const std::string& s) {
    if (s == "l1" || s == "manhattan") return Metric::l1;
    if (s == "l2" || s == "euclidean") return Metric::l2;
    if (s == "linf" || s == "chebyshev") return Metric::linf;
    if (s == "cosine") return Metric::cosine;
    throw ConfigError("unknown metric '" + s + "'");
}

/// Name used in reports and file keys: "line", "custom", "l2", "cosine", ...
inline std::string topology_name(const TopologySpec& spec) {
    if (const auto* s = std::get_if<SliceBased>(&spec)) return to_string(s->kind);
    return to_string(std::get<EncodingBased>(spec).metric);
}

/// k for encoding-based topologies, nothing for slice-based ones.
inline std::optional<int> topology_k(const TopologySpec& spec) {
    if (const auto* e = std::get_if<EncodingBased>(&spec)) return e->k;
    return std::nullopt;
}

/// Parses "line", "custom", "l2:5", "cosine:7", ...
inline TopologySpec parse_topology(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) return SliceBased{parse_slice_topology(text)};
    EncodingBased e;
    e.metric = parse_metric(text.substr(0, colon));
    try {
        e.k = std::stoi(text.substr(colon + 1));
    } catch (const std::exception&) {
        throw ConfigError("bad neighbor count in topology '" + text + "'");
    }
    return e;
}

// ---------------------------------------------------------------------------
// Edge sets

/// Undirected edges stored once as (u, v) with u < v, sorted. Builders always
/// produce this canonical form; `validate_graph` checks externally supplied sets.
struct EdgeSet {
    int num_nodes = 0;
    std::vector<std::pair<int, int>> edges;

    std::size_t size() const { return edges.size(); }

    bool contains(int u, int v) const {
        if (u > v) std::swap(u, v);
        return std::binary_search(edges.begin(), edges.end(), std::make_pair(u, v));
    }

    /// Canonicalizes arbitrary pairs: orients, sorts and deduplicates.
    static EdgeSet from_pairs(int num_nodes, std::vector<std::pair<int, int>> pairs) {
        for (auto& [u, v] : pairs) {
            if (u == v) throw GraphError("self-loop on node " + std::to_string(u));
            if (u < 0 || v < 0 || u >= num_nodes || v >= num_nodes)
                throw GraphError("edge (" + std::to_string(u) + "," + std::to_string(v) + ") out of range");
            if (u > v) std::swap(u, v);
        }
        std::sort(pairs.begin(), pairs.end());
        pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
        return EdgeSet{num_nodes, std::move(pairs)};
    }

    Matrix adjacency() const {
        Matrix a = Matrix::Zero(num_nodes, num_nodes);
        for (const auto& [u, v] : edges) a(u, v) = a(v, u) = 1.0;
        return a;
    }

    /// Sorted neighbor list per node.
    std::vector<std::vector<int>> neighbors() const {
        std::vector<std::vector<int>> out(static_cast<std::size_t>(num_nodes));
        for (const auto& [u, v] : edges) {
            out[static_cast<std::size_t>(u)].push_back(v);
            out[static_cast<std::size_t>(v)].push_back(u);
        }
        for (auto& list : out) std::sort(list.begin(), list.end());
        return out;
    }
};

/// Index of the central slice used by star and custom topologies.
inline int central_node(int n) { return (n - 1) / 2; }

inline EdgeSet build_slice_topology(SliceTopology kind, int n) {
    if (n < 3) throw ConfigError("slice topology needs at least 3 nodes, got " + std::to_string(n));
    std::vector<std::pair<int, int>> pairs;
    const int c = central_node(n);
    const auto add_line = [&] {
        for (int i = 0; i + 1 < n; ++i) pairs.emplace_back(i, i + 1);
    };
    const auto add_star = [&] {
        for (int j = 0; j < n; ++j)
            if (j != c) pairs.emplace_back(std::min(c, j), std::max(c, j));
    };
    switch (kind) {
    case SliceTopology::fully_connected:
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
        break;
    case SliceTopology::line: add_line(); break;
    case SliceTopology::star: add_star(); break;
    case SliceTopology::custom:
        add_star();
        add_line();
        break;
    }
    return EdgeSet::from_pairs(n, std::move(pairs));
}

// ---------------------------------------------------------------------------
// Distances. Smaller means more similar for every metric; cosine is reported
// as the dissimilarity 1 - cos(u, v).

inline double pairwise_distance(Metric metric, std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size())
        throw ConfigError("pairwise_distance: dimension mismatch " + std::to_string(u.size()) + " vs " +
                          std::to_string(v.size()));
    const std::size_t d = u.size();
    switch (metric) {
    case Metric::l1: {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += std::abs(u[i] - v[i]);
        return s;
    }
    case Metric::l2: {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
        return std::sqrt(s);
    }
    case Metric::linf: {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s = std::max(s, std::abs(u[i] - v[i]));
        return s;
    }
    case Metric::cosine: {
        double dot = 0.0, nu = 0.0, nv = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            dot += u[i] * v[i];
            nu += u[i] * u[i];
            nv += v[i] * v[i];
        }
        if (nu == 0.0 || nv == 0.0) throw DataError("cosine distance of a zero vector");
        return 1.0 - dot / (std::sqrt(nu) * std::sqrt(nv));
    }
    }
    return 0.0;
}

inline std::span<const double> row_span(const Matrix& m, Eigen::Index r) {
    return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

/// Per-node k nearest other nodes, ordered by (distance, index). Ties go to the lower index.
inline std::vector<std::vector<int>> knn_picks(const Matrix& features, Metric metric, int k) {
    const int n = static_cast<int>(features.rows());
    if (k < 1 || k > n - 1)
        throw ConfigError("k must lie in [1, " + std::to_string(n - 1) + "], got " + std::to_string(k));
    Matrix dist = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            dist(i, j) = dist(j, i) = pairwise_distance(metric, row_span(features, i), row_span(features, j));

    std::vector<std::vector<int>> picks(static_cast<std::size_t>(n));
    std::vector<int> order;
    for (int i = 0; i < n; ++i) {
        order.clear();
        for (int j = 0; j < n; ++j)
            if (j != i) order.push_back(j);
        const auto closer = [&](int a, int b) {
            if (dist(i, a) != dist(i, b)) return dist(i, a) < dist(i, b);
            return a < b;
        };
        std::partial_sort(order.begin(), order.begin() + k, order.end(), closer);
        picks[static_cast<std::size_t>(i)].assign(order.begin(), order.begin() + k);
    }
    return picks;
}

/// Symmetrized kNN graph: {u, v} is an edge if either endpoint picked the other.
inline EdgeSet build_knn_topology(const Matrix& features, Metric metric, int k) {
    const auto picks = knn_picks(features, metric, k);
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t i = 0; i < picks.size(); ++i)
        for (int j : picks[i]) pairs.emplace_back(static_cast<int>(i), j);
    return EdgeSet::from_pairs(static_cast<int>(features.rows()), std::move(pairs));
}

inline EdgeSet build_topology(const TopologySpec& spec, const Matrix& features) {
    if (const auto* s = std::get_if<SliceBased>(&spec))
        return build_slice_topology(s->kind, static_cast<int>(features.rows()));
    const auto& e = std::get<EncodingBased>(spec);
    return build_knn_topology(features, e.metric, e.k);
}

// ---------------------------------------------------------------------------
// Subject graphs

struct SubjectGraph {
    std::shared_ptr<const Matrix> features; // num_nodes x feature_dim
    EdgeSet edges;
    int label = 0;
    std::string subject_id;

    int num_nodes() const { return static_cast<int>(features->rows()); }
};

struct GraphShape {
    int num_nodes = kNumSlices;
    int feature_dim = kFeatureDim;
};

/// Returns the list of problems found; empty means the graph is well formed.
inline std::vector<std::string> validate_graph(const SubjectGraph& g, GraphShape shape = {}, int num_classes = 0) {
    std::vector<std::string> out;
    if (!g.features) {
        out.emplace_back("missing features");
        return out;
    }
    const Matrix& x = *g.features;
    if (x.rows() != shape.num_nodes)
        out.push_back("node count " + std::to_string(x.rows()) + ", expected " + std::to_string(shape.num_nodes));
    if (x.cols() != shape.feature_dim)
        out.push_back("feature width " + std::to_string(x.cols()) + ", expected " + std::to_string(shape.feature_dim));
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        if (!x.row(r).allFinite()) {
            out.push_back("non-finite feature in row " + std::to_string(r));
            break;
        }
    if (g.edges.num_nodes != x.rows())
        out.push_back("edge set declares " + std::to_string(g.edges.num_nodes) + " nodes for " +
                      std::to_string(x.rows()) + " feature rows");
    for (const auto& [u, v] : g.edges.edges) {
        if (u == v) out.push_back("self-loop on node " + std::to_string(u));
        if (u < 0 || v < 0 || u >= x.rows() || v >= x.rows())
            out.push_back("edge (" + std::to_string(u) + "," + std::to_string(v) + ") out of range");
    }
    if (g.label < 0 || (num_classes > 0 && g.label >= num_classes))
        out.push_back("label " + std::to_string(g.label) + " out of range");
    return out;
}

} // namespace slicegraph
