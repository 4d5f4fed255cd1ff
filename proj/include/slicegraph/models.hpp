#pragma once

#include <slicegraph/errors.hpp>
#include <slicegraph/graph.hpp>
#include <slicegraph/numerics.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace slicegraph {

enum class Arch { sage, gat, cond_mlp };

inline std::string to_string(Arch a) {
    switch (a) {
    case Arch::sage: return "sage";
    case Arch::gat: return "gat";
    case Arch::cond_mlp: return "cond_mlp";
    }
    return "?";
}

inline Arch parse_arch(const std::string& s) {
    if (s == "sage" || s == "SAGEConv") return Arch::sage;
    if (s == "gat" || s == "GATConv") return Arch::gat;
    if (s == "cond_mlp" || s == "mlp") return Arch::cond_mlp;
    throw ConfigError("unknown architecture '" + s + "'");
}

/// Two-layer head. `in_dim` is the per-slice feature width; the conditional MLP
/// appends one slice-position column on top of it.
struct ModelConfig {
    Arch arch = Arch::sage;
    int in_dim = kFeatureDim;
    int hidden_dim = 128;
    int num_classes = 2;
    double gat_negative_slope = 0.2;
    int gat_heads = 1;

    void validate() const {
        if (in_dim < 1 || hidden_dim < 1) throw ConfigError("model dimensions must be positive");
        if (num_classes < 2) throw ConfigError("need at least 2 classes, got " + std::to_string(num_classes));
        if (gat_heads != 1) throw ConfigError("only single-head attention is supported");
        if (gat_negative_slope < 0.0) throw ConfigError("negative slope must be >= 0");
    }
};

/// Hidden widths that put each head at roughly 300k trainable scalars for 1152-d input.
inline ModelConfig default_model_config(Arch arch, int num_classes, int in_dim = kFeatureDim) {
    ModelConfig c;
    c.arch = arch;
    c.in_dim = in_dim;
    c.num_classes = num_classes;
    c.hidden_dim = arch == Arch::sage ? 128 : 256;
    return c;
}

inline std::size_t count_parameters(const ModelConfig& c) {
    const std::size_t in = static_cast<std::size_t>(c.in_dim);
    const std::size_t h = static_cast<std::size_t>(c.hidden_dim);
    const std::size_t k = static_cast<std::size_t>(c.num_classes);
    switch (c.arch) {
    case Arch::sage: return 2 * in * h + h + 2 * h * k + k;
    case Arch::gat: return (in * h + 3 * h) + (h * k + 3 * k); // W, att_target, att_neighbor, bias
    case Arch::cond_mlp: return (in + 1) * h + h + h * k + k;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Batches: several graphs stacked row-wise into one node matrix.

struct GraphBatch {
    Matrix features;                          // total_nodes x in_dim
    std::vector<int> offsets{0};              // graph g owns rows [offsets[g], offsets[g+1])
    std::vector<std::vector<int>> neighbors;  // per stacked row, global row indices, sorted
    std::vector<double> slice_position;       // per stacked row, i / (n - 1); used by the conditional MLP
    std::vector<int> labels;

    int num_graphs() const { return static_cast<int>(offsets.size()) - 1; }
    int graph_size(int g) const { return offsets[g + 1] - offsets[g]; }
};

inline GraphBatch make_batch(std::span<const SubjectGraph* const> graphs) {
    GraphBatch b;
    if (graphs.empty()) throw DataError("empty batch");
    const auto dim = graphs.front()->features->cols();
    int total = 0;
    for (const auto* g : graphs) {
        if (g->features->cols() != dim) throw ConfigError("batch mixes feature widths");
        if (g->edges.num_nodes != g->num_nodes()) throw GraphError("edge set does not match node count");
        total += g->num_nodes();
        b.offsets.push_back(total);
    }
    b.features.resize(total, dim);
    b.neighbors.resize(static_cast<std::size_t>(total));
    b.slice_position.resize(static_cast<std::size_t>(total));
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const auto& g = *graphs[gi];
        const int base = b.offsets[gi];
        const int n = g.num_nodes();
        b.features.middleRows(base, n) = *g.features;
        auto local = g.edges.neighbors();
        for (int v = 0; v < n; ++v) {
            auto& dst = b.neighbors[static_cast<std::size_t>(base + v)];
            dst.reserve(local[static_cast<std::size_t>(v)].size());
            for (int u : local[static_cast<std::size_t>(v)]) dst.push_back(base + u);
            b.slice_position[static_cast<std::size_t>(base + v)] =
                n > 1 ? static_cast<double>(v) / static_cast<double>(n - 1) : 0.0;
        }
        b.labels.push_back(g.label);
    }
    return b;
}

inline GraphBatch make_batch(const SubjectGraph& g) {
    const SubjectGraph* one[] = {&g};
    return make_batch(std::span<const SubjectGraph* const>(one));
}

// ---------------------------------------------------------------------------
// Pooling

/// Column-wise mean of rows [begin, end). Each column is summed in ascending
/// value order so the result does not depend on row order at all.
inline RowVector mean_rows_canonical(const Matrix& h, int begin, int end) {
    const int n = end - begin;
    if (n <= 0) throw DataError("mean pooling over an empty node set");
    RowVector out(h.cols());
    std::vector<double> column(static_cast<std::size_t>(n));
    for (Eigen::Index c = 0; c < h.cols(); ++c) {
        for (int r = 0; r < n; ++r) column[static_cast<std::size_t>(r)] = h(begin + r, c);
        std::sort(column.begin(), column.end());
        double s = 0.0;
        for (double v : column) s += v;
        out(c) = s / static_cast<double>(n);
    }
    return out;
}

inline RowVector global_mean_pool(const Matrix& h) { return mean_rows_canonical(h, 0, static_cast<int>(h.rows())); }

inline Matrix segment_mean_pool(const Matrix& h, const std::vector<int>& offsets) {
    const int graphs = static_cast<int>(offsets.size()) - 1;
    Matrix out(graphs, h.cols());
    for (int g = 0; g < graphs; ++g) out.row(g) = mean_rows_canonical(h, offsets[g], offsets[g + 1]);
    return out;
}

inline Matrix segment_mean_pool_backward(const Matrix& grad_pooled, const std::vector<int>& offsets) {
    const int graphs = static_cast<int>(offsets.size()) - 1;
    Matrix g(offsets.back(), grad_pooled.cols());
    for (int i = 0; i < graphs; ++i) {
        const int n = offsets[i + 1] - offsets[i];
        g.middleRows(offsets[i], n).rowwise() = grad_pooled.row(i) / static_cast<double>(n);
    }
    return g;
}

// ---------------------------------------------------------------------------
// GraphSAGE layer: H'[v] = H[v] W_root + mean_{u in N(v)} H[u] W_neigh + b.
// Isolated nodes contribute a zero neighbor term.

struct SageParams {
    ParamTensor w_root;
    ParamTensor w_neigh;
    ParamTensor bias;
};

using NeighborLists = std::vector<std::vector<int>>;

inline Matrix neighbor_mean(const NeighborLists& nbrs, const Matrix& h) {
    Matrix m = Matrix::Zero(h.rows(), h.cols());
    for (std::size_t v = 0; v < nbrs.size(); ++v) {
        const auto& list = nbrs[v];
        if (list.empty()) continue;
        auto row = m.row(static_cast<Eigen::Index>(v));
        for (int u : list) row += h.row(u);
        row /= static_cast<double>(list.size());
    }
    return m;
}

inline Matrix neighbor_mean_backward(const NeighborLists& nbrs, const Matrix& grad_mean) {
    Matrix g = Matrix::Zero(grad_mean.rows(), grad_mean.cols());
    for (std::size_t v = 0; v < nbrs.size(); ++v) {
        const auto& list = nbrs[v];
        if (list.empty()) continue;
        const RowVector share = grad_mean.row(static_cast<Eigen::Index>(v)) / static_cast<double>(list.size());
        for (int u : list) g.row(u) += share;
    }
    return g;
}

struct SageCache {
    Matrix neigh_mean;
};

inline Matrix sage_layer_forward(const NeighborLists& nbrs, const Matrix& h, const SageParams& p,
                                 SageCache* cache = nullptr) {
    if (static_cast<std::size_t>(h.rows()) != nbrs.size())
        throw ConfigError("sage layer: " + std::to_string(nbrs.size()) + " neighbor lists for " +
                          std::to_string(h.rows()) + " rows");
    if (h.cols() != p.w_root.value.rows() || h.cols() != p.w_neigh.value.rows())
        throw ConfigError("sage layer: input width " + std::to_string(h.cols()) + " vs weights " +
                          shape_string(p.w_root.value));
    Matrix agg = neighbor_mean(nbrs, h);
    Matrix out = h * p.w_root.value;
    out.noalias() += agg * p.w_neigh.value;
    out.rowwise() += p.bias.value.row(0);
    if (cache) cache->neigh_mean = std::move(agg);
    return out;
}

inline Matrix sage_layer_forward(const EdgeSet& edges, const Matrix& h, const SageParams& p) {
    return sage_layer_forward(edges.neighbors(), h, p);
}

inline Matrix sage_layer_backward(const NeighborLists& nbrs, const Matrix& h, const SageCache& cache,
                                  SageParams& p, const Matrix& grad_out, bool need_input_grad) {
    p.w_root.grad.noalias() += h.transpose() * grad_out;
    p.w_neigh.grad.noalias() += cache.neigh_mean.transpose() * grad_out;
    p.bias.grad.row(0) += grad_out.colwise().sum();
    if (!need_input_grad) return {};
    Matrix grad_h = grad_out * p.w_root.value.transpose();
    grad_h += neighbor_mean_backward(nbrs, grad_out * p.w_neigh.value.transpose());
    return grad_h;
}

// ---------------------------------------------------------------------------
// GAT layer, single head. With Z = H W and implicit self-loops:
//   e[v][u] = LeakyReLU(att_target . Z[v] + att_neighbor . Z[u]),  u in N(v) + {v}
//   alpha   = masked softmax of e over each closed neighborhood
//   H'[v]   = sum_u alpha[v][u] Z[u] + b

struct GatParams {
    ParamTensor weight;       // in x out
    ParamTensor att_target;   // 1 x out, scores the receiving node
    ParamTensor att_neighbor; // 1 x out, scores the sending node
    ParamTensor bias;         // 1 x out
};

struct GatCache {
    Matrix z;
    std::vector<Matrix> pre;   // per graph, pre-activation scores
    std::vector<Matrix> alpha; // per graph, attention weights
};

inline Mask closed_neighborhood_mask(const NeighborLists& nbrs, int begin, int end) {
    const int n = end - begin;
    Mask mask = Mask::Constant(n, n, false);
    for (int v = 0; v < n; ++v) {
        mask(v, v) = true;
        for (int u : nbrs[static_cast<std::size_t>(begin + v)]) {
            if (u < begin || u >= end) throw GraphError("neighbor crosses graph boundary in batch");
            mask(v, u - begin) = true;
        }
    }
    return mask;
}

inline Matrix gat_layer_forward(const NeighborLists& nbrs, const std::vector<int>& offsets, const Matrix& h,
                                const GatParams& p, double negative_slope, GatCache* cache = nullptr) {
    if (h.cols() != p.weight.value.rows())
        throw ConfigError("gat layer: input width " + std::to_string(h.cols()) + " vs weight " +
                          shape_string(p.weight.value));
    if (static_cast<std::size_t>(h.rows()) != nbrs.size() || offsets.back() != h.rows())
        throw ConfigError("gat layer: batch layout does not match input rows");
    Matrix z = h * p.weight.value;
    Matrix out(z.rows(), z.cols());
    const int graphs = static_cast<int>(offsets.size()) - 1;
    if (cache) {
        cache->pre.resize(static_cast<std::size_t>(graphs));
        cache->alpha.resize(static_cast<std::size_t>(graphs));
    }
    for (int g = 0; g < graphs; ++g) {
        const int begin = offsets[g];
        const int n = offsets[g + 1] - begin;
        const auto zg = z.middleRows(begin, n);
        const Eigen::VectorXd s_target = zg * p.att_target.value.row(0).transpose();
        const Eigen::VectorXd s_neighbor = zg * p.att_neighbor.value.row(0).transpose();
        Matrix pre(n, n);
        for (int v = 0; v < n; ++v)
            for (int u = 0; u < n; ++u) pre(v, u) = s_target(v) + s_neighbor(u);
        const Mask mask = closed_neighborhood_mask(nbrs, begin, offsets[g + 1]);
        Matrix alpha = masked_softmax(rectify(pre, negative_slope), mask);
        out.middleRows(begin, n).noalias() = alpha * zg;
        if (cache) {
            cache->pre[static_cast<std::size_t>(g)] = std::move(pre);
            cache->alpha[static_cast<std::size_t>(g)] = std::move(alpha);
        }
    }
    out.rowwise() += p.bias.value.row(0);
    if (cache) cache->z = std::move(z);
    return out;
}

inline Matrix gat_layer_forward(const EdgeSet& edges, const Matrix& h, const GatParams& p,
                                double negative_slope = 0.2) {
    const std::vector<int> offsets{0, static_cast<int>(h.rows())};
    return gat_layer_forward(edges.neighbors(), offsets, h, p, negative_slope);
}

inline Matrix gat_layer_backward(const std::vector<int>& offsets, const Matrix& h, const GatCache& cache,
                                 GatParams& p, double negative_slope, const Matrix& grad_out,
                                 bool need_input_grad) {
    p.bias.grad.row(0) += grad_out.colwise().sum();
    Matrix grad_z = Matrix::Zero(cache.z.rows(), cache.z.cols());
    const int graphs = static_cast<int>(offsets.size()) - 1;
    const RowVector& a_t = p.att_target.value.row(0);
    const RowVector& a_n = p.att_neighbor.value.row(0);
    for (int g = 0; g < graphs; ++g) {
        const int begin = offsets[g];
        const int n = offsets[g + 1] - begin;
        const auto zg = cache.z.middleRows(begin, n);
        const auto dout = grad_out.middleRows(begin, n);
        const Matrix& alpha = cache.alpha[static_cast<std::size_t>(g)];
        const Matrix& pre = cache.pre[static_cast<std::size_t>(g)];

        auto dz = grad_z.middleRows(begin, n);
        dz.noalias() += alpha.transpose() * dout;
        const Matrix d_alpha = dout * zg.transpose();
        const Matrix d_pre = rectify_backward(pre, masked_softmax_backward(alpha, d_alpha), negative_slope);
        const Eigen::VectorXd ds_target = d_pre.rowwise().sum();
        const Eigen::VectorXd ds_neighbor = d_pre.colwise().sum().transpose();
        p.att_target.grad.row(0).noalias() += ds_target.transpose() * zg;
        p.att_neighbor.grad.row(0).noalias() += ds_neighbor.transpose() * zg;
        dz.noalias() += ds_target * a_t;
        dz.noalias() += ds_neighbor * a_n;
    }
    p.weight.grad.noalias() += h.transpose() * grad_z;
    if (!need_input_grad) return {};
    return grad_z * p.weight.value.transpose();
}

// ---------------------------------------------------------------------------
// Heads

struct GraphLevelOutput {
    RowVector logits;
    RowVector pooled; // h_G; with pooling after the second layer this equals the logits
};

namespace detail {

inline Matrix glorot(std::mt19937_64& rng, int fan_in, int fan_out, int rows, int cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

} // namespace detail

/// Intermediate values of one training forward pass, consumed by backward.
struct Tape {
    Matrix input; // conditional MLP only: features with the slice-position column
    Matrix pre1;  // first-layer output before ReLU
    Matrix act1;  // after ReLU
    SageCache sage1, sage2;
    GatCache gat1, gat2;
};

class Model {
public:
    Model() = default;

    Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
        config_.validate();
        auto rng = make_rng({seed, 0x1417});
        const int in = config_.in_dim, h = config_.hidden_dim, c = config_.num_classes;
        switch (config_.arch) {
        case Arch::sage:
            sage_[0] = {ParamTensor(detail::glorot(rng, in, h, in, h)), ParamTensor(detail::glorot(rng, in, h, in, h)),
                        ParamTensor(1, h)};
            sage_[1] = {ParamTensor(detail::glorot(rng, h, c, h, c)), ParamTensor(detail::glorot(rng, h, c, h, c)),
                        ParamTensor(1, c)};
            break;
        case Arch::gat:
            gat_[0] = {ParamTensor(detail::glorot(rng, in, h, in, h)), ParamTensor(detail::glorot(rng, h, 1, 1, h)),
                       ParamTensor(detail::glorot(rng, h, 1, 1, h)), ParamTensor(1, h)};
            gat_[1] = {ParamTensor(detail::glorot(rng, h, c, h, c)), ParamTensor(detail::glorot(rng, c, 1, 1, c)),
                       ParamTensor(detail::glorot(rng, c, 1, 1, c)), ParamTensor(1, c)};
            break;
        case Arch::cond_mlp:
            mlp_w_[0] = ParamTensor(detail::glorot(rng, in + 1, h, in + 1, h));
            mlp_b_[0] = ParamTensor(1, h);
            mlp_w_[1] = ParamTensor(detail::glorot(rng, h, c, h, c));
            mlp_b_[1] = ParamTensor(1, c);
            break;
        }
    }

    const ModelConfig& config() const { return config_; }

    /// Trainable tensors in a fixed order (used by the optimizer and by checkpoints).
    std::vector<ParamTensor*> parameters() {
        switch (config_.arch) {
        case Arch::sage:
            return {&sage_[0].w_root, &sage_[0].w_neigh, &sage_[0].bias,
                    &sage_[1].w_root, &sage_[1].w_neigh, &sage_[1].bias};
        case Arch::gat:
            return {&gat_[0].weight, &gat_[0].att_target, &gat_[0].att_neighbor, &gat_[0].bias,
                    &gat_[1].weight, &gat_[1].att_target, &gat_[1].att_neighbor, &gat_[1].bias};
        case Arch::cond_mlp:
            return {&mlp_w_[0], &mlp_b_[0], &mlp_w_[1], &mlp_b_[1]};
        }
        return {};
    }

    std::vector<const ParamTensor*> parameters() const {
        auto ps = const_cast<Model*>(this)->parameters();
        return {ps.begin(), ps.end()};
    }

    std::size_t num_parameters() const {
        std::size_t n = 0;
        for (const auto* p : parameters()) n += static_cast<std::size_t>(p->size());
        return n;
    }

    void zero_grad() {
        for (auto* p : parameters()) p->zero_grad();
    }

    SageParams& sage_layer(int i) { return sage_.at(static_cast<std::size_t>(i)); }
    GatParams& gat_layer(int i) { return gat_.at(static_cast<std::size_t>(i)); }

    /// Graph-level logits, one row per graph in the batch. Pass a tape to enable backward.
    Matrix forward(const GraphBatch& batch, Tape* tape = nullptr) const {
        if (batch.features.cols() != config_.in_dim)
            throw ConfigError("model expects feature width " + std::to_string(config_.in_dim) + ", batch has " +
                              std::to_string(batch.features.cols()));
        Tape local;
        Tape& t = tape ? *tape : local;
        Matrix out;
        switch (config_.arch) {
        case Arch::sage:
            t.pre1 = sage_layer_forward(batch.neighbors, batch.features, sage_[0], &t.sage1);
            t.act1 = rectify(t.pre1);
            out = sage_layer_forward(batch.neighbors, t.act1, sage_[1], &t.sage2);
            break;
        case Arch::gat:
            t.pre1 = gat_layer_forward(batch.neighbors, batch.offsets, batch.features, gat_[0],
                                       config_.gat_negative_slope, &t.gat1);
            t.act1 = rectify(t.pre1);
            out = gat_layer_forward(batch.neighbors, batch.offsets, t.act1, gat_[1], config_.gat_negative_slope,
                                    &t.gat2);
            break;
        case Arch::cond_mlp:
            t.input.resize(batch.features.rows(), batch.features.cols() + 1);
            t.input.leftCols(batch.features.cols()) = batch.features;
            for (Eigen::Index r = 0; r < batch.features.rows(); ++r)
                t.input(r, batch.features.cols()) = batch.slice_position[static_cast<std::size_t>(r)];
            t.pre1 = affine(t.input, mlp_w_[0], mlp_b_[0]);
            t.act1 = rectify(t.pre1);
            out = affine(t.act1, mlp_w_[1], mlp_b_[1]);
            break;
        }
        return segment_mean_pool(out, batch.offsets);
    }

    /// Accumulates parameter gradients given dL/dlogits from the matching forward call.
    void backward(const GraphBatch& batch, const Tape& t, const Matrix& grad_logits) {
        const Matrix grad_nodes = segment_mean_pool_backward(grad_logits, batch.offsets);
        switch (config_.arch) {
        case Arch::sage: {
            const Matrix g1 = sage_layer_backward(batch.neighbors, t.act1, t.sage2, sage_[1], grad_nodes, true);
            sage_layer_backward(batch.neighbors, batch.features, t.sage1, sage_[0], rectify_backward(t.pre1, g1),
                                false);
            break;
        }
        case Arch::gat: {
            const double slope = config_.gat_negative_slope;
            const Matrix g1 = gat_layer_backward(batch.offsets, t.act1, t.gat2, gat_[1], slope, grad_nodes, true);
            gat_layer_backward(batch.offsets, batch.features, t.gat1, gat_[0], slope, rectify_backward(t.pre1, g1),
                               false);
            break;
        }
        case Arch::cond_mlp: {
            const Matrix g1 = affine_backward(t.act1, mlp_w_[1], mlp_b_[1], grad_nodes, true);
            affine_backward(t.input, mlp_w_[0], mlp_b_[0], rectify_backward(t.pre1, g1), false);
            break;
        }
        }
    }

private:
    ModelConfig config_;
    std::array<SageParams, 2> sage_{};
    std::array<GatParams, 2> gat_{};
    std::array<ParamTensor, 2> mlp_w_{}, mlp_b_{};
};

/// Single-graph forward for the GNN heads.
inline GraphLevelOutput gnn_head_forward(const SubjectGraph& graph, const Model& model) {
    if (model.config().arch == Arch::cond_mlp) throw ConfigError("gnn_head_forward needs a sage or gat model");
    const Matrix logits = model.forward(make_batch(graph));
    return {logits.row(0), logits.row(0)};
}

/// Conditional MLP on one subject's slice stack. Slice positions default to i / (n - 1).
inline GraphLevelOutput cond_mlp_forward(const Matrix& features, const Model& model,
                                         std::span<const double> slice_position = {}) {
    if (model.config().arch != Arch::cond_mlp) throw ConfigError("cond_mlp_forward needs a cond_mlp model");
    const int n = static_cast<int>(features.rows());
    GraphBatch b;
    b.features = features;
    b.offsets = {0, n};
    b.neighbors.resize(static_cast<std::size_t>(n));
    b.slice_position.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        b.slice_position[static_cast<std::size_t>(i)] =
            !slice_position.empty() ? slice_position[static_cast<std::size_t>(i)]
                                    : (n > 1 ? static_cast<double>(i) / (n - 1) : 0.0);
    const Matrix logits = model.forward(b);
    return {logits.row(0), logits.row(0)};
}

} // namespace slicegraph
