#include "test_support.hpp"

#include <slicegraph/models.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace slicegraph;
using namespace slicegraph::testing;

namespace {

Matrix row(std::initializer_list<double> values) {
    Matrix m(1, static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double v : values) m(0, i++) = v;
    return m;
}

SageParams identity_sage(int d) {
    return {ParamTensor(Matrix::Identity(d, d)), ParamTensor(Matrix::Identity(d, d)), ParamTensor(1, d)};
}

GatParams identity_gat(int d) {
    return {ParamTensor(Matrix::Identity(d, d)), ParamTensor(1, d), ParamTensor(1, d), ParamTensor(1, d)};
}

ModelConfig small_config(Arch arch) {
    ModelConfig c;
    c.arch = arch;
    c.in_dim = 16;
    c.hidden_dim = 8;
    c.num_classes = 3;
    return c;
}

double max_abs(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

} // namespace

TEST(Sage, IdentityWeightsAddNeighborMean) {
    const auto p = identity_sage(2);
    Matrix h(2, 2);
    h << 1, 0, 0, 1;
    const Matrix out = sage_layer_forward(EdgeSet::from_pairs(2, {{0, 1}}), h, p);
    EXPECT_EQ(out.row(0), row({1, 1}));
}

TEST(Sage, IsolatedNodeKeepsRootTerm) {
    const auto p = identity_sage(3);
    Matrix h(2, 3);
    h << 1, -2, 3, 4, 5, 6;
    const Matrix out = sage_layer_forward(EdgeSet{2, {}}, h, p);
    EXPECT_EQ(out, h);
}

TEST(Sage, ThreeNodeLine) {
    const auto p = identity_sage(1);
    const Matrix h = Matrix::Ones(3, 1);
    const Matrix out = sage_layer_forward(build_slice_topology(SliceTopology::line, 3), h, p);
    EXPECT_EQ(out, Matrix::Constant(3, 1, 2.0));
}

TEST(Sage, ConstantFieldOnCompleteGraph) {
    std::mt19937_64 rng(6);
    Model m(small_config(Arch::sage), 1);
    const auto& p = m.sage_layer(0);
    const Matrix x = random_matrix(rng, 1, 16);
    const Matrix h = x.replicate(10, 1);
    const Matrix out = sage_layer_forward(build_slice_topology(SliceTopology::fully_connected, 10), h, p);
    const Matrix expected = x * (p.w_root.value + p.w_neigh.value) + p.bias.value;
    for (int v = 0; v < 10; ++v) EXPECT_LT(max_abs(out.row(v), expected), 1e-12);
}

TEST(Gat, IsolatedNodeAttendsToItself) {
    std::mt19937_64 rng(2);
    GatParams p{ParamTensor(random_matrix(rng, 3, 4)), ParamTensor(random_matrix(rng, 1, 4)),
                ParamTensor(random_matrix(rng, 1, 4)), ParamTensor(random_matrix(rng, 1, 4))};
    const Matrix h = random_matrix(rng, 1, 3);
    const Matrix out = gat_layer_forward(EdgeSet{1, {}}, h, p);
    EXPECT_LT(max_abs(out, h * p.weight.value + p.bias.value), 1e-12);
}

TEST(Gat, TwoNodesZeroAttentionAverages) {
    Matrix h(2, 2);
    h << 2, 0, 0, 2;
    const Matrix out = gat_layer_forward(EdgeSet::from_pairs(2, {{0, 1}}), h, identity_gat(2));
    EXPECT_EQ(out, Matrix::Ones(2, 2));
}

TEST(Gat, IdenticalFeaturesGiveUniformAttention) {
    std::mt19937_64 rng(3);
    GatParams p{ParamTensor(random_matrix(rng, 4, 5)), ParamTensor(random_matrix(rng, 1, 5)),
                ParamTensor(random_matrix(rng, 1, 5)), ParamTensor(1, 5)};
    const EdgeSet e = random_edges(rng, 9, 0.4);
    const Matrix h = random_matrix(rng, 1, 4).replicate(9, 1);
    GatCache cache;
    const auto nbrs = e.neighbors();
    gat_layer_forward(nbrs, {0, 9}, h, p, 0.2, &cache);
    for (int v = 0; v < 9; ++v) {
        const double share = 1.0 / static_cast<double>(nbrs[static_cast<std::size_t>(v)].size() + 1);
        EXPECT_NEAR(cache.alpha[0](v, v), share, 1e-12);
        for (int u : nbrs[static_cast<std::size_t>(v)]) EXPECT_NEAR(cache.alpha[0](v, u), share, 1e-12);
    }
}

TEST(Gat, AttentionRowsSumToOneOverClosedNeighborhoods) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        GatParams p{ParamTensor(random_matrix(rng, 6, 4)), ParamTensor(random_matrix(rng, 1, 4, 3.0)),
                    ParamTensor(random_matrix(rng, 1, 4, 3.0)), ParamTensor(1, 4)};
        const EdgeSet e = random_edges(rng, 12, 0.3);
        const auto nbrs = e.neighbors();
        GatCache cache;
        gat_layer_forward(nbrs, {0, 12}, random_matrix(rng, 12, 6), p, 0.2, &cache);
        const Mask mask = closed_neighborhood_mask(nbrs, 0, 12);
        for (int v = 0; v < 12; ++v) {
            EXPECT_NEAR(cache.alpha[0].row(v).sum(), 1.0, 1e-12);
            for (int u = 0; u < 12; ++u) {
                if (!mask(v, u)) {
                    EXPECT_EQ(cache.alpha[0](v, u), 0.0);
                }
            }
        }
    }
}

TEST(Gat, ZeroAttentionVectorsReduceToNeighborhoodMean) {
    std::mt19937_64 rng(5);
    GatParams p{ParamTensor(random_matrix(rng, 6, 4)), ParamTensor(1, 4), ParamTensor(1, 4),
                ParamTensor(random_matrix(rng, 1, 4))};
    const EdgeSet e = random_edges(rng, 10, 0.3);
    const Matrix h = random_matrix(rng, 10, 6);
    const Matrix z = h * p.weight.value;
    const auto nbrs = e.neighbors();
    const Matrix out = gat_layer_forward(e, h, p);
    for (int v = 0; v < 10; ++v) {
        RowVector expected = z.row(v);
        for (int u : nbrs[static_cast<std::size_t>(v)]) expected += z.row(u);
        expected /= static_cast<double>(nbrs[static_cast<std::size_t>(v)].size() + 1);
        expected += p.bias.value.row(0);
        EXPECT_LT((out.row(v) - expected).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Pool, Examples) {
    Matrix h(2, 2);
    h << 1, 3, 3, 1;
    EXPECT_EQ(global_mean_pool(h), row({2, 2}));
    EXPECT_EQ(global_mean_pool(row({4, -1, 0.5}).replicate(7, 1)), row({4, -1, 0.5}));
    EXPECT_THROW(global_mean_pool(Matrix(0, 3)), DataError);
}

TEST(Pool, RowPermutationIsBitExact) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix h = random_matrix(rng, 64, 32, 100.0);
        const auto perm = random_permutation(rng, 64);
        Matrix ph(64, 32);
        for (int r = 0; r < 64; ++r) ph.row(perm[static_cast<std::size_t>(r)]) = h.row(r);
        EXPECT_EQ(global_mean_pool(h), global_mean_pool(ph));
    }
}

TEST(Head, PermutationInvariance) {
    std::mt19937_64 rng(8);
    for (Arch arch : {Arch::sage, Arch::gat}) {
        for (int trial = 0; trial < 10; ++trial) {
            const Model m(small_config(arch), static_cast<std::uint64_t>(trial));
            const auto g = random_graph(rng, 20, 16, 0.25, 0);
            const auto pg = permute_graph(g, random_permutation(rng, 20));
            const Matrix a = gnn_head_forward(g, m).logits, b = gnn_head_forward(pg, m).logits;
            EXPECT_LT(max_abs(a, b), 1e-9) << to_string(arch);
        }
    }
}

TEST(Head, ConstantFieldFixedPointSage) {
    std::mt19937_64 rng(9);
    Model m(default_model_config(Arch::sage, 2), 3);
    const Matrix x = random_matrix(rng, 1, kFeatureDim);
    const SubjectGraph g{std::make_shared<const Matrix>(x.replicate(kNumSlices, 1)),
                         build_slice_topology(SliceTopology::fully_connected, kNumSlices), 0, "c"};
    // Every neighbor mean equals x, so one node's computation is (W_root + W_neigh) x + b per layer.
    auto& l0 = m.sage_layer(0);
    auto& l1 = m.sage_layer(1);
    const Matrix h1 = rectify(x * (l0.w_root.value + l0.w_neigh.value) + l0.bias.value);
    const Matrix single = h1 * (l1.w_root.value + l1.w_neigh.value) + l1.bias.value;
    EXPECT_LT(max_abs(gnn_head_forward(g, m).logits, single), 1e-9);
}

TEST(Head, ConstantFieldFixedPointGat) {
    std::mt19937_64 rng(10);
    const Model m(default_model_config(Arch::gat, 2), 3);
    const Matrix x = random_matrix(rng, 1, kFeatureDim);
    const SubjectGraph g{std::make_shared<const Matrix>(x.replicate(kNumSlices, 1)),
                         build_slice_topology(SliceTopology::fully_connected, kNumSlices), 0, "c"};
    const SubjectGraph one{std::make_shared<const Matrix>(x), EdgeSet{1, {}}, 0, "one"};
    EXPECT_LT(max_abs(gnn_head_forward(g, m).logits, gnn_head_forward(one, m).logits), 1e-9);
}

TEST(Head, BatchedForwardMatchesSingleGraphs) {
    std::mt19937_64 rng(11);
    for (Arch arch : {Arch::sage, Arch::gat, Arch::cond_mlp}) {
        const Model m(small_config(arch), 2);
        std::vector<SubjectGraph> gs;
        for (int i = 0; i < 5; ++i) gs.push_back(random_graph(rng, 6 + i, 16, 0.4, i % 3));
        std::vector<const SubjectGraph*> ptrs;
        for (const auto& g : gs) ptrs.push_back(&g);
        const Matrix batched = m.forward(make_batch(std::span<const SubjectGraph* const>(ptrs)));
        for (int i = 0; i < 5; ++i)
            EXPECT_LT(max_abs(batched.row(i), m.forward(make_batch(gs[static_cast<std::size_t>(i)]))), 1e-12);
    }
}

TEST(Head, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(12);
    for (Arch arch : {Arch::sage, Arch::gat, Arch::cond_mlp}) {
        Model m(small_config(arch), 5);
        const GraphBatch batch = random_batch(rng, 3, 8, 16, 3);
        const auto report = cross_entropy_gradient_check(m, batch, 1e-5);
        EXPECT_EQ(report.checked, m.num_parameters());
        EXPECT_LT(report.max_rel_error, 1e-4) << to_string(arch);
    }
}

TEST(CondMlp, IdenticalSlicesWithZeroIndexMatchOneSlice) {
    std::mt19937_64 rng(13);
    const Model m(small_config(Arch::cond_mlp), 4);
    const Matrix x = random_matrix(rng, 1, 16);
    const std::vector<double> zeros(64, 0.0);
    const auto stack = cond_mlp_forward(x.replicate(64, 1), m, zeros);
    const auto single = cond_mlp_forward(x, m, std::span<const double>(zeros.data(), 1));
    EXPECT_LT(max_abs(stack.logits, single.logits), 1e-12);
}

TEST(CondMlp, ZeroWeightsReturnOutputBias) {
    std::mt19937_64 rng(14);
    Model m(small_config(Arch::cond_mlp), 4);
    auto ps = m.parameters();
    for (auto* p : ps) p->value.setZero();
    ps[3]->value = row({0.5, -1, 2});
    const auto out = cond_mlp_forward(random_matrix(rng, 64, 16), m);
    EXPECT_EQ(Matrix(out.logits), row({0.5, -1, 2}));
}

TEST(CondMlp, SliceIndexIsWhatBreaksOrderSymmetry) {
    std::mt19937_64 rng(15);
    const Model m(small_config(Arch::cond_mlp), 6);
    const Matrix x = random_matrix(rng, 64, 16);
    const auto perm = random_permutation(rng, 64);
    Matrix px(64, 16);
    std::vector<double> pos(64), ppos(64);
    for (int i = 0; i < 64; ++i) {
        pos[static_cast<std::size_t>(i)] = i / 63.0;
        px.row(perm[static_cast<std::size_t>(i)]) = x.row(i);
        ppos[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i / 63.0;
    }
    const Matrix base = cond_mlp_forward(x, m).logits;
    // Index travels with its row: the subject logits do not move.
    EXPECT_LT(max_abs(base, cond_mlp_forward(px, m, ppos).logits), 1e-12);
    // Index re-assigned by new position: the subject logits change.
    EXPECT_GT(max_abs(base, cond_mlp_forward(px, m).logits), 1e-6);
    EXPECT_LT(max_abs(base, cond_mlp_forward(x, m, pos).logits), 1e-15);
}

TEST(Parameters, DefaultHeadsNearBudget) {
    EXPECT_EQ(count_parameters(default_model_config(Arch::sage, 2)), 295'554u);
    EXPECT_EQ(count_parameters(default_model_config(Arch::cond_mlp, 2)), 295'938u);
    EXPECT_EQ(count_parameters(default_model_config(Arch::gat, 2)), 296'198u);
    for (Arch arch : {Arch::sage, Arch::gat, Arch::cond_mlp})
        for (int c : {2, 3, 11}) {
            const auto n = count_parameters(default_model_config(arch, c));
            EXPECT_GE(n, 250'000u);
            EXPECT_LE(n, 350'000u);
        }
}

TEST(Parameters, CountMatchesScalarsUpdatedBySgd) {
    for (Arch arch : {Arch::sage, Arch::gat, Arch::cond_mlp})
        for (int c : {2, 5}) {
            ModelConfig cfg = small_config(arch);
            cfg.num_classes = c;
            Model m(cfg, 1);
            EXPECT_EQ(m.num_parameters(), count_parameters(cfg));
            std::vector<Matrix> before;
            for (const auto* p : m.parameters()) before.push_back(p->value);
            for (auto* p : m.parameters()) p->grad.setOnes();
            auto ps = m.parameters();
            sgd_step(ps, 0.5, 0.0);
            std::size_t changed = 0;
            for (std::size_t i = 0; i < ps.size(); ++i)
                changed += static_cast<std::size_t>((ps[i]->value.array() != before[i].array()).count());
            EXPECT_EQ(changed, count_parameters(cfg)) << to_string(arch);
        }
}

TEST(Model, InitIsDeterministicPerSeed) {
    const auto cfg = small_config(Arch::gat);
    const Model a(cfg, 42), b(cfg, 42), c(cfg, 43);
    const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
    EXPECT_NE(pa[0]->value, pc[0]->value);
    for (const auto* p : pa) EXPECT_TRUE(p->value.allFinite());
}

TEST(Model, ConfigErrors) {
    ModelConfig c = small_config(Arch::sage);
    c.num_classes = 1;
    EXPECT_THROW(Model(c, 0), ConfigError);
    c = small_config(Arch::gat);
    c.gat_heads = 2;
    EXPECT_THROW(Model(c, 0), ConfigError);
    EXPECT_THROW(parse_arch("gin"), ConfigError);
    const Model m(small_config(Arch::sage), 0);
    std::mt19937_64 rng(1);
    EXPECT_THROW(m.forward(make_batch(random_graph(rng, 4, 5, 0.5, 0))), ConfigError);
    EXPECT_THROW(cond_mlp_forward(Matrix::Zero(3, 16), m), ConfigError);
}
