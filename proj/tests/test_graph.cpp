#include "test_support.hpp"

#include <slicegraph/graph.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

using namespace slicegraph;
using namespace slicegraph::testing;

TEST(SliceTopology, FullyConnectedEdgeCount) {
    EXPECT_EQ(build_slice_topology(SliceTopology::fully_connected, 64).size(), 2016u);
}

TEST(SliceTopology, StarIsCenteredOnSlice31) {
    const auto e = build_slice_topology(SliceTopology::star, 64);
    EXPECT_EQ(e.size(), 63u);
    for (const auto& [u, v] : e.edges) EXPECT_TRUE(u == 31 || v == 31);
}

TEST(SliceTopology, LineEdgesAreConsecutive) {
    const auto e = build_slice_topology(SliceTopology::line, 64);
    EXPECT_EQ(e.size(), 63u);
    for (const auto& [u, v] : e.edges) EXPECT_EQ(v, u + 1);
}

TEST(SliceTopology, CustomIsUnionOfStarAndLine) {
    // Counting oracle: build both edge families as plain sets and merge.
    std::set<std::pair<int, int>> expected;
    for (int j = 0; j < 64; ++j)
        if (j != 31) expected.emplace(std::min(31, j), std::max(31, j));
    for (int i = 0; i < 63; ++i) expected.emplace(i, i + 1);
    EXPECT_EQ(expected.size(), 124u);
    EXPECT_EQ(as_set(build_slice_topology(SliceTopology::custom, 64)), expected);
}

TEST(SliceTopology, CountsHoldForOtherSizes) {
    for (int n = 3; n < 40; ++n) {
        EXPECT_EQ(build_slice_topology(SliceTopology::line, n).size(), static_cast<std::size_t>(n - 1));
        EXPECT_EQ(build_slice_topology(SliceTopology::star, n).size(), static_cast<std::size_t>(n - 1));
        EXPECT_EQ(build_slice_topology(SliceTopology::fully_connected, n).size(),
                  static_cast<std::size_t>(n * (n - 1) / 2));
        const auto custom = as_set(build_slice_topology(SliceTopology::custom, n));
        auto merged = as_set(build_slice_topology(SliceTopology::star, n));
        const auto line = as_set(build_slice_topology(SliceTopology::line, n));
        merged.insert(line.begin(), line.end());
        EXPECT_EQ(custom, merged);
    }
}

TEST(SliceTopology, TooFewNodesIsConfigError) {
    EXPECT_THROW(build_slice_topology(SliceTopology::line, 2), ConfigError);
}

TEST(EdgeSet, AdjacencyIsSymmetricWithoutSelfLoops) {
    std::mt19937_64 rng(4);
    for (auto kind : {SliceTopology::fully_connected, SliceTopology::star, SliceTopology::line, SliceTopology::custom}) {
        const Matrix a = build_slice_topology(kind, 64).adjacency();
        EXPECT_EQ(a, a.transpose());
        EXPECT_EQ(a.diagonal().sum(), 0.0);
    }
    const Matrix a = build_knn_topology(random_matrix(rng, 64, 8), Metric::l1, 3).adjacency();
    EXPECT_EQ(a, a.transpose());
    EXPECT_EQ(a.diagonal().sum(), 0.0);
}

TEST(EdgeSet, FromPairsRejectsSelfLoops) {
    EXPECT_THROW(EdgeSet::from_pairs(3, {{1, 1}}), GraphError);
    EXPECT_THROW(EdgeSet::from_pairs(3, {{0, 3}}), GraphError);
    const auto e = EdgeSet::from_pairs(3, {{2, 0}, {0, 2}, {1, 0}});
    EXPECT_EQ(e.edges, (std::vector<std::pair<int, int>>{{0, 1}, {0, 2}}));
}

TEST(Distance, HandComputed) {
    const std::vector<double> u{0, 0}, v{3, 4};
    EXPECT_EQ(pairwise_distance(Metric::l1, u, v), 7.0);
    EXPECT_EQ(pairwise_distance(Metric::l2, u, v), 5.0);
    EXPECT_EQ(pairwise_distance(Metric::linf, u, v), 4.0);
}

TEST(Distance, IdenticalVectorsAreAtZero) {
    const std::vector<double> u{0.5, -2, 3};
    for (auto m : {Metric::l1, Metric::l2, Metric::linf, Metric::cosine})
        EXPECT_NEAR(pairwise_distance(m, u, u), 0.0, 1e-15) << to_string(m);
}

TEST(Distance, OrthogonalCosineIsOne) {
    const std::vector<double> u{1, 0}, v{0, 1};
    EXPECT_EQ(pairwise_distance(Metric::cosine, u, v), 1.0);
}

TEST(Distance, ErrorPaths) {
    const std::vector<double> zero{0, 0}, v{1, 2}, w{1, 2, 3};
    EXPECT_THROW(pairwise_distance(Metric::cosine, zero, v), DataError);
    EXPECT_THROW(pairwise_distance(Metric::l2, v, w), ConfigError);
}

TEST(Knn, ThreePointsOnALine) {
    Matrix x(3, 1);
    x << 0, 1, 10;
    const auto picks = knn_picks(x, Metric::l1, 1);
    EXPECT_EQ(picks[0], std::vector<int>{1});
    EXPECT_EQ(picks[1], std::vector<int>{0});
    EXPECT_EQ(picks[2], std::vector<int>{1});
    EXPECT_EQ(build_knn_topology(x, Metric::l1, 1).edges, (std::vector<std::pair<int, int>>{{0, 1}, {1, 2}}));
}

TEST(Knn, TiesGoToLowerIndex) {
    Matrix x(3, 1);
    x << 0, -1, 1; // node 0 is equidistant from 1 and 2
    EXPECT_EQ(knn_picks(x, Metric::l2, 1)[0], std::vector<int>{1});
}

TEST(Knn, SaturatedKIsFullyConnected) {
    std::mt19937_64 rng(8);
    const Matrix x = random_matrix(rng, 20, 5);
    for (auto m : {Metric::l1, Metric::l2, Metric::linf, Metric::cosine})
        EXPECT_EQ(build_knn_topology(x, m, 19).edges, build_slice_topology(SliceTopology::fully_connected, 20).edges);
}

TEST(Knn, InvalidKIsConfigError) {
    std::mt19937_64 rng(8);
    const Matrix x = random_matrix(rng, 10, 3);
    EXPECT_THROW(build_knn_topology(x, Metric::l2, 0), ConfigError);
    EXPECT_THROW(build_knn_topology(x, Metric::l2, 10), ConfigError);
}

TEST(Knn, MatchesBruteForceOracle) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix x = trial % 2 ? random_matrix(rng, 64, 16) : tie_heavy_matrix(rng, 64, 16);
        for (auto m : {Metric::l1, Metric::l2, Metric::linf, Metric::cosine})
            for (int k : {1, 3, 5, 7, 9}) {
                const auto e = build_knn_topology(x, m, k);
                EXPECT_EQ(as_set(e), brute_force_knn(x, m, k)) << to_string(m) << " k=" << k;
                EXPECT_GE(e.size(), static_cast<std::size_t>((64 * k + 1) / 2));
                EXPECT_LE(e.size(), static_cast<std::size_t>(64 * k));
            }
    }
}

TEST(Knn, InvariantToUniformScaling) {
    std::mt19937_64 rng(33);
    std::uniform_real_distribution<double> scale(0.1, 10.0);
    for (int trial = 0; trial < 5; ++trial) {
        const Matrix x = random_matrix(rng, 64, 16);
        const double s = scale(rng);
        for (auto m : {Metric::l1, Metric::l2, Metric::linf})
            EXPECT_EQ(build_knn_topology(x, m, 5).edges, build_knn_topology(x * s, m, 5).edges);
        Matrix per_row = x;
        for (Eigen::Index r = 0; r < per_row.rows(); ++r) per_row.row(r) *= scale(rng);
        EXPECT_EQ(build_knn_topology(x, Metric::cosine, 5).edges, build_knn_topology(per_row, Metric::cosine, 5).edges);
    }
}

TEST(Knn, Deterministic) {
    std::mt19937_64 rng(2);
    const Matrix x = tie_heavy_matrix(rng, 64, 4, 2);
    EXPECT_EQ(build_knn_topology(x, Metric::linf, 7).edges, build_knn_topology(x, Metric::linf, 7).edges);
}

TEST(Topology, ParseAndName) {
    EXPECT_EQ(parse_topology("custom"), TopologySpec{SliceBased{SliceTopology::custom}});
    EXPECT_EQ(parse_topology("chebyshev:7"), (TopologySpec{EncodingBased{Metric::linf, 7}}));
    EXPECT_EQ(topology_name(parse_topology("cosine:5")), "cosine");
    EXPECT_EQ(topology_k(parse_topology("cosine:5")), 5);
    EXPECT_FALSE(topology_k(parse_topology("star")).has_value());
    EXPECT_THROW(parse_topology("ring"), ConfigError);
    EXPECT_THROW(parse_topology("l2:x"), ConfigError);
}

TEST(ValidateGraph, WellFormedGraphIsOk) {
    std::mt19937_64 rng(1);
    SubjectGraph g{std::make_shared<const Matrix>(random_matrix(rng, 64, 1152)),
                   build_slice_topology(SliceTopology::custom, 64), 1, "s"};
    EXPECT_TRUE(validate_graph(g, {}, 2).empty());
}

TEST(ValidateGraph, ReportsSelfLoop) {
    SubjectGraph g{std::make_shared<const Matrix>(Matrix::Zero(64, 1152)), build_slice_topology(SliceTopology::line, 64),
                   0, "s"};
    g.edges.edges.emplace_back(0, 0);
    const auto v = validate_graph(g);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_NE(v[0].find("self-loop"), std::string::npos);
}

TEST(ValidateGraph, ReportsNonFiniteFeature) {
    Matrix x = Matrix::Zero(64, 1152);
    x(5, 7) = std::numeric_limits<double>::quiet_NaN();
    SubjectGraph g{std::make_shared<const Matrix>(x), build_slice_topology(SliceTopology::line, 64), 0, "s"};
    const auto v = validate_graph(g);
    ASSERT_EQ(v.size(), 1u);
    EXPECT_NE(v[0].find("non-finite feature"), std::string::npos);
}

TEST(ValidateGraph, ReportsShapeAndIndexProblemsTogether) {
    SubjectGraph g{std::make_shared<const Matrix>(Matrix::Zero(10, 3)), EdgeSet{10, {{2, 12}}}, 5, "s"};
    const auto v = validate_graph(g, {}, 2);
    EXPECT_EQ(v.size(), 4u); // node count, width, edge range, label
}
