#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "dirlik/graph.hpp"
#include "dirlik/model.hpp"

using namespace dirlik;

namespace {

// Independent O(p^3) count: undirected edges plus co-parent pairs, enumerated
// from scratch over all node triples.
int moral_count_oracle(const Dag& d) {
    std::set<std::pair<int, int>> edges;
    auto put = [&edges](int a, int b) {
        if (a > b) std::swap(a, b);
        edges.insert({a, b});
    };
    for (const auto& [j, i] : d.edges()) put(j, i);
    for (int child = 0; child < d.p(); ++child)
        for (int a = 0; a < d.p(); ++a)
            for (int b = 0; b < d.p(); ++b)
                if (a != b && d.has_edge(a, child) && d.has_edge(b, child)) put(a, b);
    return static_cast<int>(edges.size());
}

}  // namespace

TEST_CASE("dag construction validates", "[graph]") {
    CHECK_THROWS_AS(Dag(3, {{0, 1}, {1, 2}, {2, 0}}), InputError);  // cycle
    CHECK_THROWS_AS(Dag(3, {{1, 1}}), InputError);                  // self loop
    CHECK_THROWS_AS(Dag(3, {{0, 3}}), InputError);                  // out of range
    const Dag d(3, {{0, 1}, {1, 2}});
    CHECK(d.edge_count() == 2);
    CHECK(d.parents(2) == std::vector<int>{1});
    CHECK(d.topological_order().size() == 3);
}

TEST_CASE("moralize chain and collider", "[graph]") {
    const MoralGraph chain = moralize(Dag(3, {{0, 1}, {1, 2}}));
    CHECK(chain.edges() == std::set<std::pair<int, int>>{{0, 1}, {1, 2}});

    const MoralGraph collider = moralize(Dag(3, {{0, 2}, {1, 2}}));
    CHECK(collider.edges() == std::set<std::pair<int, int>>{{0, 1}, {0, 2}, {1, 2}});

    CHECK(moralize(Dag(4)).edge_count() == 0);
}

TEST_CASE("moral_edge_count matches brute-force enumeration", "[graph]") {
    CHECK(moral_edge_count(Dag(3, {{0, 1}, {1, 2}})) == 2);
    CHECK(moral_edge_count(Dag(3, {{0, 2}, {1, 2}})) == 3);
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const Dag d = sample_er_dag(10, 0.1, rng);
        CHECK(moral_edge_count(d) == moral_count_oracle(d));
    }
}

TEST_CASE("moralization is monotone under edge addition", "[graph]") {
    Rng rng(11);
    for (int trial = 0; trial < 40; ++trial) {
        const Dag d = sample_er_dag(6, 0.2, rng);
        const auto base = moralize(d).edges();
        for (int j = 0; j < 6; ++j)
            for (int i = 0; i < 6; ++i) {
                const auto added = d.with_edge_added(j, i);
                if (!added) continue;
                const auto grown = moralize(*added).edges();
                CHECK(std::includes(grown.begin(), grown.end(), base.begin(), base.end()));
            }
    }
}

TEST_CASE("covered-edge reversals preserve the moral edge count", "[graph]") {
    const Dag chain(4, {{0, 1}, {1, 2}, {2, 3}});
    for (const Dag& m : markov_equivalence_class(chain))
        CHECK(moral_edge_count(m) == moral_edge_count(chain));

    const Dag mixed(5, {{0, 1}, {1, 2}, {1, 3}, {3, 4}});
    const auto mec = markov_equivalence_class(mixed);
    CHECK(mec.size() > 1);
    for (const Dag& m : mec) CHECK(moral_edge_count(m) == moral_edge_count(mixed));
}

TEST_CASE("sample_er_dag edge cases and reproducibility", "[graph]") {
    Rng zero(3);
    CHECK(sample_er_dag(3, 0.0, zero).edge_count() == 0);
    Rng one(3);
    CHECK(sample_er_dag(2, 1.0, one).edge_count() == 1);
    CHECK_THROWS_AS([] {
        Rng r(3);
        sample_er_dag(12, 1.0, r);  // acyclic tournaments are vanishingly rare
    }(), ResamplingError);

    Rng a(99), b(99);
    CHECK(sample_er_dag(10, 0.1, a) == sample_er_dag(10, 0.1, b));

    double mean_edges = 0.0;
    Rng rng(2024);
    for (int i = 0; i < 200; ++i) mean_edges += sample_er_dag(10, 0.1, rng).edge_count();
    mean_edges /= 200.0;
    CHECK(mean_edges > 6.0);  // ~p(p-1)*prob accepted draws
    CHECK(mean_edges < 12.0);
}

TEST_CASE("generate_candidates on a strong two-variable chain", "[graph]") {
    // Population covariance of x1 = -0.7 x0 + noise, w = (0.5, 0.5).
    Eigen::MatrixXd cov(2, 2);
    cov << 0.5, -0.35, -0.35, 0.745;

    // Oracle: exhaustive scoring of the three two-node DAGs with the same
    // penalized Gaussian objective.
    const long n = 10000;
    const double penalty = 2.0 * std::log(static_cast<double>(n)) / n;
    auto score = [&](const Dag& d) {
        double s = 0.0;
        for (int i = 0; i < 2; ++i) {
            const auto pa = d.parents(i);
            double rv = pa.empty() ? cov(i, i)
                                   : cov(i, i) - cov(i, pa[0]) * cov(i, pa[0]) / cov(pa[0], pa[0]);
            s += -0.5 * std::log(rv);
        }
        return s - penalty * d.edge_count();
    };
    const Dag empty(2), fwd(2, {{0, 1}}), rev(2, {{1, 0}});
    CHECK(score(fwd) > score(empty));
    CHECK(score(rev) > score(empty));

    const auto cands = generate_candidates(cov, n, 4);
    auto contains = [&cands](const Dag& d) {
        return std::any_of(cands.begin(), cands.end(), [&](const Dag& c) { return c == d; });
    };
    CHECK(contains(fwd));
    CHECK(contains(rev));

    // Independence: the empty DAG is the local optimum.
    const auto trivial = generate_candidates(Eigen::MatrixXd::Identity(3, 3), n, 4);
    CHECK(trivial.front().edge_count() == 0);

    CHECK_THROWS_AS(generate_candidates(Eigen::MatrixXd::Zero(2, 2), n, 4), NotPositiveDefiniteError);
}

TEST_CASE("enumerate_all_dags counts", "[graph]") {
    CHECK(enumerate_all_dags(2).size() == 3);
    CHECK(enumerate_all_dags(3).size() == 25);
    CHECK(enumerate_all_dags(4).size() == 543);
}

TEST_CASE("markov equivalence class of a chain", "[graph]") {
    // Chains without colliders: the class consists of all orientations with a
    // single source switch, 4 members for a 4-chain.
    const auto mec = markov_equivalence_class(Dag(4, {{0, 1}, {1, 2}, {2, 3}}));
    CHECK(mec.size() == 4);
    // Collider at the center is fully oriented.
    CHECK(markov_equivalence_class(Dag(3, {{0, 2}, {1, 2}})).size() == 1);
}
