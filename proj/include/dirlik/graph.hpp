#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dirlik/errors.hpp"
#include "dirlik/rng.hpp"

namespace dirlik {

/// Directed edge (from -> to): `from` is a parent of `to`.
using Edge = std::pair<int, int>;

/// Directed acyclic graph over p variables. Immutable after construction;
/// acyclicity, index range and absence of self-loops are verified by a
/// topological sort in the constructor.
class Dag {
public:
    explicit Dag(int p, std::vector<Edge> edges = {}) : p_(p), edges_(std::move(edges)) {
        if (p < 0) throw InputError("Dag: negative variable count");
        std::sort(edges_.begin(), edges_.end());
        edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
        for (const auto& [j, i] : edges_) {
            if (j < 0 || j >= p_ || i < 0 || i >= p_) throw InputError("Dag: edge index out of range");
            if (j == i) throw InputError("Dag: self-loop");
        }
        topo_ = topological_sort();  // throws on cycles
    }

    int p() const { return p_; }
    const std::vector<Edge>& edges() const { return edges_; }
    int edge_count() const { return static_cast<int>(edges_.size()); }
    const std::vector<int>& topological_order() const { return topo_; }

    bool has_edge(int from, int to) const {
        return std::binary_search(edges_.begin(), edges_.end(), Edge{from, to});
    }

    std::vector<int> parents(int node) const {
        std::vector<int> out;
        for (const auto& [j, i] : edges_)
            if (i == node) out.push_back(j);
        return out;
    }

    std::vector<int> children(int node) const {
        std::vector<int> out;
        for (const auto& [j, i] : edges_)
            if (j == node) out.push_back(i);
        return out;
    }

    /// Returns the modified DAG, or nullopt if the edit would create a cycle
    /// (or is a no-op for add / not present for remove).
    std::optional<Dag> with_edge_added(int from, int to) const {
        if (from == to || has_edge(from, to)) return std::nullopt;
        auto e = edges_;
        e.emplace_back(from, to);
        return checked(p_, std::move(e));
    }
    std::optional<Dag> with_edge_removed(int from, int to) const {
        if (!has_edge(from, to)) return std::nullopt;
        auto e = edges_;
        e.erase(std::find(e.begin(), e.end(), Edge{from, to}));
        return Dag(p_, std::move(e));
    }
    std::optional<Dag> with_edge_reversed(int from, int to) const {
        if (!has_edge(from, to) || has_edge(to, from)) return std::nullopt;
        auto e = edges_;
        e.erase(std::find(e.begin(), e.end(), Edge{from, to}));
        e.emplace_back(to, from);
        return checked(p_, std::move(e));
    }

    /// Stable text key, used for deduplication and deterministic ordering.
    std::string canonical_key() const {
        std::string key = std::to_string(p_) + ":";
        for (const auto& [j, i] : edges_) key += std::to_string(j) + ">" + std::to_string(i) + ";";
        return key;
    }

    bool operator==(const Dag& other) const { return p_ == other.p_ && edges_ == other.edges_; }

    /// True if `b` has zero diagonal and support contained in this DAG's edges.
    bool compatible(const Eigen::MatrixXd& b, double tol = 0.0) const {
        if (b.rows() != p_ || b.cols() != p_) return false;
        for (int i = 0; i < p_; ++i)
            for (int j = 0; j < p_; ++j)
                if (std::abs(b(i, j)) > tol && !has_edge(j, i)) return false;
        return true;
    }

private:
    static std::optional<Dag> checked(int p, std::vector<Edge> edges) {
        try {
            return Dag(p, std::move(edges));
        } catch (const InputError&) {
            return std::nullopt;
        }
    }

    std::vector<int> topological_sort() const {
        std::vector<int> indeg(p_, 0);
        std::vector<std::vector<int>> adj(p_);
        for (const auto& [j, i] : edges_) {
            ++indeg[i];
            adj[j].push_back(i);
        }
        std::deque<int> ready;
        for (int v = 0; v < p_; ++v)
            if (indeg[v] == 0) ready.push_back(v);
        std::vector<int> order;
        order.reserve(p_);
        while (!ready.empty()) {
            const int v = ready.front();
            ready.pop_front();
            order.push_back(v);
            for (int c : adj[v])
                if (--indeg[c] == 0) ready.push_back(c);
        }
        if (static_cast<int>(order.size()) != p_) throw InputError("Dag: directed cycle");
        return order;
    }

    int p_;
    std::vector<Edge> edges_;
    std::vector<int> topo_;
};

/// Undirected graph obtained by moralizing a DAG. Edges stored as ordered
/// pairs (a < b); the edge count is the complexity penalty unit of the score.
class MoralGraph {
public:
    MoralGraph(int p, std::set<std::pair<int, int>> edges) : p_(p), edges_(std::move(edges)) {}

    int p() const { return p_; }
    const std::set<std::pair<int, int>>& edges() const { return edges_; }
    int edge_count() const { return static_cast<int>(edges_.size()); }
    bool has_edge(int a, int b) const {
        if (a > b) std::swap(a, b);
        return edges_.count({a, b}) > 0;
    }
    /// Subset relation on edge sets (dimension must agree).
    bool contains(const MoralGraph& other) const {
        return std::includes(edges_.begin(), edges_.end(), other.edges_.begin(), other.edges_.end());
    }

private:
    int p_;
    std::set<std::pair<int, int>> edges_;
};

/// Moralization: undirected skeleton plus an edge between every pair of
/// distinct parents sharing a child.
inline MoralGraph moralize(const Dag& d) {
    std::set<std::pair<int, int>> edges;
    auto put = [&edges](int a, int b) {
        if (a > b) std::swap(a, b);
        edges.insert({a, b});
    };
    for (const auto& [j, i] : d.edges()) put(j, i);
    for (int node = 0; node < d.p(); ++node) {
        const auto pa = d.parents(node);
        for (size_t a = 0; a < pa.size(); ++a)
            for (size_t b = a + 1; b < pa.size(); ++b) put(pa[a], pa[b]);
    }
    return MoralGraph(d.p(), std::move(edges));
}

inline int moral_edge_count(const Dag& d) { return moralize(d).edge_count(); }

/// Erdos-Renyi DAG: each ordered pair is included independently with
/// probability `edge_prob`; a pair drawn in both directions keeps a fair-coin
/// orientation, and draws with longer cycles are rejected and resampled, up
/// to 10000 attempts.
inline Dag sample_er_dag(int p, double edge_prob, Rng& rng) {
    if (edge_prob < 0.0 || edge_prob > 1.0) throw InputError("sample_er_dag: edge_prob outside [0,1]");
    for (int attempt = 0; attempt < 10000; ++attempt) {
        std::vector<Edge> edges;
        for (int j = 0; j < p; ++j)
            for (int i = j + 1; i < p; ++i) {
                const bool fwd = rng.uniform() < edge_prob;
                const bool bwd = rng.uniform() < edge_prob;
                if (fwd && bwd)
                    edges.emplace_back(rng.uniform() < 0.5 ? Edge{j, i} : Edge{i, j});
                else if (fwd)
                    edges.emplace_back(j, i);
                else if (bwd)
                    edges.emplace_back(i, j);
            }
        try {
            return Dag(p, std::move(edges));
        } catch (const InputError&) {
            continue;  // cyclic draw, resample
        }
    }
    throw ResamplingError("sample_er_dag: no DAG found in 10000 attempts");
}

/// Markov equivalence class of `dag`, enumerated as the closure under
/// covered-edge reversals (an edge j->i is covered when pa(i) = pa(j) + {j}).
inline std::vector<Dag> markov_equivalence_class(const Dag& dag, size_t cap = 4096) {
    std::vector<Dag> members;
    std::set<std::string> seen;
    std::deque<Dag> queue{dag};
    seen.insert(dag.canonical_key());
    while (!queue.empty() && members.size() < cap) {
        Dag d = queue.front();
        queue.pop_front();
        members.push_back(d);
        for (const auto& [j, i] : d.edges()) {
            auto pa_i = d.parents(i);
            auto pa_j = d.parents(j);
            pa_j.push_back(j);
            std::sort(pa_i.begin(), pa_i.end());
            std::sort(pa_j.begin(), pa_j.end());
            if (pa_i != pa_j) continue;  // not covered
            if (auto rev = d.with_edge_reversed(j, i); rev && seen.insert(rev->canonical_key()).second)
                queue.push_back(*rev);
        }
    }
    return members;
}

namespace detail {

/// Gaussian log-likelihood residual variance of node given parents, from a
/// covariance matrix.
inline double residual_variance(const Eigen::MatrixXd& cov, int node, const std::vector<int>& pa) {
    if (pa.empty()) return cov(node, node);
    const int q = static_cast<int>(pa.size());
    Eigen::MatrixXd cpp(q, q);
    Eigen::VectorXd cpn(q);
    for (int a = 0; a < q; ++a) {
        cpn(a) = cov(pa[a], node);
        for (int b = 0; b < q; ++b) cpp(a, b) = cov(pa[a], pa[b]);
    }
    const Eigen::VectorXd beta = cpp.ldlt().solve(cpn);
    return cov(node, node) - cpn.dot(beta);
}

}  // namespace detail

/// Deterministic greedy hill-climb over DAG space on a pooled covariance,
/// maximizing a Gaussian likelihood with a BIC-style penalty of
/// 2*(log n / n) per edge. Returns the local optimum followed by all of its
/// single-edge-deletion and single-edge-reversal neighbors.
inline std::vector<Dag> generate_candidates(const Eigen::MatrixXd& pooled_cov, long n_total,
                                            int max_parents = 4) {
    const int p = static_cast<int>(pooled_cov.rows());
    {
        Eigen::LLT<Eigen::MatrixXd> llt(pooled_cov);
        if (llt.info() != Eigen::Success)
            throw NotPositiveDefiniteError("generate_candidates: pooled covariance not PD");
    }
    const double penalty = 2.0 * std::log(static_cast<double>(n_total)) / static_cast<double>(n_total);

    auto node_score = [&](int node, const std::vector<int>& pa) {
        double rv = detail::residual_variance(pooled_cov, node, pa);
        rv = std::max(rv, 1e-12);
        return -0.5 * std::log(rv);
    };
    auto dag_score = [&](const Dag& d) {
        double s = 0.0;
        for (int i = 0; i < p; ++i) s += node_score(i, d.parents(i));
        return s - penalty * d.edge_count();
    };

    Dag current(p);
    double current_score = dag_score(current);
    for (;;) {
        std::optional<Dag> best;
        double best_score = current_score + 1e-12;
        auto consider = [&](const std::optional<Dag>& cand) {
            if (!cand) return;
            for (int i = 0; i < p; ++i)
                if (static_cast<int>(cand->parents(i).size()) > max_parents) return;
            const double s = dag_score(*cand);
            if (s > best_score) {
                best_score = s;
                best = cand;
            }
        };
        for (int j = 0; j < p; ++j) {
            for (int i = 0; i < p; ++i) {
                if (i == j) continue;
                if (current.has_edge(j, i)) {
                    consider(current.with_edge_removed(j, i));
                    consider(current.with_edge_reversed(j, i));
                } else {
                    consider(current.with_edge_added(j, i));
                }
            }
        }
        if (!best) break;
        current = *best;
        current_score = best_score;
    }

    std::vector<Dag> out{current};
    std::set<std::string> seen{current.canonical_key()};
    auto push = [&](const std::optional<Dag>& d) {
        if (d && seen.insert(d->canonical_key()).second) out.push_back(*d);
    };
    for (const auto& [j, i] : current.edges()) push(current.with_edge_removed(j, i));
    for (const auto& [j, i] : current.edges()) push(current.with_edge_reversed(j, i));
    // Cover the equivalence class of the local optimum as well: orientations
    // inside it are not decided by the pooled covariance, only by the
    // multi-environment scoring downstream.
    for (const auto& m : markov_equivalence_class(current, 64)) push(m);
    return out;
}

/// All DAGs on p nodes (feasible only for small p; 543 DAGs at p = 4).
inline std::vector<Dag> enumerate_all_dags(int p) {
    std::vector<Edge> slots;
    for (int j = 0; j < p; ++j)
        for (int i = 0; i < p; ++i)
            if (i != j) slots.emplace_back(j, i);
    std::vector<Dag> out;
    const std::uint64_t total = 1ULL << slots.size();
    for (std::uint64_t mask = 0; mask < total; ++mask) {
        std::vector<Edge> edges;
        for (size_t s = 0; s < slots.size(); ++s)
            if (mask & (1ULL << s)) edges.push_back(slots[s]);
        try {
            out.emplace_back(p, std::move(edges));
        } catch (const InputError&) {
        }
    }
    return out;
}

}  // namespace dirlik
