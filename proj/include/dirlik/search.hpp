#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dirlik/fit.hpp"
#include "dirlik/graph.hpp"
#include "dirlik/likelihood.hpp"

namespace dirlik {

struct ScoredDag {
    Dag dag;
    FitResult fit;
    bool failed = false;
    std::string error;

    double score() const { return failed ? std::numeric_limits<double>::infinity() : fit.score; }
};

namespace detail {

inline void sort_scored(std::vector<ScoredDag>& scored) {
    std::sort(scored.begin(), scored.end(), [](const ScoredDag& a, const ScoredDag& b) {
        if (a.score() != b.score()) return a.score() < b.score();
        return a.dag.canonical_key() < b.dag.canonical_key();
    });
}

}  // namespace detail

/// Scores every candidate DAG; individual fit failures are recorded
/// per-candidate rather than aborting the run. Results are sorted ascending
/// by score (ties broken by the canonical DAG encoding). Candidates are
/// scored concurrently across `jobs` threads.
inline std::vector<ScoredDag> score_candidates(const std::vector<Dag>& cands,
                                               const std::vector<EnvData>& data, const ScoreConfig& cfg,
                                               int jobs = 1) {
    if (cands.empty()) throw InputError("score_candidates: empty candidate list");
    std::vector<ScoredDag> scored;
    scored.reserve(cands.size());
    for (const auto& d : cands) scored.push_back({d, FitResult{}, false, ""});

    auto run_one = [&](size_t i) {
        try {
            scored[i].fit = score_dag(cands[i], data, cfg);
        } catch (const std::exception& ex) {
            scored[i].failed = true;
            scored[i].error = ex.what();
        }
    };

    jobs = std::max(1, jobs);
    if (jobs == 1 || cands.size() == 1) {
        for (size_t i = 0; i < cands.size(); ++i) run_one(i);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> workers;
        const int nw = std::min<size_t>(jobs, cands.size());
        for (int t = 0; t < nw; ++t)
            workers.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < cands.size(); i = next.fetch_add(1)) run_one(i);
            });
        for (auto& w : workers) w.join();
    }

    detail::sort_scored(scored);
    return scored;
}

/// All entries within the relative tolerance of the minimum score
/// (score - min <= tol * |min|); exact ties always included, failures never.
inline std::vector<ScoredDag> optimum_set(const std::vector<ScoredDag>& scored, double tol) {
    if (scored.empty()) throw InputError("optimum_set: empty input");
    double min_score = std::numeric_limits<double>::infinity();
    for (const auto& s : scored) min_score = std::min(min_score, s.score());
    std::vector<ScoredDag> out;
    for (const auto& s : scored) {
        if (s.failed) continue;
        if (s.score() == min_score || s.score() - min_score <= tol * std::abs(min_score)) out.push_back(s);
    }
    detail::sort_scored(out);
    return out;
}

/// Backward deletion along edge strength: edges sorted ascending by the
/// magnitude of their fitted coefficient; the i-th path element removes the i
/// weakest edges cumulatively and is rescored.
inline std::vector<ScoredDag> backward_delete(const Dag& dag, const FitResult& fit,
                                              const std::vector<EnvData>& data, const ScoreConfig& cfg,
                                              int jobs = 1) {
    std::vector<Edge> order = dag.edges();
    std::sort(order.begin(), order.end(), [&](const Edge& a, const Edge& b) {
        const double ma = std::abs(fit.b_hat(a.second, a.first));
        const double mb = std::abs(fit.b_hat(b.second, b.first));
        if (ma != mb) return ma < mb;
        return a < b;
    });
    std::vector<Dag> path;
    Dag current = dag;
    for (const auto& [j, i] : order) {
        current = *current.with_edge_removed(j, i);
        path.push_back(current);
    }
    if (path.empty()) return {};
    return score_candidates(path, data, cfg, jobs);
}

struct SearchReport {
    std::vector<ScoredDag> scored;                        // all candidates, ascending
    std::vector<ScoredDag> initial_optimum;               // optimum set among candidates
    std::vector<std::vector<ScoredDag>> deletion_paths;   // one path per initial optimum
    std::vector<ScoredDag> final_optimum;                 // optimum set over everything scored
    std::vector<ScoredDag> minimal_moral;                 // final optima with the fewest moral edges
};

/// Full search: score candidates, collect the optimum set, backward-delete
/// along each optimum, and report the optimum set of the union. With
/// `reorient` set (the default), a second pass rescored the Markov equivalence
/// class and single-edge reversals of the pruned optima: orientation is only
/// weakly constrained among dense candidates, and resolving it at the sparse
/// end markedly improves edge directions on sampled data. Among the final
/// optima, those with minimal moral edge count are reported first
/// (`minimal_moral`); the identifiability theory singles this subset out.
inline SearchReport run_search(const std::vector<Dag>& cands, const std::vector<EnvData>& data,
                               const ScoreConfig& cfg, int jobs = 1, bool reorient = true) {
    SearchReport report;
    report.scored = score_candidates(cands, data, cfg, jobs);
    report.initial_optimum = optimum_set(report.scored, cfg.opt_tolerance);

    std::map<std::string, ScoredDag> pool;
    for (const auto& s : report.scored) pool.emplace(s.dag.canonical_key(), s);
    for (const auto& opt : report.initial_optimum) {
        auto path = backward_delete(opt.dag, opt.fit, data, cfg, jobs);
        for (const auto& s : path) pool.emplace(s.dag.canonical_key(), s);
        report.deletion_paths.push_back(std::move(path));
    }

    auto pool_to_sorted = [&pool] {
        std::vector<ScoredDag> v;
        v.reserve(pool.size());
        for (const auto& [key, s] : pool) v.push_back(s);
        detail::sort_scored(v);
        return v;
    };
    report.final_optimum = optimum_set(pool_to_sorted(), cfg.opt_tolerance);

    if (reorient) {
        constexpr int kReorientCap = 8;
        std::vector<Dag> extra;
        int taken = 0;
        for (const auto& s : report.final_optimum) {
            if (taken++ >= kReorientCap) break;
            for (const auto& m : markov_equivalence_class(s.dag, 64))
                if (!pool.count(m.canonical_key())) extra.push_back(m);
            for (const auto& [j, i] : s.dag.edges())
                if (auto r = s.dag.with_edge_reversed(j, i); r && !pool.count(r->canonical_key()))
                    extra.push_back(*r);
        }
        std::sort(extra.begin(), extra.end(),
                  [](const Dag& a, const Dag& b) { return a.canonical_key() < b.canonical_key(); });
        extra.erase(std::unique(extra.begin(), extra.end()), extra.end());
        if (!extra.empty()) {
            for (const auto& s : score_candidates(extra, data, cfg, jobs))
                pool.emplace(s.dag.canonical_key(), s);
            taken = 0;
            for (const auto& s : optimum_set(pool_to_sorted(), cfg.opt_tolerance)) {
                if (taken++ >= kReorientCap) break;
                for (const auto& d : backward_delete(s.dag, s.fit, data, cfg, jobs))
                    pool.emplace(d.dag.canonical_key(), d);
            }
            report.final_optimum = optimum_set(pool_to_sorted(), cfg.opt_tolerance);
        }
    }

    int min_moral = std::numeric_limits<int>::max();
    for (const auto& s : report.final_optimum) min_moral = std::min(min_moral, moral_edge_count(s.dag));
    for (const auto& s : report.final_optimum)
        if (moral_edge_count(s.dag) == min_moral) report.minimal_moral.push_back(s);
    // Within the minimal-moral set, prefer the sparsest connectivity, then the
    // score (equal moral graphs cannot be separated by the penalty).
    std::sort(report.minimal_moral.begin(), report.minimal_moral.end(),
              [](const ScoredDag& a, const ScoredDag& b) {
                  if (a.dag.edge_count() != b.dag.edge_count()) return a.dag.edge_count() < b.dag.edge_count();
                  if (a.score() != b.score()) return a.score() < b.score();
                  return a.dag.canonical_key() < b.dag.canonical_key();
              });
    return report;
}

/// Selection for sampled data: within the final optimum set, models missing a
/// genuine edge pay a visible likelihood price and fall outside the set, while
/// redundant-edge variants remain score-tied with the generating structure;
/// taking the fewest edges first and the score second resolves those ties.
inline const ScoredDag& select_parsimonious(const SearchReport& report) {
    if (report.final_optimum.empty()) throw Error("select_parsimonious: empty optimum set");
    const ScoredDag* best = &report.final_optimum.front();
    for (const auto& s : report.final_optimum) {
        if (s.dag.edge_count() < best->dag.edge_count() ||
            (s.dag.edge_count() == best->dag.edge_count() && s.score() < best->score()))
            best = &s;
    }
    return *best;
}

/// Structural accuracy of an estimated DAG against the generating one: an
/// estimated edge counts as a true positive when present with the same
/// orientation in the reference, otherwise as a false positive.
struct StructuralAccuracy {
    int tp = 0;
    int fp = 0;
};

inline StructuralAccuracy structural_accuracy(const Dag& estimated, const Dag& truth) {
    StructuralAccuracy acc;
    for (const auto& [j, i] : estimated.edges()) {
        if (truth.has_edge(j, i))
            ++acc.tp;
        else
            ++acc.fp;
    }
    return acc;
}

/// Parent-set accuracy for one response variable (edges into `response`).
inline StructuralAccuracy parent_accuracy(const Dag& estimated, const Dag& truth, int response) {
    StructuralAccuracy acc;
    for (int j : estimated.parents(response)) {
        if (truth.has_edge(j, response))
            ++acc.tp;
        else
            ++acc.fp;
    }
    return acc;
}

}  // namespace dirlik
