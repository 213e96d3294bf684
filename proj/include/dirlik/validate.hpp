#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "dirlik/errors.hpp"
#include "dirlik/graph.hpp"
#include "dirlik/model.hpp"
#include "dirlik/rng.hpp"
#include "dirlik/search.hpp"

namespace dirlik {

/// Raw per-environment samples (rows = observations).
struct SampleEnv {
    Eigen::MatrixXd samples;
    std::map<int, double> do_values;
};

inline Eigen::MatrixXd covariance_of(const Eigen::MatrixXd& rows) {
    const Eigen::RowVectorXd mean = rows.colwise().mean();
    const Eigen::MatrixXd centered = rows.rowwise() - mean;
    Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(rows.rows());
    return ((cov + cov.transpose()) / 2.0).eval();
}

inline std::vector<EnvData> env_data_from_samples(const std::vector<SampleEnv>& envs) {
    long total = 0;
    for (const auto& e : envs) total += e.samples.rows();
    std::vector<EnvData> out;
    for (const auto& e : envs) {
        EnvData d;
        d.cov = covariance_of(e.samples);
        d.n = e.samples.rows();
        d.weight = static_cast<double>(d.n) / static_cast<double>(total);
        d.do_values = e.do_values;
        out.push_back(std::move(d));
    }
    return out;
}

struct ValidationPoint {
    double lambda = 0.0;
    double valid_nll = 0.0;
    Dag train_dag{0};
    FitResult train_fit;
};

struct ValidationResult {
    double selected_lambda = 0.0;
    std::vector<ValidationPoint> path;
    SearchReport full_search;  // refit on the full data at the selected penalty
};

/// Penalty selection by holdout likelihood: withholds a fraction of the
/// observational rows (trailing rows by default, seeded shuffle optionally),
/// runs the search per grid point on the training statistics, and scores each
/// selected model on the withheld covariance with the latent scale pinned at
/// its observational level. Refits on the full data at the winning penalty.
inline ValidationResult validate_lambda(const std::vector<SampleEnv>& envs,
                                        const std::vector<double>& lambda_grid, double holdout_frac,
                                        const ScoreConfig& base_cfg, std::vector<Dag> candidates,
                                        int jobs = 1, std::optional<std::uint64_t> shuffle_seed = {},
                                        int max_parents = 4) {
    if (envs.empty()) throw InputError("validate_lambda: no environments");
    if (lambda_grid.empty()) throw InputError("validate_lambda: empty penalty grid");
    if (!(holdout_frac > 0.0 && holdout_frac < 1.0)) throw InputError("validate_lambda: holdout_frac outside (0,1)");
    const long n1 = envs[0].samples.rows();
    if (n1 < 10) throw InputError("validate_lambda: observational environment needs at least 10 samples");
    const long k = static_cast<long>(std::ceil(holdout_frac * static_cast<double>(n1)));
    if (k == 0 || k >= n1) throw InputError("validate_lambda: degenerate split");

    std::vector<long> order(n1);
    for (long i = 0; i < n1; ++i) order[i] = i;
    if (shuffle_seed) {
        Rng rng(*shuffle_seed);
        for (long i = n1 - 1; i > 0; --i) {
            const long j = static_cast<long>(rng.uniform() * static_cast<double>(i + 1));
            std::swap(order[i], order[std::min(j, i)]);
        }
    }
    Eigen::MatrixXd train_rows(n1 - k, envs[0].samples.cols());
    Eigen::MatrixXd valid_rows(k, envs[0].samples.cols());
    for (long i = 0; i < n1 - k; ++i) train_rows.row(i) = envs[0].samples.row(order[i]);
    for (long i = 0; i < k; ++i) valid_rows.row(i) = envs[0].samples.row(order[n1 - k + i]);

    std::vector<SampleEnv> train_envs = envs;
    train_envs[0].samples = train_rows;
    const auto train_data = env_data_from_samples(train_envs);

    if (candidates.empty()) {
        long n_total = 0;
        long rows = 0;
        for (const auto& e : train_envs) rows += e.samples.rows();
        const int p = static_cast<int>(envs[0].samples.cols());
        Eigen::MatrixXd all(rows, p);
        long at = 0;
        for (const auto& e : train_envs) {
            all.middleRows(at, e.samples.rows()) = e.samples;
            at += e.samples.rows();
        }
        n_total = rows;
        candidates = generate_candidates(covariance_of(all), n_total, max_parents);
    }

    EnvData valid_env;
    valid_env.cov = covariance_of(valid_rows);
    valid_env.n = k;
    valid_env.weight = 1.0;

    ValidationResult result;
    double best_nll = std::numeric_limits<double>::infinity();
    std::vector<double> grid = lambda_grid;
    std::sort(grid.begin(), grid.end());
    for (double lambda : grid) {
        ScoreConfig cfg = base_cfg;
        cfg.lambda = lambda;
        const SearchReport report = run_search(candidates, train_data, cfg, jobs);
        if (report.minimal_moral.empty()) throw Error("validate_lambda: empty selection");
        const ScoredDag& pick = report.minimal_moral.front();
        ValidationPoint point;
        point.lambda = lambda;
        point.train_dag = pick.dag;
        point.train_fit = pick.fit;
        point.valid_nll = env_nll(pick.fit.b_hat, pick.fit.gamma_hat, 0.0, pick.fit.w_hat[0], valid_env);
        if (point.valid_nll < best_nll) {
            best_nll = point.valid_nll;
            result.selected_lambda = lambda;
        }
        result.path.push_back(std::move(point));
    }

    ScoreConfig cfg = base_cfg;
    cfg.lambda = result.selected_lambda;
    result.full_search = run_search(candidates, env_data_from_samples(envs), cfg, jobs);
    return result;
}

}  // namespace dirlik
