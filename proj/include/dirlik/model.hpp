#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dirlik/errors.hpp"
#include "dirlik/graph.hpp"
#include "dirlik/rng.hpp"

namespace dirlik {

/// How the per-environment nuisance parameters are restricted.
enum class Mode {
    IidLatent,          // latent scale (1+psi^e), free noise variances w^e >= w^1
    UnperturbedLatent,  // psi == 0, free noise variances w^e >= w^1
    SingleParameter,    // w^e = w^1 + zeta^e * 1, latent scale free
};

inline std::string to_string(Mode m) {
    switch (m) {
        case Mode::IidLatent: return "iid-latent";
        case Mode::UnperturbedLatent: return "unperturbed";
        case Mode::SingleParameter: return "single-param";
    }
    return "?";
}

inline Mode mode_from_string(const std::string& s) {
    if (s == "iid-latent") return Mode::IidLatent;
    if (s == "unperturbed") return Mode::UnperturbedLatent;
    if (s == "single-param") return Mode::SingleParameter;
    throw InputError("unknown mode: " + s);
}

/// One environment of the generating model: latent perturbation scale, total
/// noise variances, optional shared shift magnitude, and do-intervention
/// values. Environment 0 is observational (psi = 0, w = w1).
struct EnvSpec {
    double psi = 0.0;                         // latent perturbation, >= 0
    Eigen::VectorXd w;                        // total noise variances, >= w1 elementwise
    std::optional<double> zeta;               // set in single-parameter mode: w = w1 + zeta*1
    std::map<int, double> do_values;          // do-intervention constants by variable index
    Mode mode = Mode::IidLatent;
    std::optional<Eigen::MatrixXd> latent_cov_override;  // simulator-only override of the latent covariance
    double weight = 0.0;                      // mixture weight for population fixtures (0 = unset)
};

/// Ground-truth or estimated structural parameters.
struct ScmParams {
    Eigen::MatrixXd b;       // p x p connectivity, zero diagonal, acyclic support
    Eigen::MatrixXd gamma;   // p x h latent effects
    Eigen::VectorXd w1;      // base noise variances, > 0
    std::vector<EnvSpec> envs;

    int p() const { return static_cast<int>(b.rows()); }
    int h() const { return static_cast<int>(gamma.cols()); }

    /// DAG carrying the support of b.
    Dag support_dag() const {
        std::vector<Edge> edges;
        for (int i = 0; i < p(); ++i)
            for (int j = 0; j < p(); ++j)
                if (i != j && b(i, j) != 0.0) edges.emplace_back(j, i);
        return Dag(p(), std::move(edges));  // throws on cycles
    }

    void validate() const {
        if (b.rows() != b.cols()) throw InputError("ScmParams: b not square");
        if (gamma.rows() != b.rows()) throw InputError("ScmParams: gamma row count mismatch");
        if (w1.size() != b.rows()) throw InputError("ScmParams: w1 size mismatch");
        for (int i = 0; i < p(); ++i) {
            if (b(i, i) != 0.0) throw InputError("ScmParams: nonzero diagonal in b");
            if (!(w1(i) > 0.0)) throw InputError("ScmParams: w1 must be strictly positive");
        }
        support_dag();  // acyclicity
        if (envs.empty()) throw InputError("ScmParams: no environments");
        for (size_t e = 0; e < envs.size(); ++e) {
            const auto& env = envs[e];
            if (env.w.size() != w1.size()) throw InputError("ScmParams: env w size mismatch");
            if (env.psi < 0.0) throw InputError("ScmParams: negative psi");
            if (e == 0 && env.psi != 0.0) throw InputError("ScmParams: observational environment must have psi = 0");
            if (((env.w - w1).array() < -1e-12).any())
                throw InputError("ScmParams: env noise variances below observational level");
            if (env.mode == Mode::SingleParameter) {
                const double z = env.zeta.value_or(0.0);
                if (z < 0.0) throw InputError("ScmParams: negative zeta");
                if ((env.w - (w1.array() + z).matrix()).lpNorm<Eigen::Infinity>() > 1e-10)
                    throw InputError("ScmParams: single-parameter env must satisfy w = w1 + zeta*1");
            }
            for (const auto& [k, v] : env.do_values) {
                (void)v;
                if (k < 0 || k >= p()) throw InputError("ScmParams: do index out of range");
            }
        }
    }
};

/// Per-environment sufficient statistics for fitting: covariance, sample
/// count (0 marks an exact population covariance), mixture weight, do-set.
struct EnvData {
    Eigen::MatrixXd cov;
    long n = 0;
    double weight = 1.0;
    std::map<int, double> do_values;

    std::vector<int> free_indices() const {  // coordinates not under a do-intervention
        std::vector<int> idx;
        for (int k = 0; k < cov.rows(); ++k)
            if (!do_values.count(k)) idx.push_back(k);
        return idx;
    }
};

inline void validate_dataset(const std::vector<EnvData>& data) {
    if (data.empty()) throw InputError("dataset: no environments");
    double total = 0.0;
    const int p = static_cast<int>(data.front().cov.rows());
    for (const auto& env : data) {
        if (env.cov.rows() != p || env.cov.cols() != p) throw InputError("dataset: covariance size mismatch");
        if ((env.cov - env.cov.transpose()).lpNorm<Eigen::Infinity>() > 1e-12)
            throw InputError("dataset: covariance not symmetric");
        total += env.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) throw InputError("dataset: environment weights must sum to 1");
}

/// Covariance implied by the structural model:
///   (I - B)^{-1} (diag(w) + (1+psi) Gamma Gamma^T) (I - B)^{-T}.
inline Eigen::MatrixXd sigma_model(const Eigen::MatrixXd& b, const Eigen::MatrixXd& gamma, double psi,
                                   const Eigen::VectorXd& w) {
    const int p = static_cast<int>(b.rows());
    Eigen::MatrixXd inner = w.asDiagonal();
    if (gamma.cols() > 0) inner += (1.0 + psi) * gamma * gamma.transpose();
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(p, p) - b;
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    const Eigen::MatrixXd ainv_inner = lu.solve(inner);
    Eigen::MatrixXd sigma = lu.solve(ainv_inner.transpose()).transpose();
    return ((sigma + sigma.transpose()) / 2.0).eval();
}

/// Covariance of the model under do-interventions: rows of B for intervened
/// coordinates are severed and those coordinates are deterministic.
inline Eigen::MatrixXd sigma_model_do(const Eigen::MatrixXd& b, const Eigen::MatrixXd& gamma, double psi,
                                      const Eigen::VectorXd& w, const std::map<int, double>& do_values) {
    const int p = static_cast<int>(b.rows());
    Eigen::MatrixXd fb = b;
    Eigen::MatrixXd fmask = Eigen::MatrixXd::Identity(p, p);
    Eigen::MatrixXd inner = w.asDiagonal();
    if (gamma.cols() > 0) inner += (1.0 + psi) * gamma * gamma.transpose();
    for (const auto& [k, v] : do_values) {
        (void)v;
        fb.row(k).setZero();
        fmask(k, k) = 0.0;
    }
    inner = (fmask * inner * fmask).eval();
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(p, p) - fb;
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    const Eigen::MatrixXd ainv_inner = lu.solve(inner);
    Eigen::MatrixXd sigma = lu.solve(ainv_inner.transpose()).transpose();
    return ((sigma + sigma.transpose()) / 2.0).eval();
}

enum class NoiseKind { Gaussian, Laplace };

/// One simulated environment: raw samples (rows = observations) plus the
/// derived sufficient statistics.
struct SimulatedEnv {
    Eigen::MatrixXd samples;
    EnvData data;
};

/// Multi-environment simulator. Samples are generated in topological order of
/// support(b); do-intervened variables are pinned to their constants and their
/// structural equations dropped. `latent_cov` is the base latent covariance
/// (scaled by (1+psi^e) per environment unless the environment overrides it),
/// `xi` the quadratic distortion coefficient (0 = linear model).
inline std::vector<SimulatedEnv> simulate(const ScmParams& params, const std::vector<long>& n_per_env,
                                          NoiseKind noise, const Eigen::MatrixXd& latent_cov, double xi,
                                          std::uint64_t seed) {
    params.validate();
    if (n_per_env.size() != params.envs.size()) throw InputError("simulate: n_per_env size mismatch");
    for (long n : n_per_env)
        if (n <= 0) throw InputError("simulate: sample counts must be positive");
    if (xi < 0.0) throw InputError("simulate: xi must be nonnegative");
    const int p = params.p();
    const int h = params.h();
    if (latent_cov.rows() != h || latent_cov.cols() != h) throw InputError("simulate: latent_cov size mismatch");

    const Dag dag = params.support_dag();
    const auto& topo = dag.topological_order();
    long total_n = 0;
    for (long n : n_per_env) total_n += n;

    const Rng root(seed);
    std::vector<SimulatedEnv> out;
    out.reserve(params.envs.size());
    for (size_t e = 0; e < params.envs.size(); ++e) {
        const auto& env = params.envs[e];
        Rng rng = root.derive(e);

        Eigen::MatrixXd hcov;
        if (env.latent_cov_override) {
            hcov = *env.latent_cov_override;
            if (hcov.rows() != h || hcov.cols() != h) throw InputError("simulate: latent override size mismatch");
        } else {
            hcov = (1.0 + env.psi) * latent_cov;
        }
        Eigen::MatrixXd hchol(h, h);
        if (h > 0) {
            Eigen::LLT<Eigen::MatrixXd> llt(hcov);
            if (llt.info() != Eigen::Success)
                throw NotPositiveDefiniteError("simulate: latent covariance not PD");
            hchol = llt.matrixL();
        }

        // Noise scales. For Laplace noise the base term and the perturbation
        // term are drawn separately so each keeps a Laplace law; scales are
        // matched to the stored variances (var of Laplace(0, s) is 2 s^2).
        Eigen::VectorXd base_sd(p), extra_sd(p);
        for (int k = 0; k < p; ++k) {
            const double extra_var = std::max(0.0, env.w(k) - params.w1(k));
            if (noise == NoiseKind::Gaussian) {
                base_sd(k) = std::sqrt(params.w1(k));
                extra_sd(k) = std::sqrt(extra_var);
            } else {
                base_sd(k) = std::sqrt(params.w1(k) / 2.0);
                extra_sd(k) = std::sqrt(extra_var / 2.0);
            }
        }

        const long n = n_per_env[e];
        Eigen::MatrixXd samples(n, p);
        Eigen::VectorXd hvec(h), x(p);
        for (long r = 0; r < n; ++r) {
            for (int j = 0; j < h; ++j) hvec(j) = rng.normal();
            if (h > 0) hvec = (hchol * hvec).eval();
            for (int idx : topo) {
                auto it = env.do_values.find(idx);
                if (it != env.do_values.end()) {
                    x(idx) = it->second;
                    continue;
                }
                double mean = 0.0;
                for (int j : dag.parents(idx)) mean += params.b(idx, j) * x(j);
                for (int j = 0; j < h; ++j) mean += params.gamma(idx, j) * hvec(j);
                double value = mean + xi * mean * mean;
                if (noise == NoiseKind::Gaussian) {
                    value += base_sd(idx) * rng.normal();
                    if (extra_sd(idx) > 0.0) value += extra_sd(idx) * rng.normal();
                } else {
                    value += rng.laplace(base_sd(idx));
                    if (extra_sd(idx) > 0.0) value += rng.laplace(extra_sd(idx));
                }
                x(idx) = value;
            }
            samples.row(r) = x.transpose();
        }

        EnvData data;
        const Eigen::RowVectorXd mean = samples.colwise().mean();
        const Eigen::MatrixXd centered = samples.rowwise() - mean;
        data.cov = (centered.transpose() * centered) / static_cast<double>(n);
        data.cov = ((data.cov + data.cov.transpose()) / 2.0).eval();
        data.n = n;
        data.weight = static_cast<double>(n) / static_cast<double>(total_n);
        data.do_values = env.do_values;
        out.push_back({std::move(samples), std::move(data)});
    }
    return out;
}

/// Exact covariances for population-level analysis: EnvData.cov equals the
/// model covariance per environment, n = 0 marks population data, weights are
/// taken from the EnvSpec (uniform when unset).
inline std::vector<EnvData> population_env_data(const ScmParams& params) {
    params.validate();
    double total = 0.0;
    for (const auto& env : params.envs) total += env.weight;
    const bool have_weights = total > 0.0;
    if (have_weights && std::abs(total - 1.0) > 1e-9)
        throw InputError("population_env_data: environment weights must sum to 1");

    std::vector<EnvData> out;
    out.reserve(params.envs.size());
    for (const auto& env : params.envs) {
        if (env.mode == Mode::UnperturbedLatent && env.psi != 0.0)
            throw InputError("population_env_data: psi must be 0 with unperturbed latents");
        EnvData d;
        d.cov = env.do_values.empty()
                    ? sigma_model(params.b, params.gamma, env.psi, env.w)
                    : sigma_model_do(params.b, params.gamma, env.psi, env.w, env.do_values);
        d.n = 0;
        d.weight = have_weights ? env.weight : 1.0 / static_cast<double>(params.envs.size());
        d.do_values = env.do_values;
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace dirlik
