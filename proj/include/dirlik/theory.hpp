#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dirlik/likelihood.hpp"
#include "dirlik/model.hpp"
#include "dirlik/rng.hpp"
#include "dirlik/search.hpp"

namespace dirlik {

/// Column-norm condition number of the connectivity matrix,
/// (1 + max_i |B_:i|^2) / (1 + min_i |B_:i|^2).
inline double kappa_star(const Eigen::MatrixXd& b) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (int i = 0; i < b.cols(); ++i) {
        const double n2 = b.col(i).squaredNorm();
        lo = std::min(lo, n2);
        hi = std::max(hi, n2);
    }
    return (1.0 + hi) / (1.0 + lo);
}

struct MaterialityResult {
    bool material = false;
    std::optional<std::pair<int, int>> witness;
    double margin = 0.0;  // |marginal precision| at the witness
};

/// Latent materiality for one environment: a pair of variables that is
/// conditionally independent given the latents (zero entry of the conditional
/// precision (I-B)^T diag(w)^{-1} (I-B)) yet marginally dependent (nonzero
/// entry of the inverse model covariance). Thresholds: 1e-10 for zero, 1e-8
/// for nonzero.
inline MaterialityResult check_materiality(const ScmParams& params, int env_index) {
    params.validate();
    if (env_index < 0 || env_index >= static_cast<int>(params.envs.size()))
        throw InputError("check_materiality: environment index out of range");
    const auto& env = params.envs[env_index];
    const int p = params.p();
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(p, p) - params.b;
    const Eigen::MatrixXd cond_prec = a.transpose() * env.w.cwiseInverse().asDiagonal() * a;
    const Eigen::MatrixXd sigma = sigma_model(params.b, params.gamma, env.psi, env.w);
    const Eigen::MatrixXd marg_prec = sigma.llt().solve(Eigen::MatrixXd::Identity(p, p));

    MaterialityResult res;
    for (int k = 0; k < p && !res.material; ++k) {
        for (int l = k + 1; l < p; ++l) {
            if (std::abs(cond_prec(k, l)) <= 1e-10 && std::abs(marg_prec(k, l)) > 1e-8) {
                res.material = true;
                res.witness = {k, l};
                res.margin = std::abs(marg_prec(k, l));
                break;
            }
        }
    }
    return res;
}

enum class AssumptionVariant {
    PerturbedLatents,     // two strongly perturbed interventional environments
    PerturbedLatentsAlt,  // one strongly perturbed environment dominating the other
    UnperturbedLatents,   // latent variables unperturbed, perturbation set S
    SingleParameter,      // shared shift magnitude per environment
};

inline std::string to_string(AssumptionVariant v) {
    switch (v) {
        case AssumptionVariant::PerturbedLatents: return "perturbed";
        case AssumptionVariant::PerturbedLatentsAlt: return "perturbed-alt";
        case AssumptionVariant::UnperturbedLatents: return "unperturbed";
        case AssumptionVariant::SingleParameter: return "single-param";
    }
    return "?";
}

/// Identifiability preconditions with numeric margins. A margin of zero on a
/// passing flag marks a check that is vacuous under the variant.
struct AssumptionReport {
    AssumptionVariant variant = AssumptionVariant::PerturbedLatents;
    double kappa_star = 1.0;
    bool a1_weights_ok = false;
    bool a2_heterogeneity_ok = false;
    bool a3_materiality_ok = false;
    bool a4_strength_ok = false;
    double a1_margin = 0.0;
    double a2_margin = 0.0;
    double a3_margin = 0.0;
    double a4_margin = 0.0;
    std::optional<std::pair<int, int>> witness_pair;
    std::vector<int> perturbed_set;  // S, unperturbed-latent variant only

    bool all_ok() const { return a1_weights_ok && a2_heterogeneity_ok && a3_materiality_ok && a4_strength_ok; }
};

namespace detail {

/// Smallest normalized cross product |a_k b_l - a_l b_k| over index pairs;
/// a scale-free test that the component ratios of a and b differ everywhere.
inline double min_ratio_separation(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                                   const std::vector<int>& idx) {
    const double scale = std::max(1e-300, a.lpNorm<Eigen::Infinity>() * b.lpNorm<Eigen::Infinity>());
    double lo = std::numeric_limits<double>::infinity();
    for (size_t x = 0; x < idx.size(); ++x)
        for (size_t y = x + 1; y < idx.size(); ++y) {
            const int k = idx[x], l = idx[y];
            lo = std::min(lo, std::abs(a(k) * b(l) - a(l) * b(k)) / scale);
        }
    return idx.size() < 2 ? 0.0 : lo;
}

inline std::vector<double> effective_weights(const ScmParams& params) {
    double total = 0.0;
    for (const auto& env : params.envs) total += env.weight;
    std::vector<double> w;
    for (const auto& env : params.envs)
        w.push_back(total > 0.0 ? env.weight : 1.0 / static_cast<double>(params.envs.size()));
    return w;
}

}  // namespace detail

inline AssumptionReport check_assumptions(const ScmParams& params, AssumptionVariant variant, double c_psi) {
    params.validate();
    const int p = params.p();
    const int m = static_cast<int>(params.envs.size());
    const bool two_env_single = (variant == AssumptionVariant::SingleParameter && m == 2);
    if (m < 3 && !two_env_single)
        throw InputError("check_assumptions: variant requires at least 3 environments");

    AssumptionReport rep;
    rep.variant = variant;
    rep.kappa_star = kappa_star(params.b);

    const auto weights = detail::effective_weights(params);
    const int envs_used = two_env_single ? 2 : 3;
    rep.a1_margin = *std::min_element(weights.begin(), weights.begin() + envs_used);
    rep.a1_weights_ok = rep.a1_margin > 0.0;

    const double gnorm = params.gamma.norm() == 0.0 ? 0.0 : params.gamma.jacobiSvd().singularValues()(0);
    const double latent_factor = 1.0 + gnorm * gnorm + gnorm * gnorm * gnorm * gnorm;
    const double psi_factor = (1.0 + 2.0 * c_psi) * (1.0 + 2.0 * c_psi);
    std::vector<int> all_idx(p);
    for (int k = 0; k < p; ++k) all_idx[k] = k;

    auto strength_lhs = [&](const Eigen::VectorXd& w) {
        const double lo = w.minCoeff(), hi = w.maxCoeff();
        return lo * lo / hi;
    };

    switch (variant) {
        case AssumptionVariant::PerturbedLatents: {
            const auto &e2 = params.envs[1], &e3 = params.envs[2];
            const Eigen::VectorXd a = e2.w - (1.0 + e2.psi) * params.w1;
            const Eigen::VectorXd b = e3.w - (1.0 + e3.psi) * params.w1;
            rep.a2_margin = detail::min_ratio_separation(a, b, all_idx);
            rep.a2_heterogeneity_ok = rep.a2_margin > 1e-9;

            const auto m2 = check_materiality(params, 1);
            const auto m3 = check_materiality(params, 2);
            rep.a3_materiality_ok = m2.material && m3.material;
            rep.a3_margin = std::min(m2.margin, m3.margin);
            rep.witness_pair = m2.witness ? m2.witness : m3.witness;

            const double rhs = 8.0 * rep.kappa_star * psi_factor * (1.0 + params.w1.maxCoeff()) * latent_factor;
            rep.a4_margin = std::min(strength_lhs(e2.w), strength_lhs(e3.w)) - rhs;
            rep.a4_strength_ok = rep.a4_margin > 0.0;
            break;
        }
        case AssumptionVariant::PerturbedLatentsAlt: {
            const auto &e2 = params.envs[1], &e3 = params.envs[2];
            const Eigen::VectorXd a = e3.w - (1.0 + e3.psi) * params.w1;
            const Eigen::VectorXd b = e3.w - ((1.0 + e3.psi) / (1.0 + e2.psi)) * e2.w;
            rep.a2_margin = detail::min_ratio_separation(a, b, all_idx);
            rep.a2_heterogeneity_ok = rep.a2_margin > 1e-9;

            const auto m3 = check_materiality(params, 2);
            rep.a3_materiality_ok = m3.material;
            rep.a3_margin = m3.margin;
            rep.witness_pair = m3.witness;

            const double rhs = 8.0 * rep.kappa_star * psi_factor * (1.0 + e2.w.maxCoeff()) * latent_factor;
            rep.a4_margin = strength_lhs(e3.w) - rhs;
            rep.a4_strength_ok = rep.a4_margin > 0.0;
            break;
        }
        case AssumptionVariant::UnperturbedLatents: {
            const auto &e2 = params.envs[1], &e3 = params.envs[2];
            for (int k = 0; k < p; ++k)
                if (e2.w(k) > params.w1(k) && e3.w(k) > params.w1(k)) rep.perturbed_set.push_back(k);
            rep.a2_margin = detail::min_ratio_separation(e2.w - params.w1, e3.w - params.w1, rep.perturbed_set);
            rep.a2_heterogeneity_ok = rep.perturbed_set.size() < 2 || rep.a2_margin > 1e-9;

            rep.a3_materiality_ok = true;  // no latent condition in this variant
            rep.a3_margin = 0.0;

            double slack = std::numeric_limits<double>::infinity();
            for (int k : rep.perturbed_set)
                slack = std::min({slack, e2.w(k) - params.w1(k), e3.w(k) - params.w1(k)});
            rep.a4_margin = rep.perturbed_set.empty() ? 0.0 : slack;
            rep.a4_strength_ok = !rep.perturbed_set.empty() && rep.a4_margin > 0.0;
            break;
        }
        case AssumptionVariant::SingleParameter: {
            if (two_env_single) {
                const double zeta2 = params.envs[1].zeta.value_or(0.0);
                rep.a2_margin = zeta2;
                rep.a2_heterogeneity_ok = zeta2 > 0.0;
                rep.a3_materiality_ok = true;  // not needed with unperturbed latents
                rep.a3_margin = 0.0;
                rep.a4_strength_ok = true;
                rep.a4_margin = 0.0;
                break;
            }
            const auto &e2 = params.envs[1], &e3 = params.envs[2];
            const double z2 = e2.zeta.value_or(0.0), z3 = e3.zeta.value_or(0.0);
            const double scale = std::max({1.0, std::abs(e2.psi * z3), std::abs(e3.psi * z2)});
            rep.a2_margin = std::abs(e2.psi * z3 - e3.psi * z2) / scale;
            rep.a2_heterogeneity_ok = rep.a2_margin > 1e-9;

            const auto m2 = check_materiality(params, 1);
            const auto m3 = check_materiality(params, 2);
            rep.a3_materiality_ok = m2.material && m3.material;
            rep.a3_margin = std::min(m2.margin, m3.margin);
            rep.witness_pair = m2.witness ? m2.witness : m3.witness;

            const double rhs = 8.0 * rep.kappa_star * psi_factor * (1.0 + e2.w.maxCoeff()) * latent_factor;
            rep.a4_margin = z3 - rhs;
            rep.a4_strength_ok = rep.a4_margin >= 0.0;
            break;
        }
    }
    return rep;
}

/// Zero-loss score level of exact covariances: sum of weight * (log det cov + p).
inline double population_baseline(const std::vector<EnvData>& data) {
    double total = 0.0;
    for (const auto& env : data) {
        const auto idx = env.free_indices();
        if (idx.empty()) continue;
        Eigen::MatrixXd sub(idx.size(), idx.size());
        for (size_t r = 0; r < idx.size(); ++r)
            for (size_t c = 0; c < idx.size(); ++c) sub(r, c) = env.cov(idx[r], idx[c]);
        Eigen::LLT<Eigen::MatrixXd> llt(sub);
        if (llt.info() != Eigen::Success)
            throw NotPositiveDefiniteError("population_baseline: covariance not PD on free coordinates");
        total += env.weight * (detail::logdet_from_llt(llt) + static_cast<double>(idx.size()));
    }
    return total;
}

enum class TheoremCheck {
    PerturbedLatentsFull,  // moral supersets at optimum; minimal-moral optimum recovers B
    UnperturbedFull,       // full recovery with all variables perturbed
    UnperturbedRowP,       // recovery of the response row only
    SingleParameterFull,   // full recovery under a shared shift magnitude
    NonIdentifiable,       // saturated latent dimension: two optima expected
};

struct IdentifiabilityReport {
    TheoremCheck check = TheoremCheck::PerturbedLatentsFull;
    bool holds = false;
    bool moral_supersets_ok = false;  // every optimum's moral graph contains the truth's
    bool minimal_unique = false;      // unique minimal-moral connectivity matrix
    double b_error = std::numeric_limits<double>::infinity();
    int n_optima = 0;
    std::string detail;
    SearchReport search;
};

/// Runs the search on exact covariances and checks the claimed conclusion.
/// `tol_b` is the entrywise recovery tolerance; candidate sets should include
/// the generating DAG and adversarial alternatives.
inline IdentifiabilityReport verify_identifiability(const ScmParams& params, TheoremCheck check,
                                                    const std::vector<Dag>& candidates, ScoreConfig cfg,
                                                    double tol_b = 1e-3, int jobs = 1) {
    cfg.lambda = 0.0;  // population scoring is unpenalized
    const auto data = population_env_data(params);
    const Dag truth = params.support_dag();
    const MoralGraph truth_moral = moralize(truth);

    IdentifiabilityReport rep;
    rep.check = check;
    rep.search = run_search(candidates, data, cfg, jobs);
    rep.n_optima = static_cast<int>(rep.search.final_optimum.size());

    rep.moral_supersets_ok = true;
    for (const auto& opt : rep.search.final_optimum)
        if (!moralize(opt.dag).contains(truth_moral)) rep.moral_supersets_ok = false;

    const auto& minimal = rep.search.minimal_moral;
    auto b_err_full = [&](const ScoredDag& s) { return (s.fit.b_hat - params.b).lpNorm<Eigen::Infinity>(); };
    auto b_err_rowp = [&](const ScoredDag& s) {
        return (s.fit.b_hat.row(params.p() - 1) - params.b.row(params.p() - 1)).lpNorm<Eigen::Infinity>();
    };

    switch (check) {
        case TheoremCheck::PerturbedLatentsFull:
        case TheoremCheck::UnperturbedFull:
        case TheoremCheck::SingleParameterFull: {
            // The minimal-moral optimum is unique as a connectivity matrix.
            rep.b_error = 0.0;
            for (const auto& s : minimal) rep.b_error = std::max(rep.b_error, b_err_full(s));
            rep.minimal_unique = !minimal.empty() && rep.b_error <= tol_b;
            bool truth_present = false;
            for (const auto& s : minimal)
                if (s.dag == truth) truth_present = true;
            rep.holds = rep.moral_supersets_ok && rep.minimal_unique && truth_present;
            rep.detail = "minimal-moral optima: " + std::to_string(minimal.size());
            break;
        }
        case TheoremCheck::UnperturbedRowP: {
            rep.b_error = 0.0;
            for (const auto& s : rep.search.final_optimum) rep.b_error = std::max(rep.b_error, b_err_rowp(s));
            rep.holds = !rep.search.final_optimum.empty() && rep.b_error <= tol_b;
            rep.detail = "response-row error over " + std::to_string(rep.n_optima) + " optima";
            break;
        }
        case TheoremCheck::NonIdentifiable: {
            // Expect at least two optima whose connectivity matrices differ.
            double spread = 0.0;
            for (size_t a = 0; a < rep.search.final_optimum.size(); ++a)
                for (size_t b = a + 1; b < rep.search.final_optimum.size(); ++b)
                    spread = std::max(spread, (rep.search.final_optimum[a].fit.b_hat -
                                               rep.search.final_optimum[b].fit.b_hat)
                                                  .lpNorm<Eigen::Infinity>());
            rep.b_error = spread;
            rep.holds = rep.n_optima >= 2 && spread > 10.0 * tol_b;
            rep.detail = "max connectivity spread among optima: " + std::to_string(spread);
            break;
        }
    }
    return rep;
}

/// Alternative parameter set exhibiting non-identifiability when the fitted
/// latent dimension saturates (h = p) and only one interventional environment
/// is available: a Markov-equivalent DAG with matched covariances in both
/// environments.
inline ScmParams construct_saturated_alternative(const ScmParams& params, const Dag& equivalent_dag) {
    params.validate();
    if (params.envs.size() != 2) throw InputError("construct_saturated_alternative: needs exactly 2 environments");
    const int p = params.p();
    const auto& e2 = params.envs[1];
    const double psi2 = e2.psi;
    const Eigen::VectorXd dstar = e2.w - (1.0 + psi2) * params.w1;
    if ((dstar.array() <= 0.0).any())
        throw InputError("construct_saturated_alternative: needs w2 > (1+psi2) w1 elementwise");

    const Eigen::MatrixXd ident = Eigen::MatrixXd::Identity(p, p);
    const Eigen::MatrixXd astar = ident - params.b;
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(astar);
    const Eigen::MatrixXd mid = lu.solve(Eigen::MatrixXd(dstar.asDiagonal()));
    const Eigen::MatrixXd m = lu.solve(mid.transpose()).transpose();  // (I-B)^-1 diag(d) (I-B)^-T

    // Recursive regression of m under the equivalent DAG reproduces it exactly
    // for Markov-equivalent structures.
    Eigen::MatrixXd b_alt = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd d_alt(p);
    for (int i = 0; i < p; ++i) {
        const auto pa = equivalent_dag.parents(i);
        if (pa.empty()) {
            d_alt(i) = m(i, i);
            continue;
        }
        const int q = static_cast<int>(pa.size());
        Eigen::MatrixXd mpp(q, q);
        Eigen::VectorXd mpn(q);
        for (int a = 0; a < q; ++a) {
            mpn(a) = m(pa[a], i);
            for (int c = 0; c < q; ++c) mpp(a, c) = m(pa[a], pa[c]);
        }
        const Eigen::VectorXd beta = mpp.ldlt().solve(mpn);
        for (int a = 0; a < q; ++a) b_alt(i, pa[a]) = beta(a);
        d_alt(i) = m(i, i) - mpn.dot(beta);
    }

    const Eigen::MatrixXd a_alt = ident - b_alt;
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu_alt(a_alt);
    {
        const Eigen::MatrixXd mid_alt = lu_alt.solve(Eigen::MatrixXd(d_alt.asDiagonal()));
        const Eigen::MatrixXd m_alt = lu_alt.solve(mid_alt.transpose()).transpose();
        if ((m_alt - m).lpNorm<Eigen::Infinity>() > 1e-8 * std::max(1.0, m.lpNorm<Eigen::Infinity>()))
            throw InputError("construct_saturated_alternative: DAG is not Markov equivalent to the source");
    }

    // Latent part. With the difference of the two covariances already matched
    // by (b_alt, d_alt), it suffices to reproduce the observational residual
    // R = (I - B~) Sigma1 (I - B~)^T as diag(w1_alt) + Gram; any base level
    // below the smallest eigenvalue of R keeps the Gram matrix PD.
    const Eigen::MatrixXd sigma1 = sigma_model(params.b, params.gamma, 0.0, params.envs[0].w);
    const Eigen::MatrixXd r = a_alt * sigma1 * a_alt.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_r(r, Eigen::EigenvaluesOnly);
    const double beta = 0.5 * es_r.eigenvalues().minCoeff();
    if (beta <= 0.0) throw InputError("construct_saturated_alternative: degenerate observational covariance");

    const Eigen::VectorXd w1_alt = Eigen::VectorXd::Constant(p, beta);
    const Eigen::MatrixXd gram = r - Eigen::MatrixXd(w1_alt.asDiagonal());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    Eigen::MatrixXd gamma_alt = Eigen::MatrixXd::Zero(p, p);
    for (int c = 0; c < p; ++c) {
        const double ev = std::max(es.eigenvalues()(c), 0.0);
        gamma_alt.col(c) = es.eigenvectors().col(c) * std::sqrt(ev);
    }

    ScmParams alt;
    alt.b = b_alt;
    alt.gamma = gamma_alt;
    alt.w1 = w1_alt;
    EnvSpec obs;
    obs.psi = 0.0;
    obs.w = w1_alt;
    obs.weight = params.envs[0].weight;
    EnvSpec interv;
    interv.psi = psi2;
    interv.w = d_alt + (1.0 + psi2) * w1_alt;
    interv.weight = e2.weight;
    alt.envs = {obs, interv};
    alt.validate();
    return alt;
}

struct ZeroRiskReport {
    double max_kl = 0.0;
    double zeta_at_max = 0.0;
    double psi_at_max = 0.0;
    int n_perturbations = 0;
    std::vector<double> kl_values;
};

/// Samples perturbation distributions of the shared-shift class generated by
/// `params` and fits the nuisance pair of `eval` (the generating parameters
/// when null) to each: at the generating parameters every sampled
/// distribution is matched exactly (KL ~ 0), while a misspecified
/// connectivity matrix cannot match them all.
inline ZeroRiskReport verify_robustness_zero_risk(const ScmParams& params, double c_zeta, double c_psi,
                                                  int n_perturbations, std::uint64_t seed,
                                                  const ScmParams* eval = nullptr) {
    params.validate();
    const ScmParams& fit_params = eval ? *eval : params;
    Rng rng(seed);
    ZeroRiskReport rep;
    rep.n_perturbations = n_perturbations;
    for (int i = 0; i < n_perturbations; ++i) {
        const double zeta = c_zeta * rng.uniform();
        const double psi = c_psi * rng.uniform();
        const Eigen::MatrixXd sigma_true =
            sigma_model(params.b, params.gamma, psi, (params.w1.array() + zeta).matrix());
        const auto fit =
            fit_nuisance_kl(sigma_true, fit_params.b, fit_params.gamma, fit_params.w1, c_zeta, c_psi);
        rep.kl_values.push_back(fit.kl);
        if (fit.kl >= rep.max_kl) {
            rep.max_kl = fit.kl;
            rep.zeta_at_max = zeta;
            rep.psi_at_max = psi;
        }
    }
    return rep;
}

}  // namespace dirlik
