#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "dirlik/errors.hpp"
#include "dirlik/graph.hpp"
#include "dirlik/model.hpp"

namespace dirlik {

/// Scoring and optimizer configuration. Defaults follow the reference
/// tolerances: inner gradient tolerance 1e-6, outer connectivity-change
/// tolerance 1e-2, optimum-set relative tolerance 1e-3.
struct ScoreConfig {
    double lambda = 0.0;   // moral-edge penalty
    int h_bar = 1;         // latent dimension of the fitted model (0 = no latents)
    double c_psi = 2.0;    // cap on the latent perturbation scale
    Mode mode = Mode::IidLatent;
    double eps1 = 1e-6;    // inner loop: relative NLL change tolerance
    double eps2 = 1e-2;    // outer loop: max-norm change of B
    double opt_tolerance = 1e-3;  // relative tolerance defining the optimum set
    int max_outer = 200;
    int max_inner = 500;

    void validate() const {
        if (lambda < 0.0 || c_psi < 0.0) throw InputError("ScoreConfig: lambda and c_psi must be nonnegative");
        if (h_bar < 0) throw InputError("ScoreConfig: h_bar must be nonnegative");
        if (eps1 <= 0.0 || eps2 <= 0.0 || opt_tolerance <= 0.0) throw InputError("ScoreConfig: tolerances must be positive");
        if (max_outer < 1 || max_inner < 1) throw InputError("ScoreConfig: iteration caps must be positive");
    }
};

namespace detail {

inline Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, const std::vector<int>& idx) {
    Eigen::MatrixXd out(idx.size(), m.cols());
    for (size_t r = 0; r < idx.size(); ++r) out.row(r) = m.row(idx[r]);
    return out;
}

inline Eigen::VectorXd select(const Eigen::VectorXd& v, const std::vector<int>& idx) {
    Eigen::VectorXd out(idx.size());
    for (size_t r = 0; r < idx.size(); ++r) out(r) = v(idx[r]);
    return out;
}

/// Cholesky of K = diag(w) + (1+psi) G G^T with a conditioning diagnostic on
/// failure.
inline Eigen::LLT<Eigen::MatrixXd> noise_cholesky(const Eigen::VectorXd& w, double psi,
                                                  const Eigen::MatrixXd& gamma_rows) {
    Eigen::MatrixXd k = w.asDiagonal();
    if (gamma_rows.cols() > 0) k += (1.0 + psi) * gamma_rows * gamma_rows.transpose();
    if (!k.allFinite())
        throw IllConditionedError("noise covariance overflowed", std::numeric_limits<double>::infinity());
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() != Eigen::Success || !llt.matrixLLT().allFinite()) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff();
        const double hi = es.eigenvalues().maxCoeff();
        throw IllConditionedError("noise covariance numerically not PD",
                                  lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity());
    }
    return llt;
}

inline double logdet_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// (I - B) with rows restricted to `idx`: the residual map of the retained
/// coordinates.
inline Eigen::MatrixXd residual_rows(const Eigen::MatrixXd& b, const std::vector<int>& idx) {
    const int p = static_cast<int>(b.rows());
    Eigen::MatrixXd a(idx.size(), p);
    for (size_t r = 0; r < idx.size(); ++r) {
        a.row(r) = -b.row(idx[r]);
        a(r, idx[r]) += 1.0;
    }
    return a;
}

/// Negative log-likelihood restricted to coordinates `idx`:
///   log det K + trace(K^{-1} A cov A^T),  A = rows idx of (I - B).
inline double nll_restricted(const Eigen::MatrixXd& b, const Eigen::MatrixXd& gamma, double psi,
                             const Eigen::VectorXd& w, const Eigen::MatrixXd& cov,
                             const std::vector<int>& idx) {
    if (idx.empty()) return 0.0;
    const Eigen::MatrixXd a = residual_rows(b, idx);
    const Eigen::MatrixXd s = a * cov * a.transpose();
    const auto llt = noise_cholesky(select(w, idx), psi, select_rows(gamma, idx));
    return logdet_from_llt(llt) + llt.solve(s).trace();
}

}  // namespace detail

/// Per-environment negative log-likelihood (up to the Gaussian constant):
///   log det K + trace(K^{-1} (I-B) cov (I-B)^T),  K = diag(w) + (1+psi) Gamma Gamma^T.
inline double env_nll(const Eigen::MatrixXd& b, const Eigen::MatrixXd& gamma, double psi,
                      const Eigen::VectorXd& w, const EnvData& env) {
    std::vector<int> all(b.rows());
    for (int k = 0; k < b.rows(); ++k) all[k] = k;
    return detail::nll_restricted(b, gamma, psi, w, env.cov, all);
}

/// Likelihood of an environment with do-interventions: restricted to the
/// non-intervened coordinates, with the intervened rows of B severed. The
/// variance parameters of intervened coordinates do not enter.
inline double env_nll_do(const Eigen::MatrixXd& b, const Eigen::MatrixXd& gamma, double psi,
                         const Eigen::VectorXd& w, const EnvData& env) {
    return detail::nll_restricted(b, gamma, psi, w, env.cov, env.free_indices());
}

/// Weighted multi-environment score: sum of per-environment likelihoods plus
/// the moral-graph penalty. Throws ConstraintViolationError when the
/// parameters are infeasible for the configured mode.
inline double total_score(const Eigen::MatrixXd& b, const Eigen::MatrixXd& gamma,
                          const std::vector<double>& psis, const std::vector<Eigen::VectorXd>& ws,
                          const std::vector<EnvData>& data, const ScoreConfig& cfg, const Dag& dag) {
    cfg.validate();
    if (psis.size() != data.size() || ws.size() != data.size())
        throw InputError("total_score: per-environment parameter count mismatch");
    const double slack = 1e-9;
    if (std::abs(psis[0]) > slack) throw ConstraintViolationError("psi[observational] = 0");
    for (size_t e = 0; e < data.size(); ++e) {
        if (psis[e] < -slack || psis[e] > cfg.c_psi + slack) throw ConstraintViolationError("0 <= psi <= c_psi");
        if (((ws[e] - ws[0]).array() < -slack).any()) throw ConstraintViolationError("w^e >= w^1");
        if (cfg.mode == Mode::UnperturbedLatent && std::abs(psis[e]) > slack)
            throw ConstraintViolationError("psi = 0 in unperturbed-latent mode");
        if (cfg.mode == Mode::SingleParameter) {
            const Eigen::VectorXd diff = ws[e] - ws[0];
            if ((diff.array() - diff(0)).abs().maxCoeff() > 1e-9)
                throw ConstraintViolationError("w^e - w^1 constant in single-parameter mode");
        }
    }
    double nll = 0.0;
    for (size_t e = 0; e < data.size(); ++e) {
        nll += data[e].weight * (data[e].do_values.empty()
                                     ? env_nll(b, gamma, psis[e], ws[e], data[e])
                                     : env_nll_do(b, gamma, psis[e], ws[e], data[e]));
    }
    return nll + cfg.lambda * moral_edge_count(dag);
}

/// KL divergence between centered Gaussians with the given covariances:
///   (trace(Sm^{-1} St) - p + log det Sm - log det St) / 2.
inline double gaussian_kl(const Eigen::MatrixXd& sigma_true, const Eigen::MatrixXd& sigma_fit) {
    if (sigma_true.rows() != sigma_fit.rows() || sigma_true.cols() != sigma_fit.cols())
        throw InputError("gaussian_kl: dimension mismatch");
    const int p = static_cast<int>(sigma_true.rows());
    Eigen::LLT<Eigen::MatrixXd> llt_t(sigma_true);
    Eigen::LLT<Eigen::MatrixXd> llt_m(sigma_fit);
    if (llt_t.info() != Eigen::Success || llt_m.info() != Eigen::Success)
        throw NotPositiveDefiniteError("gaussian_kl: input not PD");
    const double trace_term = llt_m.solve(sigma_true).trace();
    return 0.5 * (trace_term - p + detail::logdet_from_llt(llt_m) - detail::logdet_from_llt(llt_t));
}

struct NuisanceKlFit {
    double zeta = 0.0;
    double psi = 0.0;
    double kl = 0.0;
};

/// Best-fitting shared perturbation parameters for a target covariance:
/// minimizes KL(sigma_true, model(zeta, psi)) over the box
/// [0, c_zeta] x [0, c_psi] by a 25 x 25 coarse grid followed by coordinate
/// descent down to 1e-6 of the box width.
inline NuisanceKlFit fit_nuisance_kl(const Eigen::MatrixXd& sigma_true, const Eigen::MatrixXd& b,
                                     const Eigen::MatrixXd& gamma, const Eigen::VectorXd& w1,
                                     double c_zeta, double c_psi) {
    if (c_zeta < 0.0 || c_psi < 0.0) throw InputError("fit_nuisance_kl: negative box bound");
    auto eval = [&](double zeta, double psi) {
        return gaussian_kl(sigma_true, sigma_model(b, gamma, psi, (w1.array() + zeta).matrix()));
    };

    const int grid = 25;
    NuisanceKlFit best{0.0, 0.0, eval(0.0, 0.0)};
    for (int a = 0; a < grid; ++a) {
        const double zeta = c_zeta * a / (grid - 1);
        if (c_zeta == 0.0 && a > 0) break;
        for (int q = 0; q < grid; ++q) {
            const double psi = c_psi * q / (grid - 1);
            if (c_psi == 0.0 && q > 0) break;
            const double kl = eval(zeta, psi);
            if (kl < best.kl) best = {zeta, psi, kl};
        }
    }

    // Coordinate descent with exact line minimization (golden section over
    // the full box edge), iterated until both coordinates settle to 1e-6 of
    // the box width.
    auto golden = [](double lo, double hi, const std::function<double(double)>& f, double tol) {
        constexpr double kInvPhi = 0.6180339887498949;
        double a = lo, b = hi;
        double c = b - kInvPhi * (b - a), d = a + kInvPhi * (b - a);
        double fc = f(c), fd = f(d);
        while (b - a > tol) {
            if (fc < fd) {
                b = d;
                d = c;
                fd = fc;
                c = b - kInvPhi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + kInvPhi * (b - a);
                fd = f(d);
            }
        }
        return (a + b) / 2.0;
    };

    const double stop_z = 1e-6 * c_zeta, stop_p = 1e-6 * c_psi;
    for (int round = 0; round < 300; ++round) {
        double moved = 0.0;
        if (c_zeta > 0.0) {
            const double z = golden(0.0, c_zeta,
                                    [&](double x) { return eval(x, best.psi); }, stop_z / 4.0);
            const double kl = eval(z, best.psi);
            if (kl < best.kl) {
                moved = std::max(moved, std::abs(z - best.zeta));
                best = {z, best.psi, kl};
            }
        }
        if (c_psi > 0.0) {
            const double q = golden(0.0, c_psi,
                                    [&](double x) { return eval(best.zeta, x); }, stop_p / 4.0);
            const double kl = eval(best.zeta, q);
            if (kl < best.kl) {
                moved = std::max(moved, std::abs(q - best.psi));
                best = {best.zeta, q, kl};
            }
        }
        if (moved <= std::max(stop_z, stop_p)) break;
    }
    return best;
}

}  // namespace dirlik
