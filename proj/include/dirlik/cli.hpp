#pragma once

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dirlik/benchmark.hpp"
#include "dirlik/io.hpp"
#include "dirlik/presets.hpp"
#include "dirlik/theory.hpp"
#include "dirlik/validate.hpp"

namespace dirlik {
namespace cli {

constexpr int kExitOk = 0;
constexpr int kExitInputError = 1;
constexpr int kExitNotConverged = 2;

struct CommonOptions {
    double lambda = 0.0;
    int h_bar = 1;
    double c_psi = 2.0;
    std::string mode = "iid-latent";
    double eps1 = 1e-6;
    double eps2 = 1e-2;
    double opt_tol = 1e-3;
    int jobs = 1;
    std::uint64_t seed = 0;
    std::string out;

    ScoreConfig score_config() const {
        ScoreConfig cfg;
        cfg.lambda = lambda;
        cfg.h_bar = h_bar;
        cfg.c_psi = c_psi;
        cfg.mode = mode_from_string(mode);
        cfg.eps1 = eps1;
        cfg.eps2 = eps2;
        cfg.opt_tolerance = opt_tol;
        cfg.validate();
        return cfg;
    }
};

/// simulate: synthesize a dataset from a named preset or explicit parameters;
/// writes per-environment CSVs, the manifest, and the generating parameters.
struct SimulateOptions {
    std::string preset;       // one of preset_names(), or empty when params_file is set
    std::string params_file;  // explicit ScmParams JSON
    int t = 64;
    std::vector<long> n_per_env;  // explicit-params mode
    std::string noise = "gaussian";
    double xi = 0.0;
    std::uint64_t seed = 0;
    std::string out_dir;
};

inline int cmd_simulate(const SimulateOptions& opt) {
    namespace fs = std::filesystem;
    ScmParams params;
    std::vector<long> n_per_env;
    NoiseKind noise = NoiseKind::Gaussian;
    Eigen::MatrixXd latent_cov;
    double xi = 0.0;
    io::json truth_extra;

    if (!opt.preset.empty()) {
        const SimPreset preset = make_preset(opt.preset, opt.t, opt.seed);
        params = preset.params;
        n_per_env = preset.n_per_env;
        noise = preset.noise;
        latent_cov = preset.latent_cov;
        xi = preset.xi;
        truth_extra["preset"] = preset.name;
        truth_extra["t"] = opt.t;
        truth_extra["fit_h_bar"] = preset.fit_cfg.h_bar;
        truth_extra["fit_c_psi"] = preset.fit_cfg.c_psi;
        if (preset.response >= 0) truth_extra["response"] = preset.response;
    } else if (!opt.params_file.empty()) {
        params = io::params_from_json(io::load_json(opt.params_file));
        if (opt.n_per_env.empty()) throw InputError("simulate: explicit parameters need --n");
        n_per_env = opt.n_per_env;
        latent_cov = Eigen::MatrixXd::Identity(params.h(), params.h());
        noise = opt.noise == "laplace" ? NoiseKind::Laplace : NoiseKind::Gaussian;
        xi = opt.xi;
    } else {
        throw InputError("simulate: provide --preset or --params");
    }

    fs::create_directories(opt.out_dir);
    const auto sims = simulate(params, n_per_env, noise, latent_cov, xi, opt.seed);

    io::json manifest;
    io::json envs = io::json::array();
    for (size_t e = 0; e < sims.size(); ++e) {
        const std::string name = "env_" + std::to_string(e) + ".csv";
        io::write_csv(opt.out_dir + "/" + name, sims[e].samples);
        io::json entry;
        entry["path"] = name;
        entry["n"] = sims[e].samples.rows();
        entry["label"] = e == 0 ? "observational" : ("interventional-" + std::to_string(e));
        if (!sims[e].data.do_values.empty()) {
            io::json d = io::json::object();
            for (const auto& [k, v] : sims[e].data.do_values) d[std::to_string(k)] = v;
            entry["do"] = std::move(d);
        }
        envs.push_back(std::move(entry));
    }
    manifest["environments"] = std::move(envs);
    manifest["seed"] = opt.seed;
    io::save_json(opt.out_dir + "/manifest.json", manifest);

    io::json truth = io::to_json(params);
    truth["dag"] = io::to_json(params.support_dag());
    for (const auto& [k, v] : truth_extra.items()) truth[k] = v;
    io::save_json(opt.out_dir + "/truth.json", truth);
    std::cout << "wrote " << sims.size() << " environments to " << opt.out_dir << "\n";
    return kExitOk;
}

/// score: fit one DAG against a dataset manifest.
inline int cmd_score(const std::string& manifest_path, const std::string& dag_path,
                     const CommonOptions& common) {
    const auto envs = io::load_manifest(manifest_path);
    const auto data = env_data_from_samples(envs);
    const Dag dag = io::dag_from_json(io::load_json(dag_path));
    const ScoreConfig cfg = common.score_config();
    const FitResult fit = score_dag(dag, data, cfg);
    io::json out = io::to_json(fit);
    out["dag"] = io::to_json(dag);
    out["lambda"] = cfg.lambda;
    out["moral_edges"] = moral_edge_count(dag);
    if (!common.out.empty()) io::save_json(common.out, out);
    std::cout << out.dump(2) << "\n";
    return fit.converged ? kExitOk : kExitNotConverged;
}

inline void print_search_summary(const SearchReport& report, std::ostream& os) {
    os << "candidates scored: " << report.scored.size() << "\n";
    os << std::left << std::setw(6) << "rank" << std::setw(16) << "score" << std::setw(8) << "edges"
       << std::setw(8) << "moral" << "dag\n";
    const size_t show = std::min<size_t>(10, report.scored.size());
    os << std::setprecision(8);
    for (size_t i = 0; i < show; ++i) {
        const auto& s = report.scored[i];
        os << std::left << std::setw(6) << i + 1 << std::setw(16) << s.score() << std::setw(8)
           << s.dag.edge_count() << std::setw(8) << moral_edge_count(s.dag) << s.dag.canonical_key()
           << "\n";
    }
    os << "final optimum set: " << report.final_optimum.size()
       << ", minimal-moral: " << report.minimal_moral.size() << "\n";
    if (!report.minimal_moral.empty()) {
        const auto& pick = report.minimal_moral.front();
        os << "selected: " << pick.dag.canonical_key() << "  score " << pick.score() << "\n";
    }
}

/// search: score candidates (from a file or pooled-data hill climb), prune,
/// and report the selection.
inline int cmd_search(const std::string& manifest_path, const std::string& candidates_path,
                      bool auto_candidates, const CommonOptions& common, int max_parents = 4) {
    const auto envs = io::load_manifest(manifest_path);
    const auto data = env_data_from_samples(envs);
    std::vector<Dag> candidates;
    if (!candidates_path.empty()) {
        candidates = io::candidates_from_json(io::load_json(candidates_path));
    } else if (auto_candidates) {
        long rows = 0;
        for (const auto& e : envs) rows += e.samples.rows();
        Eigen::MatrixXd all(rows, envs[0].samples.cols());
        long at = 0;
        for (const auto& e : envs) {
            all.middleRows(at, e.samples.rows()) = e.samples;
            at += e.samples.rows();
        }
        candidates = generate_candidates(covariance_of(all), rows, max_parents);
    } else {
        throw InputError("search: provide --candidates or --auto-candidates");
    }
    const ScoreConfig cfg = common.score_config();
    const SearchReport report = run_search(candidates, data, cfg, common.jobs);
    if (!common.out.empty()) io::save_json(common.out, io::to_json(report));
    print_search_summary(report, std::cout);
    if (report.minimal_moral.empty()) return kExitNotConverged;
    return report.minimal_moral.front().fit.converged ? kExitOk : kExitNotConverged;
}

/// validate: penalty selection by holdout likelihood on the observational
/// environment, then a full refit at the winner.
inline int cmd_validate(const std::string& manifest_path, const std::vector<double>& lambda_grid,
                        double holdout_frac, const std::string& candidates_path,
                        std::optional<std::uint64_t> shuffle_seed, const CommonOptions& common) {
    const auto envs = io::load_manifest(manifest_path);
    std::vector<Dag> candidates;
    if (!candidates_path.empty()) candidates = io::candidates_from_json(io::load_json(candidates_path));
    const ValidationResult val = validate_lambda(envs, lambda_grid, holdout_frac, common.score_config(),
                                                 candidates, common.jobs, shuffle_seed);
    if (!common.out.empty()) io::save_json(common.out, io::to_json(val));
    std::cout << "lambda        valid_nll\n" << std::setprecision(10);
    for (const auto& pt : val.path) std::cout << std::left << std::setw(14) << pt.lambda << pt.valid_nll << "\n";
    std::cout << "selected lambda: " << val.selected_lambda << "\n";
    print_search_summary(val.full_search, std::cout);
    if (val.full_search.minimal_moral.empty()) return kExitNotConverged;
    return val.full_search.minimal_moral.front().fit.converged ? kExitOk : kExitNotConverged;
}

/// check: evaluate the identifiability preconditions on generating parameters.
inline int cmd_check(const std::string& params_file, const std::string& variant, double c_psi,
                     const std::string& out) {
    const ScmParams params = io::params_from_json(io::load_json(params_file));
    AssumptionVariant v;
    if (variant == "perturbed") v = AssumptionVariant::PerturbedLatents;
    else if (variant == "perturbed-alt") v = AssumptionVariant::PerturbedLatentsAlt;
    else if (variant == "unperturbed") v = AssumptionVariant::UnperturbedLatents;
    else if (variant == "single-param") v = AssumptionVariant::SingleParameter;
    else throw InputError("check: unknown variant " + variant);
    const AssumptionReport rep = check_assumptions(params, v, c_psi);
    const io::json j = io::to_json(rep);
    if (!out.empty()) io::save_json(out, j);
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

/// kl: worst-case nuisance-fitted divergence over sampled perturbations of
/// the shared-shift class, optionally after deleting one edge.
inline int cmd_kl(const std::string& params_file, double c_zeta, double c_psi, int n_perturbations,
                  std::uint64_t seed, const std::string& drop_edge, const std::string& out) {
    const ScmParams params = io::params_from_json(io::load_json(params_file));
    std::optional<ScmParams> eval;
    if (!drop_edge.empty()) {
        const auto comma = drop_edge.find(',');
        if (comma == std::string::npos) throw InputError("kl: --drop-edge expects j,i");
        const int j = std::stoi(drop_edge.substr(0, comma));
        const int i = std::stoi(drop_edge.substr(comma + 1));
        if (j < 0 || j >= params.p() || i < 0 || i >= params.p() || params.b(i, j) == 0.0)
            throw InputError("kl: --drop-edge does not name an existing edge");
        eval = params;
        eval->b(i, j) = 0.0;
    }
    const ZeroRiskReport rep = verify_robustness_zero_risk(params, c_zeta, c_psi, n_perturbations, seed,
                                                           eval ? &*eval : nullptr);
    io::json j = io::to_json(rep);
    if (!out.empty()) io::save_json(out, j);
    std::cout << "max KL over " << rep.n_perturbations << " perturbations: " << rep.max_kl << "\n";
    return kExitOk;
}

}  // namespace cli
}  // namespace dirlik
