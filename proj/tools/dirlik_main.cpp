#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dirlik/cli.hpp"

using namespace dirlik;

int main(int argc, char** argv) {
    CLI::App app{"Multi-environment causal structure learning by penalized Gaussian likelihood"};
    app.require_subcommand(1);

    cli::CommonOptions common;
    auto add_common = [&common](CLI::App* cmd) {
        cmd->add_option("--lambda", common.lambda, "moral-edge penalty");
        cmd->add_option("--h-bar", common.h_bar, "latent dimension of the fitted model");
        cmd->add_option("--c-psi", common.c_psi, "cap on the latent perturbation scale");
        cmd->add_option("--mode", common.mode, "iid-latent | unperturbed | single-param");
        cmd->add_option("--eps1", common.eps1, "inner gradient tolerance");
        cmd->add_option("--eps2", common.eps2, "outer connectivity-change tolerance");
        cmd->add_option("--opt-tol", common.opt_tol, "optimum-set relative tolerance");
        cmd->add_option("--jobs", common.jobs, "scoring threads");
        cmd->add_option("--out", common.out, "output JSON path");
    };

    // simulate
    cli::SimulateOptions sim;
    auto* c_sim = app.add_subcommand("simulate", "generate a synthetic dataset");
    c_sim->add_option("--preset", sim.preset, "named setup; see --list-presets");
    c_sim->add_option("--params", sim.params_file, "explicit generating parameters (JSON)");
    c_sim->add_option("--t", sim.t, "interventional sample scale (5t per environment)");
    c_sim->add_option("--n", sim.n_per_env, "per-environment sample counts (explicit parameters)");
    c_sim->add_option("--noise", sim.noise, "gaussian | laplace (explicit parameters)");
    c_sim->add_option("--xi", sim.xi, "quadratic distortion (explicit parameters)");
    c_sim->add_option("--seed", sim.seed, "RNG seed")->required();
    c_sim->add_option("--out", sim.out_dir, "output directory")->required();
    bool list_presets = false;
    c_sim->add_flag("--list-presets", list_presets, "print the preset names and exit");

    // score
    std::string manifest, dag_file;
    auto* c_score = app.add_subcommand("score", "score one DAG against a dataset");
    c_score->add_option("--manifest", manifest, "dataset manifest JSON")->required();
    c_score->add_option("--dag", dag_file, "DAG JSON")->required();
    add_common(c_score);

    // search
    std::string candidates_file;
    bool auto_candidates = false;
    int max_parents = 4;
    auto* c_search = app.add_subcommand("search", "score candidate DAGs and select");
    c_search->add_option("--manifest", manifest, "dataset manifest JSON")->required();
    c_search->add_option("--candidates", candidates_file, "candidate DAGs (JSON array)");
    c_search->add_flag("--auto-candidates", auto_candidates, "hill-climb candidates from pooled data");
    c_search->add_option("--max-parents", max_parents, "hill-climb parent cap");
    add_common(c_search);

    // validate
    std::vector<double> lambda_grid;
    double holdout_frac = 0.2;
    std::optional<std::uint64_t> shuffle_seed;
    std::uint64_t shuffle_seed_raw = 0;
    auto* c_val = app.add_subcommand("validate", "select the penalty by holdout likelihood");
    c_val->add_option("--manifest", manifest, "dataset manifest JSON")->required();
    c_val->add_option("--lambda-grid", lambda_grid, "penalty grid")->required();
    c_val->add_option("--holdout-frac", holdout_frac, "held-out fraction of observational rows");
    c_val->add_option("--candidates", candidates_file, "candidate DAGs (default: pooled hill climb)");
    auto* shuffle_opt = c_val->add_option("--shuffle-seed", shuffle_seed_raw, "shuffle rows before splitting");
    add_common(c_val);

    // check
    std::string params_file, variant = "perturbed", check_out;
    double check_c_psi = 2.0;
    auto* c_check = app.add_subcommand("check", "evaluate identifiability preconditions");
    c_check->add_option("--params", params_file, "generating parameters JSON")->required();
    c_check->add_option("--variant", variant, "perturbed | perturbed-alt | unperturbed | single-param");
    c_check->add_option("--c-psi", check_c_psi, "latent perturbation cap");
    c_check->add_option("--out", check_out, "output JSON path");

    // kl
    double c_zeta = 1.0, kl_c_psi = 0.5;
    int n_perturbations = 100;
    std::uint64_t kl_seed = 0;
    std::string drop_edge, kl_out;
    auto* c_kl = app.add_subcommand("kl", "worst-case divergence over sampled perturbations");
    c_kl->add_option("--params", params_file, "generating parameters JSON")->required();
    c_kl->add_option("--c-zeta", c_zeta, "shift magnitude cap");
    c_kl->add_option("--c-psi", kl_c_psi, "latent perturbation cap");
    c_kl->add_option("--n", n_perturbations, "number of sampled perturbations");
    c_kl->add_option("--seed", kl_seed, "RNG seed");
    c_kl->add_option("--drop-edge", drop_edge, "zero one edge j,i before evaluating");
    c_kl->add_option("--out", kl_out, "output JSON path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_sim->parsed()) {
            if (list_presets) {
                for (const auto& name : preset_names()) std::cout << name << "\n";
                return cli::kExitOk;
            }
            return cli::cmd_simulate(sim);
        }
        if (c_score->parsed()) return cli::cmd_score(manifest, dag_file, common);
        if (c_search->parsed()) return cli::cmd_search(manifest, candidates_file, auto_candidates, common, max_parents);
        if (c_val->parsed()) {
            if (shuffle_opt->count() > 0) shuffle_seed = shuffle_seed_raw;
            return cli::cmd_validate(manifest, lambda_grid, holdout_frac, candidates_file, shuffle_seed, common);
        }
        if (c_check->parsed()) return cli::cmd_check(params_file, variant, check_c_psi, check_out);
        if (c_kl->parsed()) return cli::cmd_kl(params_file, c_zeta, kl_c_psi, n_perturbations, kl_seed, drop_edge, kl_out);
    } catch (const InputError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return cli::kExitInputError;
    } catch (const Error& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return cli::kExitNotConverged;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return cli::kExitInputError;
    }
    return cli::kExitInputError;
}
