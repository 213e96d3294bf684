#pragma once

#include <json.hpp>

#include <Eigen/Dense>

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dirlik/errors.hpp"
#include "dirlik/fit.hpp"
#include "dirlik/graph.hpp"
#include "dirlik/model.hpp"
#include "dirlik/search.hpp"
#include "dirlik/theory.hpp"
#include "dirlik/validate.hpp"

namespace dirlik {
namespace io {

using nlohmann::json;

inline json to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json to_json(const Eigen::VectorXd& v) {
    json arr = json::array();
    for (int i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
    if (!j.is_array()) throw InputError("matrix: expected array of rows");
    const int rows = static_cast<int>(j.size());
    const int cols = rows == 0 ? 0 : static_cast<int>(j.at(0).size());
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        if (static_cast<int>(j.at(i).size()) != cols) throw InputError("matrix: ragged rows");
        for (int c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
    }
    return m;
}

inline Eigen::VectorXd vector_from_json(const json& j) {
    Eigen::VectorXd v(j.size());
    for (size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = j.at(i).get<double>();
    return v;
}

// ---- DAG ----

inline json to_json(const Dag& d) {
    json out;
    out["p"] = d.p();
    json edges = json::array();
    for (const auto& [j, i] : d.edges()) edges.push_back(json::array({j, i}));
    out["edges"] = std::move(edges);
    return out;
}

inline Dag dag_from_json(const json& j) {
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    return Dag(j.at("p").get<int>(), std::move(edges));
}

inline std::vector<Dag> candidates_from_json(const json& j) {
    if (!j.is_array()) throw InputError("candidates: expected a JSON array of DAG objects");
    std::vector<Dag> out;
    for (const auto& d : j) out.push_back(dag_from_json(d));
    return out;
}

// ---- model parameters ----

inline json to_json(const EnvSpec& env) {
    json out;
    out["psi"] = env.psi;
    out["w"] = to_json(env.w);
    out["mode"] = to_string(env.mode);
    out["weight"] = env.weight;
    if (env.zeta) out["zeta"] = *env.zeta;
    if (!env.do_values.empty()) {
        json d = json::object();
        for (const auto& [k, v] : env.do_values) d[std::to_string(k)] = v;
        out["do"] = std::move(d);
    }
    if (env.latent_cov_override) out["latent_cov"] = to_json(*env.latent_cov_override);
    return out;
}

inline EnvSpec env_spec_from_json(const json& j) {
    EnvSpec env;
    env.psi = j.at("psi").get<double>();
    env.w = vector_from_json(j.at("w"));
    if (j.contains("mode")) env.mode = mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("weight")) env.weight = j.at("weight").get<double>();
    if (j.contains("zeta")) env.zeta = j.at("zeta").get<double>();
    if (j.contains("do"))
        for (const auto& [k, v] : j.at("do").items()) env.do_values[std::stoi(k)] = v.get<double>();
    if (j.contains("latent_cov")) env.latent_cov_override = matrix_from_json(j.at("latent_cov"));
    return env;
}

inline json to_json(const ScmParams& params) {
    json out;
    out["b"] = to_json(params.b);
    out["gamma"] = to_json(params.gamma);
    out["w1"] = to_json(params.w1);
    json envs = json::array();
    for (const auto& e : params.envs) envs.push_back(to_json(e));
    out["envs"] = std::move(envs);
    return out;
}

inline ScmParams params_from_json(const json& j) {
    ScmParams params;
    params.b = matrix_from_json(j.at("b"));
    params.gamma = matrix_from_json(j.at("gamma"));
    params.w1 = vector_from_json(j.at("w1"));
    for (const auto& e : j.at("envs")) params.envs.push_back(env_spec_from_json(e));
    params.validate();
    return params;
}

// ---- fit / search results ----

inline json to_json(const FitResult& fit) {
    json out;
    out["b_hat"] = to_json(fit.b_hat);
    out["gamma_hat"] = to_json(fit.gamma_hat);
    out["psi_hat"] = fit.psi_hat;
    json ws = json::array();
    for (const auto& w : fit.w_hat) ws.push_back(to_json(w));
    out["w_hat"] = std::move(ws);
    out["score"] = fit.score;
    out["nll"] = fit.nll;
    out["iterations"] = fit.iterations;
    out["converged"] = fit.converged;
    out["per_iter_nll"] = fit.per_iter_nll;
    out["warnings"] = fit.warnings;
    return out;
}

inline json to_json(const ScoredDag& s) {
    json out;
    out["dag"] = to_json(s.dag);
    out["score"] = s.score();
    out["moral_edges"] = moral_edge_count(s.dag);
    if (s.failed)
        out["error"] = s.error;
    else
        out["fit"] = to_json(s.fit);
    return out;
}

inline json to_json(const SearchReport& report) {
    json out;
    json scored = json::array();
    for (const auto& s : report.scored) scored.push_back(to_json(s));
    out["candidates"] = std::move(scored);
    json opt = json::array();
    for (const auto& s : report.initial_optimum) opt.push_back(to_json(s.dag));
    out["initial_optimum"] = std::move(opt);
    json paths = json::array();
    for (const auto& path : report.deletion_paths) {
        json p = json::array();
        for (const auto& s : path) {
            json e;
            e["dag"] = to_json(s.dag);
            e["score"] = s.score();
            p.push_back(std::move(e));
        }
        paths.push_back(std::move(p));
    }
    out["deletion_paths"] = std::move(paths);
    json fin = json::array();
    for (const auto& s : report.final_optimum) fin.push_back(to_json(s));
    out["final_optimum"] = std::move(fin);
    json mm = json::array();
    for (const auto& s : report.minimal_moral) mm.push_back(to_json(s));
    out["minimal_moral"] = std::move(mm);
    return out;
}

inline json to_json(const AssumptionReport& rep) {
    json out;
    out["variant"] = to_string(rep.variant);
    out["kappa_star"] = rep.kappa_star;
    out["a1_weights_ok"] = rep.a1_weights_ok;
    out["a2_heterogeneity_ok"] = rep.a2_heterogeneity_ok;
    out["a3_materiality_ok"] = rep.a3_materiality_ok;
    out["a4_strength_ok"] = rep.a4_strength_ok;
    out["a1_margin"] = rep.a1_margin;
    out["a2_margin"] = rep.a2_margin;
    out["a3_margin"] = rep.a3_margin;
    out["a4_margin"] = rep.a4_margin;
    out["all_ok"] = rep.all_ok();
    if (rep.witness_pair) out["witness_pair"] = json::array({rep.witness_pair->first, rep.witness_pair->second});
    if (!rep.perturbed_set.empty()) out["perturbed_set"] = rep.perturbed_set;
    return out;
}

inline json to_json(const ValidationResult& val) {
    json out;
    out["selected_lambda"] = val.selected_lambda;
    json path = json::array();
    for (const auto& pt : val.path) {
        json e;
        e["lambda"] = pt.lambda;
        e["valid_nll"] = pt.valid_nll;
        e["train_dag"] = to_json(pt.train_dag);
        e["train_fit"] = to_json(pt.train_fit);
        path.push_back(std::move(e));
    }
    out["path"] = std::move(path);
    out["full_search"] = to_json(val.full_search);
    return out;
}

inline json to_json(const ZeroRiskReport& rep) {
    json out;
    out["max_kl"] = rep.max_kl;
    out["zeta_at_max"] = rep.zeta_at_max;
    out["psi_at_max"] = rep.psi_at_max;
    out["n_perturbations"] = rep.n_perturbations;
    out["kl_values"] = rep.kl_values;
    return out;
}

// ---- files ----

inline json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    json j;
    in >> j;
    return j;
}

inline void save_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << j.dump(2) << "\n";
}

/// CSV: one comment line naming the columns, then one row per observation.
inline void write_csv(const std::string& path, const Eigen::MatrixXd& samples) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << "#";
    for (int c = 0; c < samples.cols(); ++c) out << (c ? "," : " ") << "x" << c;
    out << "\n";
    out.precision(17);
    for (int r = 0; r < samples.rows(); ++r) {
        for (int c = 0; c < samples.cols(); ++c) out << (c ? "," : "") << samples(r, c);
        out << "\n";
    }
}

inline Eigen::MatrixXd read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (!rows.empty() && row.size() != rows.front().size()) throw InputError("ragged CSV: " + path);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw InputError("empty CSV: " + path);
    Eigen::MatrixXd m(rows.size(), rows.front().size());
    for (size_t r = 0; r < rows.size(); ++r)
        for (size_t c = 0; c < rows.front().size(); ++c) m(r, c) = rows[r][c];
    return m;
}

/// Dataset manifest: per-environment CSV path, sample count, do-set, label.
/// Paths are resolved relative to the manifest's directory.
inline std::vector<SampleEnv> load_manifest(const std::string& manifest_path) {
    const json j = load_json(manifest_path);
    std::string dir = ".";
    if (const auto slash = manifest_path.find_last_of('/'); slash != std::string::npos)
        dir = manifest_path.substr(0, slash);
    std::vector<SampleEnv> envs;
    for (const auto& e : j.at("environments")) {
        SampleEnv env;
        const std::string rel = e.at("path").get<std::string>();
        env.samples = read_csv(rel.front() == '/' ? rel : dir + "/" + rel);
        if (e.contains("do"))
            for (const auto& [k, v] : e.at("do").items()) env.do_values[std::stoi(k)] = v.get<double>();
        if (e.contains("n") && e.at("n").get<long>() != env.samples.rows())
            throw InputError("manifest: sample count mismatch for " + rel);
        envs.push_back(std::move(env));
    }
    if (envs.empty()) throw InputError("manifest: no environments");
    return envs;
}

}  // namespace io
}  // namespace dirlik
