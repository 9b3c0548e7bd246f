#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lic/error.hpp"
#include "lic/model.hpp"

namespace lic {

// Experiment configuration document. Every field has a desk-scale default;
// the schema rejects unknown keys so typos cannot silently fall back.
struct RunConfig {
    std::string arch = "factorized";
    int64_t N = 32;
    int64_t M = 48;
    int64_t Nh = 32;
    int64_t Mh = 32;
    std::vector<double> lambdas = {0.001, 0.01, 0.1};
    std::vector<int64_t> r_values = {2, 4};
    std::vector<double> rho_values = {10.0};
    int64_t steps = 2000;
    int64_t batch_size = 4;
    int64_t patch_size = 64;
    double lr = 1e-3;
    uint64_t seed = 0;
    std::string dataset;     // directory of .ppm files
    std::string output_dir = "out";
};

inline void validate(const RunConfig& c) {
    Arch arch = arch_from_string(c.arch);  // throws ConfigError on bad value
    if (c.N < 1 || c.M < 1) throw ConfigError("config: N and M must be >= 1");
    if (arch == Arch::hyper && (c.Nh < 1 || c.Mh < 1))
        throw ConfigError("config: hyper arch needs Nh and Mh >= 1");
    if (c.lambdas.empty()) throw ConfigError("config: lambdas must be non-empty");
    for (double l : c.lambdas)
        if (!(l >= 0.0) || !std::isfinite(l))
            throw ConfigError("config: lambdas must be finite and >= 0");
    for (int64_t r : c.r_values)
        if (r < 1) throw ConfigError("config: r values must be >= 1");
    for (double rho : c.rho_values)
        if (!(rho > 0.0 && rho <= 100.0))
            throw ConfigError("config: rho values must lie in (0, 100]");
    if (c.steps < 1) throw ConfigError("config: steps must be >= 1");
    if (c.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (!(c.lr > 0.0)) throw ConfigError("config: lr must be positive");
    const int64_t granularity = arch == Arch::hyper ? 64 : 16;
    if (c.patch_size < granularity || c.patch_size % granularity != 0)
        throw ConfigError("config: patch_size must be a positive multiple of " +
                          std::to_string(granularity) + " for the " + c.arch + " arch");
}

inline RunConfig parse_run_config(const std::string& json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON (") + e.what() + ")");
    }
    if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");

    static const std::set<std::string> known = {
        "arch", "N", "M", "Nh", "Mh", "lambdas", "r_values", "rho_values",
        "steps", "batch_size", "patch_size", "lr", "seed", "dataset", "output_dir"};
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("config: unknown key '" + it.key() + "'");

    RunConfig c;
    try {
        if (doc.contains("arch")) c.arch = doc["arch"].get<std::string>();
        if (doc.contains("N")) c.N = doc["N"].get<int64_t>();
        if (doc.contains("M")) c.M = doc["M"].get<int64_t>();
        if (doc.contains("Nh")) c.Nh = doc["Nh"].get<int64_t>();
        if (doc.contains("Mh")) c.Mh = doc["Mh"].get<int64_t>();
        if (doc.contains("lambdas")) c.lambdas = doc["lambdas"].get<std::vector<double>>();
        if (doc.contains("r_values"))
            c.r_values = doc["r_values"].get<std::vector<int64_t>>();
        if (doc.contains("rho_values"))
            c.rho_values = doc["rho_values"].get<std::vector<double>>();
        if (doc.contains("steps")) c.steps = doc["steps"].get<int64_t>();
        if (doc.contains("batch_size")) c.batch_size = doc["batch_size"].get<int64_t>();
        if (doc.contains("patch_size")) c.patch_size = doc["patch_size"].get<int64_t>();
        if (doc.contains("lr")) c.lr = doc["lr"].get<double>();
        if (doc.contains("seed")) c.seed = doc["seed"].get<uint64_t>();
        if (doc.contains("dataset")) c.dataset = doc["dataset"].get<std::string>();
        if (doc.contains("output_dir")) c.output_dir = doc["output_dir"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: field has the wrong type (") + e.what() +
                          ")");
    }
    validate(c);
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    return parse_run_config(text);
}

}  // namespace lic
