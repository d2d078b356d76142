#pragma once

// Command pipelines behind the sdjr executable. Every output file carries the
// tool version and the SHA-256 digest of the effective configuration; the
// worker count is excluded from the digest because it never changes results.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "sdjr/checks.hpp"
#include "sdjr/config.hpp"
#include "sdjr/duality.hpp"
#include "sdjr/fixedpoint.hpp"
#include "sdjr/oracle.hpp"
#include "sdjr/sdde.hpp"

namespace sdjr {

inline constexpr const char* kVersion = "0.1.0";

inline std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

inline std::string config_digest(const Json& effective) {
    Json j = effective;
    if (j.contains("run")) j["run"].erase("workers");
    return sha256_hex(j.dump());
}

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int validation = 2;
inline constexpr int numerical = 3;
inline constexpr int resource = 4;
} // namespace exit_code

class OutputSink {
public:
    OutputSink(std::filesystem::path dir, std::string prefix, std::string digest)
        : dir_(std::move(dir)), prefix_(std::move(prefix)), digest_(std::move(digest)) {
        std::filesystem::create_directories(dir_);
    }

    std::filesystem::path path(const std::string& name) const { return dir_ / (prefix_ + name); }

    void json(const std::string& name, Json body) const {
        body["version"] = kVersion;
        body["config_digest"] = digest_;
        std::ofstream f(path(name));
        f << body.dump(2) << "\n";
        if (!f) throw std::runtime_error("cannot write " + path(name).string());
    }

    /// CSV preceded by one '#' comment line with version and digest.
    std::ofstream csv(const std::string& name) const {
        std::ofstream f(path(name));
        if (!f) throw std::runtime_error("cannot write " + path(name).string());
        f << "# sdjr " << kVersion << " config_digest=" << digest_ << "\n";
        return f;
    }

private:
    std::filesystem::path dir_;
    std::string prefix_;
    std::string digest_;
};

namespace detail {

inline std::vector<NoiseBundle> make_ensemble(const ScenarioConfig& c, const TimeGrid& grid, std::uint64_t n,
                                              const Execution& exec) {
    std::vector<std::optional<NoiseBundle>> slots(n);
    parallel_for(n, exec, [&](std::size_t p) { slots[p] = make_noise(c.noise, grid, c.initial_regime, c.seed, p); });
    std::vector<NoiseBundle> out;
    out.reserve(n);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

inline int run_simulate(const ScenarioConfig& c, const OutputSink& out, const Execution& exec) {
    const TimeGrid grid = c.grid();
    const auto coeffs = c.model.coefficients();
    const auto x0 = InitialPath::constant(c.model.x0);
    const auto delays = c.delays();
    std::vector<double> terminal(c.n_paths);
    std::vector<std::string> text(c.n_paths);
    parallel_for(c.n_paths, exec, [&](std::size_t p) {
        const auto noise = make_noise(c.noise, grid, c.initial_regime, c.seed, p);
        const auto X = simulate_sdde(coeffs, x0, delays, noise);
        terminal[p] = X[grid.steps()];
        std::ostringstream os;
        write_path_csv(os, X, noise.chain);
        text[p] = os.str();
    });
    {
        auto f = out.csv("paths.csv");
        f << "path,";
        bool header = true;
        for (std::size_t p = 0; p < text.size(); ++p) {
            std::istringstream is(text[p]);
            std::string line;
            std::getline(is, line);
            if (header) {
                f << line << "\n";
                header = false;
            }
            while (std::getline(is, line)) f << p << "," << line << "\n";
        }
    }
    const auto est = summarize(terminal, grid);
    out.json("simulate.json", {{"terminal_mean", est.y}, {"se", est.standard_error}, {"n_paths", c.n_paths},
                               {"dt", grid.dt()}, {"seed", c.seed}});
    return exit_code::ok;
}

inline int run_picard(const ScenarioConfig& c, const OutputSink& out, const Execution& exec) {
    const TimeGrid grid = c.grid();
    const auto coeffs = c.model.coefficients();
    const auto x0 = InitialPath::constant(c.model.x0);
    const auto delays = c.delays();
    const auto noise = make_ensemble(c, grid, c.n_paths, exec);
    const auto res = picard_solve(coeffs, x0, delays, noise, {c.tol, c.max_iter}, exec);
    double max_diff = 0.0;
    for (std::size_t p = 0; p < noise.size(); ++p) {
        const auto direct = simulate_sdde(coeffs, x0, delays, noise[p]);
        for (int k = 0; k <= grid.steps(); ++k) max_diff = std::max(max_diff, std::abs(direct[k] - res.paths[p][k]));
    }
    const auto& d = res.diagnostics;
    out.json("picard.json", {{"beta", d.beta}, {"iterations", d.iterations}, {"norms", d.norms}, {"ratios", d.ratios},
                             {"converged", d.converged}, {"max_abs_diff_direct_euler", max_diff},
                             {"n_paths", c.n_paths}, {"dt", grid.dt()}, {"seed", c.seed}});
    return exit_code::ok;
}

inline int run_duality(const ScenarioConfig& c, const OutputSink& out, const Execution& exec) {
    const TimeGrid grid = c.grid();
    const auto est = evaluate_duality(c.linear, c.terminal, grid, c.noise, c.initial_regime, c.n_paths, c.seed, exec);
    out.json("duality.json", {{"y", est.y}, {"se", est.standard_error}, {"n_paths", est.n_paths}, {"dt", grid.dt()},
                              {"initial_regime", c.initial_regime}, {"seed", c.seed}});
    return exit_code::ok;
}

inline int run_oracle_gap(const ScenarioConfig& c, const OutputSink& out, const Execution& exec) {
    const ScenarioTree tree(c.noise, c.grid());
    BackwardOptions opt;
    opt.intensity = c.intensity;
    const auto r = duality_gap(tree, c.linear, c.terminal, c.initial_regime, opt, exec);
    out.json("oracle_gap.json", {{"y_forward", r.y_forward}, {"y_backward", r.y_backward}, {"gap", r.gap},
                                 {"K", r.K}, {"dt", r.dt}, {"paths", r.paths}});
    return exit_code::ok;
}

/// Residual table over the refinement levels; the finest level's noise is
/// coarsened so every level sees the same realization.
inline int run_check(const ScenarioConfig& c, const OutputSink& out, const Execution& exec, bool product) {
    const TimeGrid base = c.grid();
    int finest = 1;
    for (int r : c.refinements) finest = std::max(finest, r);
    for (int r : c.refinements)
        if (finest % r != 0) throw InvalidSpec("config.checks.refinements: each level must divide the finest");
    const TimeGrid fine = base.refined(finest);
    const auto test = c.test();
    if (!product) validate_test_function(test, c.t0, c.T, c.noise->chain.states(), c.seed);
    const auto ca = c.model.coefficients();
    const auto cb = c.model_b ? c.model_b->coefficients() : ca;
    const auto xa = InitialPath::constant(c.model.x0);
    const auto xb = InitialPath::constant(c.model_b ? c.model_b->x0 : c.model.x0);
    const auto delays = c.delays();

    std::vector<ResidualStats> rows;
    for (int r : c.refinements) {
        std::vector<double> res(c.n_paths);
        parallel_for(c.n_paths, exec, [&](std::size_t p) {
            const auto fine_noise = make_noise(c.noise, fine, c.initial_regime, c.seed, p);
            const auto noise = finest / r == 1 ? fine_noise : coarsen(fine_noise, finest / r);
            CoefficientTrace ta;
            const auto X = simulate_sdde(ca, xa, delays, noise, &ta);
            if (product) {
                CoefficientTrace tb;
                const auto Y = simulate_sdde(cb, xb, delays, noise, &tb);
                res[p] = product_rule_residual(X, ta, Y, tb, noise);
            } else {
                res[p] = ito_residual(test, X, noise, ta);
            }
        });
        rows.push_back(residual_stats(res, base.refined(r).dt()));
    }
    auto f = out.csv(product ? "check_product.csv" : "check_ito.csv");
    write_residual_csv(f, rows);
    return exit_code::ok;
}

inline int run_validate(const ScenarioConfig& c, const OutputSink& out) {
    const TimeGrid grid = c.grid();
    const auto a = validate_assumptions(c.delays(), grid, c.seed);
    const auto k = validate_coefficients(c.model.coefficients(), *c.noise, grid, c.seed);
    validate_linear_data(c.linear, *c.noise, grid);
    const bool valid = a.L_within_declared && k.lipschitz_ok && k.finite_at_origin;
    out.json("validate.json", {{"valid", valid},
                               {"empirical_L", a.empirical_L},
                               {"L_within_declared", a.L_within_declared},
                               {"delay_continuous", a.continuous},
                               {"max_lipschitz_ratio", k.max_lipschitz_ratio},
                               {"lipschitz_ok", k.lipschitz_ok},
                               {"finite_at_origin", k.finite_at_origin}});
    if (!valid) {
        std::cerr << "validation failed:";
        if (!a.L_within_declared) std::cerr << " empirical delay constant " << a.empirical_L << " exceeds L;";
        if (!k.lipschitz_ok) std::cerr << " Lipschitz ratio " << k.max_lipschitz_ratio << " exceeds C;";
        if (!k.finite_at_origin) std::cerr << " coefficients not finite at the origin;";
        std::cerr << "\n";
        return exit_code::validation;
    }
    return exit_code::ok;
}

} // namespace detail

inline const std::vector<std::string>& commands() {
    static const std::vector<std::string> names{"simulate", "picard", "duality", "oracle-gap",
                                                "check-ito", "check-product", "validate"};
    return names;
}

/// Runs one command on a loaded config and maps failures onto exit codes.
inline int run_command(const std::string& command, const ScenarioConfig& c, const std::filesystem::path& out_dir) {
    try {
        const OutputSink out(out_dir, c.prefix, config_digest(c.effective));
        const Execution exec{c.workers};
        if (command == "simulate") return detail::run_simulate(c, out, exec);
        if (command == "picard") return detail::run_picard(c, out, exec);
        if (command == "duality") return detail::run_duality(c, out, exec);
        if (command == "oracle-gap") return detail::run_oracle_gap(c, out, exec);
        if (command == "check-ito") return detail::run_check(c, out, exec, false);
        if (command == "check-product") return detail::run_check(c, out, exec, true);
        if (command == "validate") return detail::run_validate(c, out);
        std::cerr << "unknown command " << command << "\n";
        return exit_code::validation;
    } catch (const ValidationError& e) {
        std::cerr << "invalid: " << e.what() << "\n";
        return exit_code::validation;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return exit_code::numerical;
    } catch (const ResourceLimit& e) {
        std::cerr << "resource limit: " << e.what() << "\n";
        return exit_code::resource;
    }
}

} // namespace sdjr
