#pragma once

// Picard construction of the delay-equation solution: the map h freezes the
// coefficient arguments at a given input path and integrates; under the
// exponentially weighted norm with beta = 16 C^2 (1 + L) + 1 the map halves
// squared distances, so iterating it converges to the unique solution.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "sdjr/errors.hpp"
#include "sdjr/noise.hpp"
#include "sdjr/parallel.hpp"
#include "sdjr/sdde.hpp"

namespace sdjr {

struct BetaConfig {
    double C = 1.0;
    double L = 1.0;
    double beta = 33.0;

    static BetaConfig from(double C, double L) {
        if (!(C > 0.0) || !(L > 0.0)) throw InvalidArgument("beta needs C > 0 and L > 0");
        return {C, L, 16.0 * C * C * (1.0 + L) + 1.0};
    }
};

/// Monte Carlo estimate of E[ int_{t0}^{T} e^{-beta (s - t0)} h(s)^2 ds ] with
/// left-rectangle quadrature, i.e. the squared beta-norm. Paths are reduced in
/// index order.
inline double beta_norm(std::span<const DelayedPath> ensemble, double beta) {
    if (ensemble.empty()) throw InvalidArgument("beta_norm needs a nonempty ensemble");
    const TimeGrid& g = ensemble.front().grid();
    std::vector<double> weight(static_cast<std::size_t>(g.steps()));
    for (int k = 0; k < g.steps(); ++k) weight[static_cast<std::size_t>(k)] = std::exp(-beta * (g.time(k) - g.t0())) * g.dt();
    double total = 0.0;
    for (const auto& h : ensemble) {
        if (!(h.grid() == g)) throw InvalidArgument("beta_norm ensemble paths live on different grids");
        double path_sum = 0.0;
        for (int k = 0; k < g.steps(); ++k) path_sum += weight[static_cast<std::size_t>(k)] * h[k] * h[k];
        total += path_sum;
    }
    return total / static_cast<double>(ensemble.size());
}

inline DelayedPath path_difference(const DelayedPath& a, const DelayedPath& b) {
    if (!(a.grid() == b.grid())) throw InvalidArgument("path difference needs a common grid");
    std::vector<double> v(a.values().size());
    for (std::size_t n = 0; n < v.size(); ++n) v[n] = a.values()[n] - b.values()[n];
    return DelayedPath(a.grid(), std::move(v));
}

/// h(x): Euler solution with coefficient arguments (x(t_k), x(t_k - d_i(t_k)))
/// taken from the input path and the history forced to x0. When x is the
/// direct Euler solution on the same noise, h(x) reproduces it bit for bit.
inline DelayedPath picard_step(const DelayedPath& x, const SDDECoefficients& coeffs, const InitialPath& x0,
                               const DelayFunctions& delays, const NoiseBundle& noise) {
    const TimeGrid& grid = noise.grid();
    if (!(x.grid() == grid)) throw InvalidArgument("picard_step input path is not on the noise grid");
    detail::check_window(delays, grid);
    DelayedPath X = detail::history_only(x0, grid);
    detail::Scratch scratch(noise);
    for (int k = 0; k < grid.steps(); ++k) {
        const auto y = detail::lagged(x, delays, k);
        X[k + 1] = X[k] + detail::sdde_increment(coeffs, noise, k, x[k], y, scratch, nullptr);
        detail::check_finite(X[k + 1], k);
    }
    return X;
}

/// Initial iterate: x0 on the history, constant x0(t0) afterwards.
inline DelayedPath constant_extension(const InitialPath& x0, const TimeGrid& grid) {
    DelayedPath p = detail::history_only(x0, grid);
    for (int k = 1; k <= grid.steps(); ++k) p[k] = p[0];
    return p;
}

struct PicardDiagnostics {
    double beta = 0.0;
    int iterations = 0;          ///< number of applications of h
    std::vector<double> norms;   ///< squared beta-norm of x^{n+1} - x^n
    std::vector<double> ratios;  ///< norms[n] / norms[n-1]
    bool converged = false;
};

struct PicardOptions {
    double tol = 1e-8;
    int max_iter = 50;
};

struct PicardResult {
    std::vector<DelayedPath> paths;
    PicardDiagnostics diagnostics;
};

/// Iterates x^{n+1} = h(x^n) path by path on a fixed noise ensemble until the
/// squared beta-norm of successive differences drops below tol. Running out of
/// iterations is reported through `converged`, not thrown.
inline PicardResult picard_solve(const SDDECoefficients& coeffs, const InitialPath& x0, const DelayFunctions& delays,
                                 std::span<const NoiseBundle> noise, const PicardOptions& options = {},
                                 const Execution& exec = {},
                                 std::optional<std::vector<DelayedPath>> initial_guess = std::nullopt) {
    if (!(options.tol > 0.0)) throw InvalidArgument("picard tolerance must be positive");
    if (options.max_iter < 1) throw InvalidArgument("picard needs max_iter >= 1");
    if (noise.empty()) throw InvalidArgument("picard needs at least one noise path");

    PicardResult result;
    auto& diag = result.diagnostics;
    diag.beta = BetaConfig::from(coeffs.lipschitz_C, delays.L).beta;

    std::vector<DelayedPath> current;
    if (initial_guess) {
        if (initial_guess->size() != noise.size()) throw InvalidArgument("initial guess size mismatch");
        current = std::move(*initial_guess);
    } else {
        current.reserve(noise.size());
        for (const auto& nb : noise) current.push_back(constant_extension(x0, nb.grid()));
    }

    std::vector<DelayedPath> next(current);
    std::vector<DelayedPath> diff(current);
    for (int it = 0; it < options.max_iter; ++it) {
        parallel_for(noise.size(), exec, [&](std::size_t p) {
            next[p] = picard_step(current[p], coeffs, x0, delays, noise[p]);
            diff[p] = path_difference(next[p], current[p]);
        });
        const double norm = beta_norm(diff, diag.beta);
        if (!diag.norms.empty()) {
            const double prev = diag.norms.back();
            diag.ratios.push_back(prev > 0.0 ? norm / prev : 0.0);
        }
        diag.norms.push_back(norm);
        diag.iterations = it + 1;
        std::swap(current, next);
        if (norm < options.tol) {
            diag.converged = true;
            break;
        }
    }
    result.paths = std::move(current);
    return result;
}

} // namespace sdjr
