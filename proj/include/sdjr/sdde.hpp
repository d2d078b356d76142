#pragma once

// Forward Euler-Maruyama engine for scalar delay equations driven by the
// regime chain, the compensated Poisson measure and a Brownian motion:
//
//   dX = b(t, X, X(t-d1), a) dt + sigma(t, X, X(t-d2), a) dW
//        + int eta(t, X-, X((t-d3)-), a-, z) N~(dt, dz) + gamma(t, X-, X((t-d4)-), a-) dPhi~
//
// All coefficients are evaluated at the left node of each cell.

#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sdjr/errors.hpp"
#include "sdjr/noise.hpp"
#include "sdjr/rng.hpp"

namespace sdjr {

using DriftFn = std::function<double(double t, double x, double y, int regime)>;
using JumpFn = std::function<double(double t, double x, double y, int regime, double z)>;
/// Component j of the D-vector gamma.
using SwitchFn = std::function<double(double t, double x, double y, int regime, int j)>;

struct SDDECoefficients {
    DriftFn drift;
    DriftFn diffusion;
    JumpFn jump;
    SwitchFn switching;
    double lipschitz_C = 1.0;

    static SDDECoefficients zero() {
        return {[](double, double, double, int) { return 0.0; },
                [](double, double, double, int) { return 0.0; },
                [](double, double, double, int, double) { return 0.0; },
                [](double, double, double, int, int) { return 0.0; }, 1.0};
    }
};

/// The four lag functions d_i(t), their common bound delta and the constant L
/// of the delay-integral condition.
struct DelayFunctions {
    std::array<std::function<double(double)>, 4> lag;
    double bound = 0.0;
    double L = 1.0;

    static DelayFunctions uniform(double delta, double L = 1.0) {
        auto f = [delta](double) { return delta; };
        return {{f, f, f, f}, delta, L};
    }
};

/// Pre-history x0 on [t0 - delta, t0].
class InitialPath {
public:
    explicit InitialPath(std::function<double(double)> f) : f_(std::move(f)) {}
    static InitialPath constant(double c) {
        return InitialPath([c](double) { return c; });
    }

    double operator()(double t) const { return f_(t); }

    /// sup |x0| over the history nodes of `grid`.
    double sup_norm(const TimeGrid& grid) const {
        double s = 0.0;
        for (int k = -grid.delay_steps(); k <= 0; ++k) s = std::max(s, std::abs(f_(grid.time(k))));
        return s;
    }

private:
    std::function<double(double)> f_;
};

/// Scalar path on nodes k = -m..K with cadlag left-node lookup.
class DelayedPath {
public:
    DelayedPath(const TimeGrid& grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
        if (static_cast<int>(values_.size()) != grid.delay_steps() + grid.steps() + 1)
            throw InvalidArgument("delayed path size does not match its grid");
    }

    const TimeGrid& grid() const noexcept { return grid_; }
    int first_node() const noexcept { return -grid_.delay_steps(); }
    int last_node() const noexcept { return grid_.steps(); }

    double operator[](int k) const noexcept { return values_[static_cast<std::size_t>(k + grid_.delay_steps())]; }
    double& operator[](int k) noexcept { return values_[static_cast<std::size_t>(k + grid_.delay_steps())]; }

    /// Value at the greatest node <= t.
    double lookup(double t) const noexcept {
        const int k = std::clamp(grid_.node_at_or_before(t), first_node(), last_node());
        return (*this)[k];
    }

    std::span<const double> values() const noexcept { return values_; }

    friend bool operator==(const DelayedPath& a, const DelayedPath& b) {
        return a.grid_ == b.grid_ && a.values_ == b.values_;
    }

private:
    TimeGrid grid_;
    std::vector<double> values_;
};

/// Coefficient values actually used in each cell of a simulation, kept so the
/// pathwise calculus checks can replay the scheme.
struct CoefficientTrace {
    std::vector<double> drift;     ///< b_k
    std::vector<double> diffusion; ///< sigma_k
    CellMatrix jump;               ///< eta_k(z_n), one column per mark
    CellMatrix switching;          ///< gamma^j_k, one column per state

    CoefficientTrace() = default;
    CoefficientTrace(int cells, int marks, int states)
        : drift(static_cast<std::size_t>(cells)), diffusion(static_cast<std::size_t>(cells)),
          jump(cells, marks), switching(cells, states) {}
};

namespace detail {

/// Euler increment of one cell given the left-point coefficient values.
/// `eta` holds eta(z_n) per mark and `gamma` the D-vector; both spans are read
/// in a fixed order so that identical inputs give bit-identical increments.
inline double cell_increment(const NoiseBundle& noise, int k, double b, double s, std::span<const double> eta,
                             std::span<const double> gamma) {
    const double dt = noise.grid().dt();
    const auto& jumps = noise.spec->jumps;
    double inc = b * dt + s * noise.dW[static_cast<std::size_t>(k)];
    double compensator = 0.0;
    for (std::size_t n = 0; n < eta.size(); ++n) compensator += jumps.mass(n) * eta[n];
    double realized = 0.0;
    for (const auto& ev : noise.jumps.in_cell(k)) realized += eta[static_cast<std::size_t>(ev.mark)];
    inc += realized - dt * compensator;
    double sw = 0.0;
    for (std::size_t j = 0; j < gamma.size(); ++j) sw += gamma[j] * noise.dPhi(k, static_cast<int>(j));
    return inc + sw;
}

struct Scratch {
    std::vector<double> eta;
    std::vector<double> gamma;
    Scratch(const NoiseBundle& noise)
        : eta(noise.spec->jumps.mark_count()), gamma(static_cast<std::size_t>(noise.chain.states())) {}
};

/// Evaluates the four coefficients of cell k at (x, y_1..y_4) and returns the increment.
inline double sdde_increment(const SDDECoefficients& c, const NoiseBundle& noise, int k, double x,
                             const std::array<double, 4>& y, Scratch& scratch, CoefficientTrace* trace) {
    const double t = noise.grid().time(k);
    const int a = noise.regime(k);
    const double b = c.drift(t, x, y[0], a);
    const double s = c.diffusion(t, x, y[1], a);
    const auto marks = noise.spec->jumps.marks();
    for (std::size_t n = 0; n < marks.size(); ++n) scratch.eta[n] = c.jump(t, x, y[2], a, marks[n].z);
    for (std::size_t j = 0; j < scratch.gamma.size(); ++j)
        scratch.gamma[j] = c.switching(t, x, y[3], a, static_cast<int>(j));
    if (trace) {
        trace->drift[static_cast<std::size_t>(k)] = b;
        trace->diffusion[static_cast<std::size_t>(k)] = s;
        for (std::size_t n = 0; n < marks.size(); ++n) trace->jump(k, static_cast<int>(n)) = scratch.eta[n];
        for (std::size_t j = 0; j < scratch.gamma.size(); ++j)
            trace->switching(k, static_cast<int>(j)) = scratch.gamma[j];
    }
    return cell_increment(noise, k, b, s, scratch.eta, scratch.gamma);
}

/// Lagged values X(t_k - d_i(t_k)) read from `source` by left-node lookup.
inline std::array<double, 4> lagged(const DelayedPath& source, const DelayFunctions& delays, int k) {
    const TimeGrid& g = source.grid();
    const double t = g.time(k);
    std::array<double, 4> y{};
    for (std::size_t i = 0; i < 4; ++i) {
        const int node = g.node_at_or_before(t - delays.lag[i](t));
        if (node < -g.delay_steps() || node > k)
            throw InvalidArgument("delay " + std::to_string(i + 1) + " leaves the simulated window at step " +
                                  std::to_string(k));
        y[i] = source[node];
    }
    return y;
}

inline void check_window(const DelayFunctions& delays, const TimeGrid& grid) {
    if (delays.bound > grid.delta() + 1e-12 * std::max(1.0, grid.delta()))
        throw InvalidArgument("delay bound exceeds the grid's history window m*dt");
}

inline DelayedPath history_only(const InitialPath& x0, const TimeGrid& grid) {
    std::vector<double> v(static_cast<std::size_t>(grid.delay_steps() + grid.steps() + 1), 0.0);
    DelayedPath p(grid, std::move(v));
    for (int k = -grid.delay_steps(); k <= 0; ++k) p[k] = x0(grid.time(k));
    return p;
}

inline void check_finite(double v, int k) {
    if (!std::isfinite(v)) throw NumericalBlowup("non-finite state produced", k);
}

} // namespace detail

/// Explicit Euler solution of the delay equation on the noise grid. The lag
/// lookups only ever read nodes <= k, so the recursion is explicit for any
/// delays that satisfy (A1).
inline DelayedPath simulate_sdde(const SDDECoefficients& coeffs, const InitialPath& x0, const DelayFunctions& delays,
                                 const NoiseBundle& noise, CoefficientTrace* trace = nullptr) {
    const TimeGrid& grid = noise.grid();
    detail::check_window(delays, grid);
    DelayedPath X = detail::history_only(x0, grid);
    if (trace)
        *trace = CoefficientTrace(grid.steps(), static_cast<int>(noise.spec->jumps.mark_count()),
                                  noise.chain.states());
    detail::Scratch scratch(noise);
    for (int k = 0; k < grid.steps(); ++k) {
        const auto y = detail::lagged(X, delays, k);
        X[k + 1] = X[k] + detail::sdde_increment(coeffs, noise, k, X[k], y, scratch, trace);
        detail::check_finite(X[k + 1], k);
    }
    return X;
}

// -----------------------------------------------------------------------------
// Delay-free engine (independent code path used for cross-checks)
// -----------------------------------------------------------------------------

struct SDECoefficients {
    std::function<double(double t, double x, int regime)> drift;
    std::function<double(double t, double x, int regime)> diffusion;
    std::function<double(double t, double x, int regime, double z)> jump;
    std::function<double(double t, double x, int regime, int j)> switching;
};

/// Euler solution of the delay-free equation started at x0 on nodes 0..K.
inline std::vector<double> simulate_sde(const SDECoefficients& c, double x0, const NoiseBundle& noise) {
    const TimeGrid& g = noise.grid();
    const auto& jumps = noise.spec->jumps;
    const int D = noise.chain.states();
    std::vector<double> x(static_cast<std::size_t>(g.steps()) + 1);
    x[0] = x0;
    std::vector<double> eta(jumps.mark_count());
    for (int k = 0; k < g.steps(); ++k) {
        const double t = g.time(k);
        const double xk = x[static_cast<std::size_t>(k)];
        const int a = noise.regime(k);
        double next = xk + c.drift(t, xk, a) * g.dt() + c.diffusion(t, xk, a) * noise.dW[static_cast<std::size_t>(k)];
        double comp = 0.0;
        for (std::size_t n = 0; n < eta.size(); ++n) {
            eta[n] = c.jump(t, xk, a, jumps.marks()[n].z);
            comp += jumps.mass(n) * eta[n];
        }
        double realized = 0.0;
        for (const auto& ev : noise.jumps.in_cell(k)) realized += eta[static_cast<std::size_t>(ev.mark)];
        next += realized - g.dt() * comp;
        double sw = 0.0;
        for (int j = 0; j < D; ++j) sw += c.switching(t, xk, a, j) * noise.dPhi(k, j);
        next += sw;
        detail::check_finite(next, k);
        x[static_cast<std::size_t>(k) + 1] = next;
    }
    return x;
}

// -----------------------------------------------------------------------------
// Assumption checks
// -----------------------------------------------------------------------------

struct AssumptionReport {
    double empirical_L = 0.0;      ///< max observed ratio of the delay-integral condition
    bool L_within_declared = true;
    double max_adjacent_change = 0.0;
    bool continuous = true;        ///< no adjacent-node change above the continuity tolerance
    double continuity_tolerance = 0.0;
};

/// Checks (A1) at every node (hard error) and estimates the constant of the
/// delay-integral condition with `samples` random nonnegative step functions g
/// supported on random sub-intervals of the history-plus-horizon window.
inline AssumptionReport validate_assumptions(const DelayFunctions& delays, const TimeGrid& grid,
                                             std::uint64_t seed = 1, int samples = 100) {
    const int K = grid.steps();
    const int m = grid.delay_steps();
    const double tol = 1e-12 * std::max(1.0, std::abs(grid.T()));
    if (delays.bound > grid.delta() + tol)
        throw InvalidSpec("declared delay bound exceeds the grid's history window");

    AssumptionReport report;
    report.continuity_tolerance = 0.5 * std::max(delays.bound, grid.dt());
    for (std::size_t i = 0; i < 4; ++i) {
        double prev = 0.0;
        for (int k = 0; k <= K; ++k) {
            const double t = grid.time(k);
            const double d = delays.lag[i](t);
            if (!std::isfinite(d) || d < -tol || d > t - grid.t0() + delays.bound + tol)
                throw InvalidSpec("delay " + std::to_string(i + 1) + " violates -delta <= t - d(t) <= t at t = " +
                                  std::to_string(t));
            if (k > 0) report.max_adjacent_change = std::max(report.max_adjacent_change, std::abs(d - prev));
            prev = d;
        }
    }
    report.continuous = report.max_adjacent_change <= report.continuity_tolerance;

    // g lives on cells c = -m..K-1 (index c + m).
    const int cells = m + K;
    auto rng = make_engine(seed, 0, Stream::auxiliary);
    std::uniform_int_distribution<int> pos(0, cells - 1);
    std::uniform_real_distribution<double> height(0.0, 1.0);
    std::vector<double> g(static_cast<std::size_t>(cells));
    for (int s = 0; s < samples; ++s) {
        int a = pos(rng), b = pos(rng);
        if (a > b) std::swap(a, b);
        for (int c = 0; c < cells; ++c) g[static_cast<std::size_t>(c)] = (c >= a && c <= b) ? height(rng) : 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            double lhs = 0.0;
            double rhs = 0.0;
            for (int c = -m; c < 0; ++c) rhs += g[static_cast<std::size_t>(c + m)];
            for (int n = 0; n < K; ++n) {
                const double t = grid.time(n);
                const int c = std::clamp(grid.node_at_or_before(t - delays.lag[i](t)), -m, K - 1);
                lhs += g[static_cast<std::size_t>(c + m)];
                rhs += g[static_cast<std::size_t>(n + m)];
                if (rhs > 0.0) report.empirical_L = std::max(report.empirical_L, lhs / rhs);
            }
        }
    }
    report.L_within_declared = report.empirical_L <= delays.L * (1.0 + 1e-12);
    return report;
}

struct CoefficientReport {
    double max_lipschitz_ratio = 0.0; ///< max quotient / (C (|dx| + |dy|))
    bool lipschitz_ok = true;         ///< ratio within 1% of the declared C
    bool finite_at_origin = true;     ///< coefficients finite at (t, 0, 0, e_i)
};

/// Randomized spot-check of the Lipschitz bound (eta in the nu-weighted norm,
/// gamma in the intensity-weighted norm of the current regime) and of
/// finiteness at the origin on every grid node and regime.
inline CoefficientReport validate_coefficients(const SDDECoefficients& c, const NoiseSpec& spec, const TimeGrid& grid,
                                               std::uint64_t seed = 1, int samples = 1000) {
    CoefficientReport r;
    const int D = spec.chain.states();
    const auto marks = spec.jumps.marks();
    for (int k = 0; k <= grid.steps(); ++k) {
        const double t = grid.time(k);
        for (int a = 0; a < D; ++a) {
            bool ok = std::isfinite(c.drift(t, 0, 0, a)) && std::isfinite(c.diffusion(t, 0, 0, a));
            for (const auto& mk : marks) ok = ok && std::isfinite(c.jump(t, 0, 0, a, mk.z));
            for (int j = 0; j < D; ++j) ok = ok && std::isfinite(c.switching(t, 0, 0, a, j));
            if (!ok) r.finite_at_origin = false;
        }
    }
    auto rng = make_engine(seed, 0, Stream::auxiliary);
    std::uniform_int_distribution<int> node(0, grid.steps());
    std::uniform_int_distribution<int> regime(0, D - 1);
    std::normal_distribution<double> arg(0.0, 2.0);
    for (int s = 0; s < samples; ++s) {
        const double t = grid.time(node(rng));
        const int a = regime(rng);
        const double x1 = arg(rng), x2 = arg(rng), y1 = arg(rng), y2 = arg(rng);
        const double scale = c.lipschitz_C * (std::abs(x1 - x2) + std::abs(y1 - y2));
        if (!(scale > 0.0)) continue;
        const double db = std::abs(c.drift(t, x1, y1, a) - c.drift(t, x2, y2, a));
        const double ds = std::abs(c.diffusion(t, x1, y1, a) - c.diffusion(t, x2, y2, a));
        double dj = 0.0;
        for (std::size_t n = 0; n < marks.size(); ++n) {
            const double d = c.jump(t, x1, y1, a, marks[n].z) - c.jump(t, x2, y2, a, marks[n].z);
            dj += spec.jumps.mass(n) * d * d;
        }
        double dg = 0.0;
        for (int j = 0; j < D; ++j) {
            const double d = c.switching(t, x1, y1, a, j) - c.switching(t, x2, y2, a, j);
            dg += spec.chain.intensity_into(j, a) * d * d;
        }
        const double q = std::max({db, ds, std::sqrt(dj), std::sqrt(dg)});
        r.max_lipschitz_ratio = std::max(r.max_lipschitz_ratio, q / scale);
    }
    r.lipschitz_ok = r.max_lipschitz_ratio <= 1.01;
    return r;
}

// -----------------------------------------------------------------------------
// CSV export
// -----------------------------------------------------------------------------

/// Writes `k,t,regime,X`. History nodes report the chain's initial regime.
inline void write_path_csv(std::ostream& os, const DelayedPath& path, const ChainPath& chain) {
    os << "k,t,regime,X\n";
    char buf[96];
    for (int k = path.first_node(); k <= path.last_node(); ++k) {
        const int regime = k <= 0 ? chain.initial_state() : chain.state_at_node(std::min(k, chain.grid().steps()));
        std::snprintf(buf, sizeof buf, "%d,%.12g,%d,%.17g\n", k, path.grid().time(k), regime, path[k]);
        os << buf;
    }
}

} // namespace sdjr
