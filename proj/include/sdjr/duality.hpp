#pragma once

// Closed-form evaluation of linear anticipated BSDEs with jumps and regimes.
// The solution at the initial time is an expectation of functionals of the
// auxiliary linear delay equation X started at X(t) = 1 with zero history.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "sdjr/errors.hpp"
#include "sdjr/noise.hpp"
#include "sdjr/parallel.hpp"
#include "sdjr/sdde.hpp"

namespace sdjr {

using RegimeFn = std::function<double(double t, int regime)>;
using RegimeMarkFn = std::function<double(double t, int regime, double z)>;
using RegimeVectorFn = std::function<double(double t, int regime, int j)>;

/// Coefficients of the linear driver (and of the dual delay equation).
struct LinearABSDEData {
    RegimeFn b;
    RegimeFn b_bar;
    RegimeFn sigma;
    RegimeFn sigma_bar;
    RegimeMarkFn eta;
    RegimeMarkFn eta_bar;
    RegimeVectorFn gamma;
    RegimeVectorFn gamma_bar;
    RegimeFn l;
    double bound = std::numeric_limits<double>::infinity();

    /// Regime-independent constants; gamma and gamma_bar take the same value
    /// in every component.
    static LinearABSDEData constants(double b, double b_bar, double sigma, double sigma_bar, double eta,
                                     double eta_bar, double gamma, double gamma_bar, double l) {
        auto c = [](double v) { return [v](double, int) { return v; }; };
        auto cm = [](double v) { return [v](double, int, double) { return v; }; };
        auto cv = [](double v) { return [v](double, int, int) { return v; }; };
        const double B = std::max({std::abs(b), std::abs(b_bar), std::abs(sigma), std::abs(sigma_bar),
                                   std::abs(eta), std::abs(eta_bar), std::abs(gamma), std::abs(gamma_bar),
                                   std::abs(l)});
        return {c(b), c(b_bar), c(sigma), c(sigma_bar), cm(eta), cm(eta_bar), cv(gamma), cv(gamma_bar), c(l), B};
    }

    static LinearABSDEData zero() { return constants(0, 0, 0, 0, 0, 0, 0, 0, 0); }
};

/// Deterministic terminal data on [T, T + delta].
struct TerminalData {
    std::function<double(double t)> xi;
    std::function<double(double t)> psi;
    std::function<double(double t, double z)> zeta;
    std::function<double(double t, int j)> theta;

    static TerminalData constants(double xi, double psi, double zeta, double theta) {
        return {[xi](double) { return xi; }, [psi](double) { return psi; },
                [zeta](double, double) { return zeta; }, [theta](double, int) { return theta; }};
    }
};

/// Checks finiteness and the declared uniform bound B on every node of `grid`
/// (history included) and every regime and mark.
inline void validate_linear_data(const LinearABSDEData& d, const NoiseSpec& spec, const TimeGrid& grid) {
    const int D = spec.chain.states();
    auto check = [&](double v, const char* name, double t) {
        if (!std::isfinite(v) || std::abs(v) > d.bound * (1.0 + 1e-12))
            throw InvalidSpec(std::string("linear coefficient ") + name + " is unbounded or non-finite at t = " +
                              std::to_string(t));
    };
    for (int k = -grid.delay_steps(); k <= grid.steps(); ++k) {
        const double t = grid.time(k);
        for (int a = 0; a < D; ++a) {
            check(d.b(t, a), "b", t);
            check(d.b_bar(t, a), "b_bar", t);
            check(d.sigma(t, a), "sigma", t);
            check(d.sigma_bar(t, a), "sigma_bar", t);
            check(d.l(t, a), "l", t);
            for (const auto& mk : spec.jumps.marks()) {
                check(d.eta(t, a, mk.z), "eta", t);
                check(d.eta_bar(t, a, mk.z), "eta_bar", t);
            }
            for (int j = 0; j < D; ++j) {
                check(d.gamma(t, a, j), "gamma", t);
                check(d.gamma_bar(t, a, j), "gamma_bar", t);
            }
        }
    }
}

inline void validate_terminal(const TerminalData& term, const NoiseSpec& spec, const TimeGrid& horizon) {
    const int D = spec.chain.states();
    for (int k = horizon.steps(); k <= horizon.steps() + horizon.delay_steps(); ++k) {
        const double t = horizon.time(k);
        bool ok = std::isfinite(term.xi(t)) && std::isfinite(term.psi(t));
        for (const auto& mk : spec.jumps.marks()) ok = ok && std::isfinite(term.zeta(t, mk.z));
        for (int j = 0; j < D; ++j) ok = ok && std::isfinite(term.theta(t, j));
        if (!ok) throw InvalidSpec("terminal data is not finite at t = " + std::to_string(t));
    }
}

/// Grid on [t, T] with K steps whose delay m satisfies m * dt == delta.
inline TimeGrid duality_grid(double t, double T, double delta, int K) {
    const TimeGrid base(t, T, K);
    return TimeGrid(t, T, K, aligned_delay_steps(delta, base.dt()));
}

// -----------------------------------------------------------------------------
// Dual linear delay equation
// -----------------------------------------------------------------------------

/// Euler solution of the dual equation on a noise grid covering [t, T + delta]
/// (history of m nodes). X = 0 before t and X(t) = 1; while the lag reaches
/// into the history the delayed terms vanish and the step is the delay-free
/// linear equation.
inline DelayedPath simulate_linear_sdde(const LinearABSDEData& d, const NoiseBundle& noise,
                                        CoefficientTrace* trace = nullptr) {
    const TimeGrid& g = noise.grid();
    const int m = g.delay_steps();
    const auto marks = noise.spec->jumps.marks();
    const int D = noise.chain.states();
    std::vector<double> v(static_cast<std::size_t>(m + g.steps() + 1), 0.0);
    DelayedPath X(g, std::move(v));
    X[0] = 1.0;
    if (trace) *trace = CoefficientTrace(g.steps(), static_cast<int>(marks.size()), D);
    std::vector<double> eta(marks.size());
    std::vector<double> gamma(static_cast<std::size_t>(D));
    for (int k = 0; k < g.steps(); ++k) {
        const double t = g.time(k);
        const int a = noise.regime(k);
        const double x = X[k];
        const int q = k - m;
        double b = d.b(t, a) * x;
        double s = d.sigma(t, a) * x;
        for (std::size_t n = 0; n < marks.size(); ++n) eta[n] = x * d.eta(t, a, marks[n].z);
        for (int j = 0; j < D; ++j) gamma[static_cast<std::size_t>(j)] = x * d.gamma(t, a, j);
        if (q >= 0) {
            const double tq = g.time(q);
            const int aq = noise.regime(q);
            const double xl = X[q];
            b += d.b_bar(tq, aq) * xl;
            s += d.sigma_bar(tq, aq) * xl;
            for (std::size_t n = 0; n < marks.size(); ++n) eta[n] += xl * d.eta_bar(tq, aq, marks[n].z);
            for (int j = 0; j < D; ++j) gamma[static_cast<std::size_t>(j)] += xl * d.gamma_bar(tq, aq, j);
        }
        if (trace) {
            trace->drift[static_cast<std::size_t>(k)] = b;
            trace->diffusion[static_cast<std::size_t>(k)] = s;
            for (std::size_t n = 0; n < marks.size(); ++n) trace->jump(k, static_cast<int>(n)) = eta[n];
            for (int j = 0; j < D; ++j) trace->switching(k, j) = gamma[static_cast<std::size_t>(j)];
        }
        X[k + 1] = x + detail::cell_increment(noise, k, b, s, eta, gamma);
        detail::check_finite(X[k + 1], k);
    }
    return X;
}

// -----------------------------------------------------------------------------
// Closed-form functional
// -----------------------------------------------------------------------------

/// Direct evaluation of the data at node times; the scenario tree supplies a
/// tabulated source with the same interface.
struct DirectLinearSource {
    const LinearABSDEData& data;
    const TerminalData& terminal;
    const TimeGrid& grid;

    double l(int k, int a) const { return data.l(grid.time(k), a); }
    double b_bar(int k, int a) const { return data.b_bar(grid.time(k), a); }
    double sigma_bar(int k, int a) const { return data.sigma_bar(grid.time(k), a); }
    double eta_bar(int k, int a, double z) const { return data.eta_bar(grid.time(k), a, z); }
    double gamma_bar(int k, int a, int j) const { return data.gamma_bar(grid.time(k), a, j); }
    double xi(int k) const { return terminal.xi(grid.time(k)); }
    double psi(int k) const { return terminal.psi(grid.time(k)); }
    double zeta(int k, double z) const { return terminal.zeta(grid.time(k), z); }
    double theta(int k, int j) const { return terminal.theta(grid.time(k), j); }
};

/// X(T) xi(T) + sum_{k<K} X_k l_k dt
///   + sum_{K<=k<K+m} [ xi b_bar X_{k-m} + psi sigma_bar X_{k-m}
///                      + sum_z zeta eta_bar X_{k-m} nu(z) + sum_j theta^j gamma_bar^j X_{k-m} lambda'_j(t_k) ] dt
///
/// `x(k)` and `regime(k)` read the path for k <= K; `intensity(k, j)` gives
/// lambda'_j at node k >= K (realized on a simulated path, a conditional
/// expectation on the tree).
template <typename Source, typename XAt, typename RegimeAt, typename IntensityAt>
double duality_functional(const Source& src, const JumpSpec& jumps, int K, int m, double dt, int D, XAt&& x,
                          RegimeAt&& regime, IntensityAt&& intensity) {
    double acc = x(K) * src.xi(K);
    double running = 0.0;
    for (int k = 0; k < K; ++k) running += x(k) * src.l(k, regime(k));
    acc += running * dt;
    double tail = 0.0;
    const auto marks = jumps.marks();
    for (int k = K; k < K + m; ++k) {
        const int q = k - m;
        if (q < 0) continue;
        const int aq = regime(q);
        const double xq = x(q);
        double term = src.xi(k) * src.b_bar(q, aq) * xq + src.psi(k) * src.sigma_bar(q, aq) * xq;
        for (std::size_t n = 0; n < marks.size(); ++n)
            term += src.zeta(k, marks[n].z) * src.eta_bar(q, aq, marks[n].z) * xq * jumps.mass(n);
        for (int j = 0; j < D; ++j) term += src.theta(k, j) * src.gamma_bar(q, aq, j) * xq * intensity(k, j);
        tail += term;
    }
    return acc + tail * dt;
}

struct DualityEstimate {
    double y = 0.0;
    double standard_error = 0.0;
    std::uint64_t n_paths = 0;
    TimeGrid grid;
};

/// Noise path `p` of an estimator run on the extended grid.
using NoiseFactory = std::function<NoiseBundle(std::uint64_t path)>;

inline DualityEstimate summarize(std::span<const double> samples, const TimeGrid& grid) {
    const double n = static_cast<double>(samples.size());
    // shifted by the first sample so a constant ensemble reports SE = 0 exactly
    const double shift = samples.empty() ? 0.0 : samples[0];
    double d = 0.0;
    for (double s : samples) d += s - shift;
    d /= n;
    double ss = 0.0;
    for (double s : samples) ss += (s - shift - d) * (s - shift - d);
    const double var = samples.size() > 1 ? ss / (n - 1.0) : 0.0;
    return {shift + d, std::sqrt(var / n), samples.size(), grid};
}

/// Per-path value of the closed-form functional on a simulated path.
inline double duality_sample(const LinearABSDEData& data, const TerminalData& terminal, const TimeGrid& horizon,
                             const NoiseBundle& noise) {
    const DelayedPath X = simulate_linear_sdde(data, noise);
    const auto& spec = *noise.spec;
    const DirectLinearSource src{data, terminal, noise.grid()};
    return duality_functional(
        src, spec.jumps, horizon.steps(), horizon.delay_steps(), horizon.dt(), spec.chain.states(),
        [&](int k) { return X[k]; }, [&](int k) { return noise.regime(k); },
        [&](int k, int j) { return spec.chain.intensity_into(j, noise.regime(k)); });
}

/// Monte Carlo estimate of Y(t) with noise supplied by `factory` on
/// horizon.extended(m). Samples are reduced in path order.
inline DualityEstimate evaluate_duality(const LinearABSDEData& data, const TerminalData& terminal,
                                        const TimeGrid& horizon, std::uint64_t n_paths, const NoiseFactory& factory,
                                        const Execution& exec = {}) {
    if (n_paths < 1) throw InvalidArgument("duality estimate needs at least one path");
    std::vector<double> samples(n_paths);
    const TimeGrid ext = horizon.extended(horizon.delay_steps());
    parallel_for(n_paths, exec, [&](std::size_t p) {
        const NoiseBundle noise = factory(p);
        if (!(noise.grid() == ext)) throw InvalidArgument("noise factory produced a grid other than [t, T + delta]");
        samples[p] = duality_sample(data, terminal, horizon, noise);
    });
    return summarize(samples, horizon);
}

/// Exact-noise estimate started in `initial_regime`.
inline DualityEstimate evaluate_duality(const LinearABSDEData& data, const TerminalData& terminal,
                                        const TimeGrid& horizon, std::shared_ptr<const NoiseSpec> spec,
                                        int initial_regime, std::uint64_t n_paths, std::uint64_t seed,
                                        const Execution& exec = {}) {
    validate_linear_data(data, *spec, horizon);
    validate_terminal(terminal, *spec, horizon);
    const TimeGrid ext = horizon.extended(horizon.delay_steps());
    NoiseFactory factory = [&](std::uint64_t p) { return make_noise(spec, ext, initial_regime, seed, p); };
    return evaluate_duality(data, terminal, horizon, n_paths, factory, exec);
}

} // namespace sdjr
