#pragma once

// Pathwise residuals of the regime-switching Ito formula and product rule for
// a scalar state, evaluated on a simulated path with the coefficient values
// the scheme actually used (left-point convention throughout).

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sdjr/errors.hpp"
#include "sdjr/noise.hpp"
#include "sdjr/rng.hpp"
#include "sdjr/sdde.hpp"

namespace sdjr {

/// phi(t, y, regime) with analytic derivatives.
struct TestFunction {
    using Fn = std::function<double(double t, double y, int regime)>;
    Fn phi;
    Fn d_t;
    Fn d_y;
    Fn d_yy;

    static TestFunction identity() {
        return {[](double, double y, int) { return y; }, [](double, double, int) { return 0.0; },
                [](double, double, int) { return 1.0; }, [](double, double, int) { return 0.0; }};
    }
    static TestFunction square() {
        return {[](double, double y, int) { return y * y; }, [](double, double, int) { return 0.0; },
                [](double, double y, int) { return 2.0 * y; }, [](double, double, int) { return 2.0; }};
    }
    /// phi(t, y, e_j) = c_j.
    static TestFunction regime_values(std::vector<double> c) {
        auto zero = [](double, double, int) { return 0.0; };
        return {[c](double, double, int a) { return c.at(static_cast<std::size_t>(a)); }, zero, zero, zero};
    }
    /// a*f + b*g, derivatives included.
    static TestFunction combine(double a, const TestFunction& f, double b, const TestFunction& g) {
        auto mix = [a, b](Fn p, Fn q) {
            return [a, b, p, q](double t, double y, int r) { return a * p(t, y, r) + b * q(t, y, r); };
        };
        return {mix(f.phi, g.phi), mix(f.d_t, g.d_t), mix(f.d_y, g.d_y), mix(f.d_yy, g.d_yy)};
    }
};

struct DerivativeReport {
    double max_relative_error = 0.0;
    bool ok = true;
};

/// Compares the supplied derivatives with centered differences (step h) at
/// `samples` random points in [t0, T] x [-2, 2] x regimes; throws InvalidSpec
/// when the relative error exceeds 1e-6.
inline DerivativeReport validate_test_function(const TestFunction& f, double t0, double T, int regimes,
                                               std::uint64_t seed = 1, int samples = 200, double h = 1e-5) {
    auto rng = make_engine(seed, 0, Stream::auxiliary);
    std::uniform_real_distribution<double> tt(t0, T), yy(-2.0, 2.0);
    std::uniform_int_distribution<int> rr(0, regimes - 1);
    DerivativeReport rep;
    auto rel = [](double approx, double exact) { return std::abs(approx - exact) / std::max(1.0, std::abs(exact)); };
    for (int s = 0; s < samples; ++s) {
        const double t = tt(rng), y = yy(rng);
        const int a = rr(rng);
        const double ft = (f.phi(t + h, y, a) - f.phi(t - h, y, a)) / (2 * h);
        const double fy = (f.phi(t, y + h, a) - f.phi(t, y - h, a)) / (2 * h);
        const double fyy = (f.d_y(t, y + h, a) - f.d_y(t, y - h, a)) / (2 * h);
        rep.max_relative_error = std::max({rep.max_relative_error, rel(ft, f.d_t(t, y, a)), rel(fy, f.d_y(t, y, a)),
                                           rel(fyy, f.d_yy(t, y, a))});
    }
    rep.ok = rep.max_relative_error <= 1e-6;
    if (!rep.ok)
        throw InvalidSpec("test function derivatives disagree with finite differences (relative error " +
                          std::to_string(rep.max_relative_error) + ")");
    return rep;
}

namespace detail {

/// Compensated jump count of mark n in cell k.
inline double compensated_count(const NoiseBundle& noise, int k, std::size_t n) {
    double c = 0.0;
    for (const auto& ev : noise.jumps.in_cell(k))
        if (static_cast<std::size_t>(ev.mark) == n) c += 1.0;
    return c - noise.spec->jumps.mass(n) * noise.grid().dt();
}

inline void check_trace(const DelayedPath& path, const NoiseBundle& noise, const CoefficientTrace& trace) {
    const int K = noise.grid().steps();
    if (!(path.grid() == noise.grid())) throw InvalidArgument("path and noise live on different grids");
    if (static_cast<int>(trace.drift.size()) != K || trace.jump.rows() != K ||
        trace.jump.cols() != static_cast<int>(noise.spec->jumps.mark_count()) ||
        trace.switching.cols() != noise.chain.states())
        throw InvalidArgument("coefficient trace does not match the noise");
}

} // namespace detail

/// Terms of the discrete Ito formula; residual = lhs - (sum of the rest).
struct ItoBreakdown {
    double lhs = 0.0;
    double time = 0.0;
    double drift = 0.0;
    double diffusion_correction = 0.0;
    double jump_compensator = 0.0;
    double switch_compensator = 0.0;
    double brownian = 0.0;
    double jump_martingale = 0.0;
    double switch_martingale = 0.0;
    double residual = 0.0;
};

inline ItoBreakdown ito_breakdown(const TestFunction& f, const DelayedPath& path, const NoiseBundle& noise,
                                  const CoefficientTrace& trace) {
    detail::check_trace(path, noise, trace);
    const TimeGrid& g = noise.grid();
    const int K = g.steps();
    const double dt = g.dt();
    const auto& spec = *noise.spec;
    const int D = noise.chain.states();
    const std::size_t M = spec.jumps.mark_count();
    ItoBreakdown r;
    r.lhs = f.phi(g.time(K), path[K], noise.regime(K)) - f.phi(g.time(0), path[0], noise.regime(0));
    for (int k = 0; k < K; ++k) {
        const double t = g.time(k);
        const double x = path[k];
        const int a = noise.regime(k);
        const double p = f.phi(t, x, a);
        const double py = f.d_y(t, x, a);
        const double s = trace.diffusion[static_cast<std::size_t>(k)];
        r.time += f.d_t(t, x, a) * dt;
        r.drift += py * trace.drift[static_cast<std::size_t>(k)] * dt;
        r.diffusion_correction += 0.5 * f.d_yy(t, x, a) * s * s * dt;
        r.brownian += py * s * noise.dW[static_cast<std::size_t>(k)];
        for (std::size_t n = 0; n < M; ++n) {
            const double eta = trace.jump(k, static_cast<int>(n));
            const double diff = f.phi(t, x + eta, a) - p;
            r.jump_compensator += (diff - py * eta) * spec.jumps.mass(n) * dt;
            r.jump_martingale += diff * detail::compensated_count(noise, k, n);
        }
        for (int j = 0; j < D; ++j) {
            const double gam = trace.switching(k, j);
            const double diff = f.phi(t, x + gam, j) - p;
            r.switch_compensator += (diff - py * gam) * spec.chain.intensity_into(j, a) * dt;
            r.switch_martingale += diff * noise.dPhi(k, j);
        }
    }
    r.residual = r.lhs - (r.time + r.drift + r.diffusion_correction + r.jump_compensator + r.switch_compensator +
                          r.brownian + r.jump_martingale + r.switch_martingale);
    return r;
}

inline double ito_residual(const TestFunction& f, const DelayedPath& path, const NoiseBundle& noise,
                           const CoefficientTrace& trace) {
    return ito_breakdown(f, path, noise, trace).residual;
}

/// Terms of the discrete product rule for X1 X2. Jump and switch covariation
/// are split into the compensator (dt) part and the compensated martingale
/// part; together they equal the realized covariation at event times.
struct ProductBreakdown {
    double lhs = 0.0;
    double x1_dx2 = 0.0;
    double x2_dx1 = 0.0;
    double diffusion = 0.0;
    double jump_compensator = 0.0;
    double jump_martingale = 0.0;
    double switch_compensator = 0.0;
    double switch_martingale = 0.0;
    double residual = 0.0;
};

inline ProductBreakdown product_rule_breakdown(const DelayedPath& x1, const CoefficientTrace& c1,
                                               const DelayedPath& x2, const CoefficientTrace& c2,
                                               const NoiseBundle& noise) {
    detail::check_trace(x1, noise, c1);
    detail::check_trace(x2, noise, c2);
    const TimeGrid& g = noise.grid();
    const int K = g.steps();
    const double dt = g.dt();
    const auto& spec = *noise.spec;
    const int D = noise.chain.states();
    const std::size_t M = spec.jumps.mark_count();
    ProductBreakdown r;
    r.lhs = x1[K] * x2[K] - x1[0] * x2[0];
    for (int k = 0; k < K; ++k) {
        const auto ks = static_cast<std::size_t>(k);
        const int a = noise.regime(k);
        r.x1_dx2 += x1[k] * (x2[k + 1] - x2[k]);
        r.x2_dx1 += x2[k] * (x1[k + 1] - x1[k]);
        r.diffusion += c1.diffusion[ks] * c2.diffusion[ks] * dt;
        for (std::size_t n = 0; n < M; ++n) {
            const double e = c1.jump(k, static_cast<int>(n)) * c2.jump(k, static_cast<int>(n));
            r.jump_compensator += e * spec.jumps.mass(n) * dt;
            r.jump_martingale += e * detail::compensated_count(noise, k, n);
        }
        for (int j = 0; j < D; ++j) {
            const double e = c1.switching(k, j) * c2.switching(k, j);
            r.switch_compensator += e * spec.chain.intensity_into(j, a) * dt;
            r.switch_martingale += e * noise.dPhi(k, j);
        }
    }
    r.residual = r.lhs - (r.x1_dx2 + r.x2_dx1 + r.diffusion + r.jump_compensator + r.jump_martingale +
                          r.switch_compensator + r.switch_martingale);
    return r;
}

inline double product_rule_residual(const DelayedPath& x1, const CoefficientTrace& c1, const DelayedPath& x2,
                                    const CoefficientTrace& c2, const NoiseBundle& noise) {
    return product_rule_breakdown(x1, c1, x2, c2, noise).residual;
}

// -----------------------------------------------------------------------------
// Ensemble summaries
// -----------------------------------------------------------------------------

struct ResidualStats {
    double dt = 0.0;
    double mean = 0.0;
    double mean_abs_residual = 0.0; ///< |ensemble mean|, the weak error
    double se = 0.0;
    std::uint64_t n_paths = 0;
};

inline ResidualStats residual_stats(std::span<const double> residuals, double dt) {
    ResidualStats s;
    s.dt = dt;
    s.n_paths = residuals.size();
    const double n = static_cast<double>(residuals.size());
    for (double r : residuals) s.mean += r;
    s.mean /= n;
    double ss = 0.0;
    for (double r : residuals) ss += (r - s.mean) * (r - s.mean);
    s.se = residuals.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    s.mean_abs_residual = std::abs(s.mean);
    return s;
}

inline void write_residual_csv(std::ostream& os, std::span<const ResidualStats> rows) {
    os << "dt,mean_abs_residual,se,n_paths\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.12g,%.17g,%.17g,%llu\n", r.dt, r.mean_abs_residual, r.se,
                      static_cast<unsigned long long>(r.n_paths));
        os << buf;
    }
}

} // namespace sdjr
