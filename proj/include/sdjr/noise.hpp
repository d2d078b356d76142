#pragma once

// Driving noise on a shared time grid: the regime chain with its compensated
// counting measure, the finite-activity Poisson random measure, and Brownian
// increments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sdjr/errors.hpp"
#include "sdjr/rng.hpp"

namespace sdjr {

// =============================================================================
// Time grid
// =============================================================================

/// Uniform grid t_k = t0 + k*dt, k = -m..K, with delay delta = m*dt.
class TimeGrid {
public:
    TimeGrid(double t0, double T, int K, int m = 0) : t0_(t0), T_(T), K_(K), m_(m) {
        if (!(std::isfinite(t0) && std::isfinite(T)) || !(t0 < T))
            throw InvalidArgument("time grid needs t0 < T");
        if (K < 1) throw InvalidArgument("time grid needs K >= 1 steps");
        if (m < 0) throw InvalidArgument("time grid needs m >= 0 delay steps");
        dt_ = (T - t0) / K;
    }

    double t0() const noexcept { return t0_; }
    double T() const noexcept { return T_; }
    int steps() const noexcept { return K_; }
    int delay_steps() const noexcept { return m_; }
    double dt() const noexcept { return dt_; }
    double delta() const noexcept { return m_ * dt_; }

    /// Node time; k may be negative (history segment).
    double time(int k) const noexcept { return t0_ + k * dt_; }

    /// Greatest node index k with t_k <= t (may be negative).
    int node_at_or_before(double t) const noexcept {
        return static_cast<int>(std::floor((t - t0_) / dt_ + kSnap));
    }

    /// Cell k such that t_k < t <= t_{k+1}, clamped to [0, K-1].
    int cell_containing(double t) const noexcept {
        const int k = static_cast<int>(std::ceil((t - t0_) / dt_ - kSnap)) - 1;
        return std::clamp(k, 0, K_ - 1);
    }

    /// Same t0 and dt with `extra` more steps appended after T.
    TimeGrid extended(int extra) const {
        if (extra < 0) throw InvalidArgument("grid extension must be nonnegative");
        TimeGrid g = *this;
        g.K_ += extra;
        g.T_ = T_ + extra * dt_;
        return g;
    }

    /// Every cell split into `factor` cells; the delay keeps its length.
    TimeGrid refined(int factor) const {
        if (factor < 1) throw InvalidArgument("refinement factor must be >= 1");
        return TimeGrid(t0_, T_, K_ * factor, m_ * factor);
    }

    /// Inverse of refined(); requires K and m divisible by `factor`.
    TimeGrid coarsened(int factor) const {
        if (factor < 1 || K_ % factor != 0 || m_ % factor != 0)
            throw InvalidArgument("grid cannot be coarsened by factor " + std::to_string(factor));
        TimeGrid g(t0_, T_, K_ / factor, m_ / factor);
        return g;
    }

    friend bool operator==(const TimeGrid& a, const TimeGrid& b) noexcept {
        return a.t0_ == b.t0_ && a.K_ == b.K_ && a.m_ == b.m_ && a.dt_ == b.dt_;
    }

private:
    static constexpr double kSnap = 1e-9;

    double t0_;
    double T_;
    int K_;
    int m_;
    double dt_ = 0.0;
};

/// Delay steps m with m*dt == delta; throws when delta is not grid-aligned.
inline int aligned_delay_steps(double delta, double dt) {
    if (!(delta >= 0.0) || !(dt > 0.0)) throw InvalidArgument("delay and step must be nonnegative");
    const double ratio = delta / dt;
    const double m = std::round(ratio);
    if (std::abs(ratio - m) > 1e-9 * std::max(1.0, ratio))
        throw InvalidArgument("delay " + std::to_string(delta) + " is not a multiple of dt " +
                              std::to_string(dt));
    return static_cast<int>(m);
}

// =============================================================================
// Small row-major matrix of per-cell vectors
// =============================================================================

class CellMatrix {
public:
    CellMatrix() = default;
    CellMatrix(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {}

    int rows() const noexcept { return rows_; }
    int cols() const noexcept { return cols_; }
    double& operator()(int r, int c) noexcept { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const noexcept {
        return data_[static_cast<std::size_t>(r) * cols_ + c];
    }
    std::span<const double> row(int r) const noexcept {
        return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)};
    }
    friend bool operator==(const CellMatrix&, const CellMatrix&) = default;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// =============================================================================
// Regime chain
// =============================================================================

/// Generator of a finite-state chain on {e_0, ..., e_{D-1}}. Off-diagonal
/// intensities are strictly positive; the diagonal is reset to minus the
/// off-diagonal row sum so every row sums to zero.
class RegimeChainSpec {
public:
    explicit RegimeChainSpec(const std::vector<std::vector<double>>& rows) {
        D_ = static_cast<int>(rows.size());
        if (D_ < 1) throw InvalidSpec("generator must have at least one state");
        rates_.assign(static_cast<std::size_t>(D_) * D_, 0.0);
        for (int i = 0; i < D_; ++i) {
            const auto& row = rows[static_cast<std::size_t>(i)];
            if (static_cast<int>(row.size()) != D_)
                throw InvalidSpec("generator row " + std::to_string(i) + " has " +
                                  std::to_string(row.size()) + " entries, expected " + std::to_string(D_));
            double sum = 0.0;
            double scale = 1.0;
            for (int j = 0; j < D_; ++j) {
                const double v = row[static_cast<std::size_t>(j)];
                if (!std::isfinite(v))
                    throw InvalidSpec("generator row " + std::to_string(i) + " has a non-finite entry");
                if (j != i && !(v > 0.0))
                    throw InvalidSpec("generator row " + std::to_string(i) + ": off-diagonal entry (" +
                                      std::to_string(i) + "," + std::to_string(j) + ") must be positive");
                sum += v;
                scale = std::max(scale, std::abs(v));
            }
            if (std::abs(sum) > 1e-9 * scale)
                throw InvalidSpec("generator row " + std::to_string(i) + " sums to " + format(sum) +
                                  ", expected 0");
            double off = 0.0;
            for (int j = 0; j < D_; ++j) {
                if (j == i) continue;
                rate_ref(i, j) = row[static_cast<std::size_t>(j)];
                off += row[static_cast<std::size_t>(j)];
            }
            rate_ref(i, i) = -off;
        }
    }

    static RegimeChainSpec single_state() { return RegimeChainSpec(std::vector<std::vector<double>>{{0.0}}); }

    int states() const noexcept { return D_; }
    double rate(int i, int j) const noexcept { return rates_[static_cast<std::size_t>(i) * D_ + j]; }
    double exit_rate(int i) const noexcept { return -rate(i, i); }

    /// Instantaneous intensity of switching into j while sitting in `current`.
    double intensity_into(int j, int current) const noexcept {
        return j == current ? 0.0 : rate(current, j);
    }

    /// Re-asserts the row-sum-zero invariant.
    void check() const {
        for (int i = 0; i < D_; ++i) {
            double sum = 0.0;
            for (int j = 0; j < D_; ++j) sum += rate(i, j);
            if (std::abs(sum) > 1e-12 * std::max(1.0, exit_rate(i)))
                throw InvalidSpec("generator row " + std::to_string(i) + " no longer sums to 0");
            if (D_ > 1 && !(exit_rate(i) > 0.0))
                throw InvalidSpec("generator row " + std::to_string(i) + " is degenerate (zero exit rate)");
        }
    }

    friend bool operator==(const RegimeChainSpec&, const RegimeChainSpec&) = default;

private:
    static std::string format(double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", v);
        return buf;
    }
    double& rate_ref(int i, int j) noexcept { return rates_[static_cast<std::size_t>(i) * D_ + j]; }

    int D_ = 0;
    std::vector<double> rates_;
};

struct Transition {
    double time;
    int from;
    int to;
};

/// Realized cadlag chain trajectory with per-cell occupation times and arrival
/// counts. Node states hold alpha(t_k); a transition at exactly t_{k+1} belongs
/// to cell k, so node k+1 already shows the new state.
class ChainPath {
public:
    ChainPath(const TimeGrid& grid, int states, int initial_state, std::vector<Transition> transitions)
        : grid_(grid), D_(states), initial_(initial_state), transitions_(std::move(transitions)) {
        if (initial_state < 0 || initial_state >= states)
            throw InvalidArgument("initial state out of range");
        build();
    }

    const TimeGrid& grid() const noexcept { return grid_; }
    int states() const noexcept { return D_; }
    int initial_state() const noexcept { return initial_; }
    std::span<const Transition> transitions() const noexcept { return transitions_; }

    /// alpha(t_k) for k in [0, K].
    int state_at_node(int k) const noexcept { return node_states_[static_cast<std::size_t>(k)]; }

    /// Cadlag value alpha(t).
    int state_at(double t) const noexcept {
        int s = initial_;
        for (const auto& tr : transitions_) {
            if (tr.time > t) break;
            s = tr.to;
        }
        return s;
    }

    /// Left limit alpha(t-).
    int state_before(double t) const noexcept {
        int s = initial_;
        for (const auto& tr : transitions_) {
            if (tr.time >= t) break;
            s = tr.to;
        }
        return s;
    }

    /// Time spent in state i during cell k.
    double occupation(int k, int i) const noexcept { return occupation_(k, i); }

    /// Number of transitions into j during cell k.
    int arrivals(int k, int j) const noexcept { return static_cast<int>(arrivals_(k, j)); }

    /// Fraction of [t0, T] spent in state i.
    double occupation_fraction(int i) const noexcept {
        double total = 0.0;
        for (int k = 0; k < grid_.steps(); ++k) total += occupation_(k, i);
        return total / (grid_.T() - grid_.t0());
    }

    /// Cumulative intensity lambda_j(t) = sum_{i != j} lambda_ij * int_{t0}^t 1{alpha(s-) = e_i} ds.
    double cumulative_intensity(const RegimeChainSpec& spec, int j, double t) const {
        double total = 0.0;
        double from = grid_.t0();
        int s = initial_;
        for (const auto& tr : transitions_) {
            if (tr.time >= t) break;
            total += spec.intensity_into(j, s) * (tr.time - from);
            from = tr.time;
            s = tr.to;
        }
        total += spec.intensity_into(j, s) * (std::max(t, from) - from);
        return total;
    }

    /// Instantaneous intensity lambda'_j(t) = sum_{i != j} lambda_ij 1{alpha(t-) = e_i}.
    double intensity(const RegimeChainSpec& spec, int j, double t) const {
        return spec.intensity_into(j, state_before(t));
    }

    /// Phi_j(t): transitions into j up to and including t.
    int arrivals_until(int j, double t) const noexcept {
        int n = 0;
        for (const auto& tr : transitions_) {
            if (tr.time > t) break;
            if (tr.to == j) ++n;
        }
        return n;
    }

    friend bool operator==(const ChainPath& a, const ChainPath& b) {
        if (!(a.grid_ == b.grid_) || a.D_ != b.D_ || a.initial_ != b.initial_) return false;
        if (a.transitions_.size() != b.transitions_.size()) return false;
        for (std::size_t n = 0; n < a.transitions_.size(); ++n) {
            const auto &x = a.transitions_[n], &y = b.transitions_[n];
            if (x.time != y.time || x.from != y.from || x.to != y.to) return false;
        }
        return true;
    }

private:
    void build() {
        const int K = grid_.steps();
        occupation_ = CellMatrix(K, D_);
        arrivals_ = CellMatrix(K, D_);
        node_states_.assign(static_cast<std::size_t>(K) + 1, initial_);

        int state = initial_;
        double prev = grid_.t0();
        for (const auto& tr : transitions_) {
            if (tr.from != state) throw InvalidArgument("chain transition does not start from current state");
            if (tr.to < 0 || tr.to >= D_ || tr.to == tr.from)
                throw InvalidArgument("chain transition has an invalid target state");
            if (tr.time < prev || tr.time <= grid_.t0())
                throw InvalidArgument("chain transitions must be ordered and after t0");
            accumulate(state, prev, tr.time);
            arrivals_(grid_.cell_containing(tr.time), tr.to) += 1.0;
            state = tr.to;
            prev = tr.time;
        }
        accumulate(state, prev, grid_.T());

        // Node k+1 shows the state after every transition assigned to cells <= k.
        std::size_t next = 0;
        state = initial_;
        for (int k = 0; k < K; ++k) {
            while (next < transitions_.size() && grid_.cell_containing(transitions_[next].time) <= k)
                state = transitions_[next++].to;
            node_states_[static_cast<std::size_t>(k) + 1] = state;
        }
    }

    void accumulate(int state, double a, double b) {
        if (b <= a) return;
        const int K = grid_.steps();
        int k = std::clamp(grid_.node_at_or_before(a), 0, K - 1);
        for (; k < K; ++k) {
            const double lo = std::max(a, grid_.time(k));
            const double hi = std::min(b, k + 1 == K ? grid_.T() : grid_.time(k + 1));
            if (lo >= b) break;
            if (hi > lo) occupation_(k, state) += hi - lo;
        }
    }

    TimeGrid grid_;
    int D_;
    int initial_;
    std::vector<Transition> transitions_;
    std::vector<int> node_states_;
    CellMatrix occupation_;
    CellMatrix arrivals_;
};

/// Exact continuous-time sampling: exponential holding times with rate
/// -lambda_ii, next state drawn with probability lambda_ij / (-lambda_ii).
inline ChainPath sample_chain_path(const RegimeChainSpec& spec, const TimeGrid& grid, int initial_state,
                                   Engine& rng) {
    spec.check();
    if (initial_state < 0 || initial_state >= spec.states())
        throw InvalidArgument("initial state out of range");
    std::vector<Transition> transitions;
    const int D = spec.states();
    if (D > 1) {
        std::vector<double> weights(static_cast<std::size_t>(D));
        double t = grid.t0();
        int state = initial_state;
        for (;;) {
            std::exponential_distribution<double> hold(spec.exit_rate(state));
            t += hold(rng);
            if (t > grid.T()) break;
            for (int j = 0; j < D; ++j) weights[static_cast<std::size_t>(j)] = j == state ? 0.0 : spec.rate(state, j);
            std::discrete_distribution<int> pick(weights.begin(), weights.end());
            const int next = pick(rng);
            transitions.push_back({t, state, next});
            state = next;
        }
    }
    return ChainPath(grid, D, initial_state, std::move(transitions));
}

/// J^{ij}(t): number of i -> j transitions in (t0, t].
inline int jump_counts(const ChainPath& path, int i, int j, double t) {
    if (i == j) throw InvalidArgument("jump_counts needs distinct states");
    if (i < 0 || j < 0 || i >= path.states() || j >= path.states())
        throw InvalidArgument("jump_counts state out of range");
    int n = 0;
    for (const auto& tr : path.transitions()) {
        if (tr.time > t) break;
        if (tr.from == i && tr.to == j) ++n;
    }
    return n;
}

/// Per-cell increments of the compensated measure:
/// dPhi~_j,k = arrivals into j in (t_k, t_{k+1}] - sum_{i != j} lambda_ij * occupation of e_i.
inline CellMatrix compensated_chain_increments(const ChainPath& path, const RegimeChainSpec& spec) {
    if (spec.states() != path.states()) throw InvalidArgument("chain path and generator disagree on D");
    const int K = path.grid().steps();
    const int D = path.states();
    CellMatrix out(K, D);
    for (int k = 0; k < K; ++k) {
        for (int j = 0; j < D; ++j) {
            double comp = 0.0;
            for (int i = 0; i < D; ++i)
                if (i != j) comp += spec.rate(i, j) * path.occupation(k, i);
            out(k, j) = path.arrivals(k, j) - comp;
        }
    }
    return out;
}

/// Stationary law pi with pi * Lambda = 0 (Gaussian elimination on the
/// transposed system with one equation replaced by sum(pi) = 1).
inline std::vector<double> stationary_distribution(const RegimeChainSpec& spec) {
    const int D = spec.states();
    std::vector<std::vector<double>> a(static_cast<std::size_t>(D), std::vector<double>(static_cast<std::size_t>(D) + 1, 0.0));
    for (int r = 0; r < D; ++r) {
        for (int c = 0; c < D; ++c) a[r][c] = r == D - 1 ? 1.0 : spec.rate(c, r);
        a[r][D] = r == D - 1 ? 1.0 : 0.0;
    }
    for (int c = 0; c < D; ++c) {
        int piv = c;
        for (int r = c + 1; r < D; ++r)
            if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
        std::swap(a[c], a[piv]);
        for (int r = 0; r < D; ++r) {
            if (r == c) continue;
            const double f = a[r][c] / a[c][c];
            for (int q = c; q <= D; ++q) a[r][q] -= f * a[c][q];
        }
    }
    std::vector<double> pi(static_cast<std::size_t>(D));
    for (int r = 0; r < D; ++r) pi[r] = a[r][D] / a[r][r];
    return pi;
}

// =============================================================================
// Poisson random measure (finite activity)
// =============================================================================

struct Mark {
    double z;
    double weight;
};

/// Finite Levy measure nu = rate * (mark law) on finitely many nonzero marks.
class JumpSpec {
public:
    JumpSpec() = default;
    JumpSpec(double rate, std::vector<Mark> marks) : rate_(rate), marks_(std::move(marks)) {
        if (!(rate >= 0.0) || !std::isfinite(rate)) throw InvalidSpec("jump rate must be finite and >= 0");
        if (rate > 0.0 && marks_.empty()) throw InvalidSpec("positive jump rate needs at least one mark");
        double total = 0.0;
        for (const auto& mk : marks_) {
            if (!std::isfinite(mk.z) || mk.z == 0.0) throw InvalidSpec("jump marks must be finite and nonzero");
            if (!(mk.weight > 0.0)) throw InvalidSpec("jump mark weights must be positive");
            total += mk.weight;
        }
        if (!marks_.empty() && std::abs(total - 1.0) > 1e-12)
            throw InvalidSpec("jump mark weights sum to " + std::to_string(total) + ", expected 1");
    }

    static JumpSpec none() { return JumpSpec(); }

    double rate() const noexcept { return rate_; }
    std::span<const Mark> marks() const noexcept { return marks_; }
    std::size_t mark_count() const noexcept { return marks_.size(); }

    /// nu({z_n}).
    double mass(std::size_t n) const noexcept { return rate_ * marks_[n].weight; }

    /// int f(z) nu(dz), an exact finite sum.
    template <typename F>
    double integrate(F&& f) const {
        double total = 0.0;
        for (std::size_t n = 0; n < marks_.size(); ++n) total += mass(n) * f(marks_[n].z);
        return total;
    }

    friend bool operator==(const JumpSpec& a, const JumpSpec& b) {
        if (a.rate_ != b.rate_ || a.marks_.size() != b.marks_.size()) return false;
        for (std::size_t n = 0; n < a.marks_.size(); ++n)
            if (a.marks_[n].z != b.marks_[n].z || a.marks_[n].weight != b.marks_[n].weight) return false;
        return true;
    }

private:
    double rate_ = 0.0;
    std::vector<Mark> marks_;
};

template <typename F>
double jump_compensator_integral(const JumpSpec& spec, F&& f) {
    return spec.integrate(std::forward<F>(f));
}

struct JumpEvent {
    double time;
    int mark; ///< index into JumpSpec::marks()
    double z;
};

/// Realized (time, mark) events with a per-cell index.
class JumpPath {
public:
    JumpPath(const TimeGrid& grid, std::vector<JumpEvent> events) : grid_(grid), events_(std::move(events)) {
        std::sort(events_.begin(), events_.end(),
                  [](const JumpEvent& a, const JumpEvent& b) { return a.time < b.time; });
        offsets_.assign(static_cast<std::size_t>(grid_.steps()) + 1, 0);
        for (const auto& ev : events_) {
            if (!(ev.time > grid_.t0()) || ev.time > grid_.T() + 1e-12 * std::abs(grid_.T()))
                throw InvalidArgument("jump event time outside (t0, T]");
            ++offsets_[static_cast<std::size_t>(grid_.cell_containing(ev.time)) + 1];
        }
        std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
    }

    const TimeGrid& grid() const noexcept { return grid_; }
    std::span<const JumpEvent> events() const noexcept { return events_; }
    std::span<const JumpEvent> in_cell(int k) const noexcept {
        const auto b = offsets_[static_cast<std::size_t>(k)];
        const auto e = offsets_[static_cast<std::size_t>(k) + 1];
        return {events_.data() + b, e - b};
    }

    friend bool operator==(const JumpPath& a, const JumpPath& b) {
        if (!(a.grid_ == b.grid_) || a.events_.size() != b.events_.size()) return false;
        for (std::size_t n = 0; n < a.events_.size(); ++n)
            if (a.events_[n].time != b.events_[n].time || a.events_[n].mark != b.events_[n].mark) return false;
        return true;
    }

private:
    TimeGrid grid_;
    std::vector<JumpEvent> events_;
    std::vector<std::size_t> offsets_;
};

/// Event count ~ Poisson(rate * (T - t0)), times uniform on (t0, T], marks
/// i.i.d. from the mark law.
inline JumpPath sample_jump_path(const JumpSpec& spec, const TimeGrid& grid, Engine& rng) {
    std::vector<JumpEvent> events;
    if (spec.rate() > 0.0) {
        const double span = grid.T() - grid.t0();
        std::poisson_distribution<long> count(spec.rate() * span);
        const long n = count(rng);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::vector<double> weights;
        for (const auto& mk : spec.marks()) weights.push_back(mk.weight);
        std::discrete_distribution<int> pick(weights.begin(), weights.end());
        events.reserve(static_cast<std::size_t>(n));
        for (long e = 0; e < n; ++e) {
            const double t = grid.T() - unit(rng) * span;
            const int mark = pick(rng);
            events.push_back({t, mark, spec.marks()[static_cast<std::size_t>(mark)].z});
        }
    }
    return JumpPath(grid, std::move(events));
}

// =============================================================================
// Bundle
// =============================================================================

/// Chain generator and jump law shared by every path of a run.
struct NoiseSpec {
    RegimeChainSpec chain;
    JumpSpec jumps;
};

/// One path's worth of driving noise on a single grid.
struct NoiseBundle {
    std::shared_ptr<const NoiseSpec> spec;
    ChainPath chain;
    JumpPath jumps;
    std::vector<double> dW;   ///< Brownian increment per cell
    CellMatrix dPhi;          ///< compensated chain increments per cell

    const TimeGrid& grid() const noexcept { return chain.grid(); }
    int regime(int k) const noexcept { return chain.state_at_node(k); }

    friend bool operator==(const NoiseBundle& a, const NoiseBundle& b) {
        return a.chain == b.chain && a.jumps == b.jumps && a.dW == b.dW && a.dPhi == b.dPhi;
    }
};

inline NoiseBundle assemble_noise(std::shared_ptr<const NoiseSpec> spec, ChainPath chain, JumpPath jumps,
                                  std::vector<double> dW) {
    if (!(chain.grid() == jumps.grid()) || static_cast<int>(dW.size()) != chain.grid().steps())
        throw InvalidArgument("noise components live on different grids");
    CellMatrix dPhi = compensated_chain_increments(chain, spec->chain);
    return NoiseBundle{std::move(spec), std::move(chain), std::move(jumps), std::move(dW), std::move(dPhi)};
}

inline std::vector<double> sample_brownian_increments(const TimeGrid& grid, Engine& rng) {
    std::normal_distribution<double> normal(0.0, std::sqrt(grid.dt()));
    std::vector<double> dW(static_cast<std::size_t>(grid.steps()));
    for (auto& w : dW) w = normal(rng);
    return dW;
}

/// Exact-noise path `path` of the run keyed by `seed`.
inline NoiseBundle make_noise(const std::shared_ptr<const NoiseSpec>& spec, const TimeGrid& grid,
                              int initial_state, std::uint64_t seed, std::uint64_t path) {
    auto chain_rng = make_engine(seed, path, Stream::chain);
    auto jump_rng = make_engine(seed, path, Stream::jumps);
    auto w_rng = make_engine(seed, path, Stream::brownian);
    auto chain = sample_chain_path(spec->chain, grid, initial_state, chain_rng);
    auto jumps = sample_jump_path(spec->jumps, grid, jump_rng);
    auto dW = sample_brownian_increments(grid, w_rng);
    return assemble_noise(spec, std::move(chain), std::move(jumps), std::move(dW));
}

/// Initial regime drawn from `law` on the path's own stream.
inline int sample_initial_state(std::span<const double> law, std::uint64_t seed, std::uint64_t path) {
    auto rng = make_engine(seed, path, Stream::initial_state);
    std::discrete_distribution<int> pick(law.begin(), law.end());
    return pick(rng);
}

/// The same realization viewed on a grid with `factor` times fewer cells:
/// Brownian increments are summed, chain transitions and jump events are
/// re-binned. Used for common-random-number convergence studies.
inline NoiseBundle coarsen(const NoiseBundle& fine, int factor) {
    const TimeGrid coarse = fine.grid().coarsened(factor);
    std::vector<double> dW(static_cast<std::size_t>(coarse.steps()), 0.0);
    for (int k = 0; k < coarse.steps(); ++k)
        for (int f = 0; f < factor; ++f) dW[k] += fine.dW[static_cast<std::size_t>(k * factor + f)];
    std::vector<Transition> tr(fine.chain.transitions().begin(), fine.chain.transitions().end());
    ChainPath chain(coarse, fine.chain.states(), fine.chain.initial_state(), std::move(tr));
    std::vector<JumpEvent> ev(fine.jumps.events().begin(), fine.jumps.events().end());
    JumpPath jumps(coarse, std::move(ev));
    return assemble_noise(fine.spec, std::move(chain), std::move(jumps), std::move(dW));
}

} // namespace sdjr
