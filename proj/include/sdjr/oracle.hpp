#pragma once

// Exhaustive discrete scenario tree for (W, N~, Phi~, alpha) and an exact
// backward solver for the linear anticipated BSDE on it. The closed-form
// duality functional evaluated on the same tree gives the forward side; the
// two must agree up to the discretization error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "sdjr/duality.hpp"
#include "sdjr/errors.hpp"
#include "sdjr/noise.hpp"
#include "sdjr/parallel.hpp"
#include "sdjr/rng.hpp"

namespace sdjr {

inline constexpr int kMaxTreeSteps = 8;
inline constexpr double kMaxTreePaths = 3e7;

/// One joint outcome of a step: Brownian sign x jump/no jump x chain target.
struct TreeBranch {
    double prob;
    double dW;
    double dN;  ///< 1{jump} - lambda_N dt
    bool jump;
    int to;     ///< regime after the step
};

class ScenarioTree {
public:
    ScenarioTree(std::shared_ptr<const NoiseSpec> spec, const TimeGrid& grid) : spec_(std::move(spec)), grid_(grid) {
        const auto& chain = spec_->chain;
        const auto& jumps = spec_->jumps;
        D_ = chain.states();
        const int K = grid_.steps();
        const double dt = grid_.dt();
        if (K > kMaxTreeSteps)
            throw ResourceLimit("scenario tree supports at most " + std::to_string(kMaxTreeSteps) + " steps, got " +
                                std::to_string(K));
        if (jumps.rate() > 0.0 && jumps.mark_count() != 1)
            throw InvalidSpec("scenario tree needs exactly one jump mark");
        const double pj = jumps.rate() * dt;
        if (!(pj < 1.0)) throw DtTooLarge("jump probability lambda_N dt = " + std::to_string(pj) + " is not below 1");
        for (int i = 0; i < D_; ++i)
            if (!(chain.exit_rate(i) * dt < 1.0))
                throw DtTooLarge("switch probability out of state " + std::to_string(i) + " is not below 1");

        const int jump_outcomes = jumps.rate() > 0.0 ? 2 : 1;
        B_ = 2 * jump_outcomes * D_;
        paths_ = std::pow(static_cast<double>(B_), K);
        if (paths_ > kMaxTreePaths)
            throw ResourceLimit("scenario tree would have " + std::to_string(paths_) + " paths (limit 3e7)");

        const double sq = std::sqrt(dt);
        branches_.reserve(static_cast<std::size_t>(D_ * B_));
        dphi_.assign(static_cast<std::size_t>(D_ * B_ * D_), 0.0);
        for (int i = 0; i < D_; ++i) {
            for (int w = 0; w < 2; ++w) {
                for (int jn = 0; jn < jump_outcomes; ++jn) {
                    const bool jump = jn == 1;
                    const double p_jump = jump_outcomes == 1 ? 1.0 : (jump ? pj : 1.0 - pj);
                    // Targets: stay first, then the other states in increasing order.
                    for (int c = 0; c < D_; ++c) {
                        const int to = c == 0 ? i : (c <= i ? c - 1 : c);
                        const double p_chain = to == i ? 1.0 - chain.exit_rate(i) * dt : chain.rate(i, to) * dt;
                        const std::size_t slot = branches_.size();
                        branches_.push_back({0.5 * p_jump * p_chain, w == 0 ? sq : -sq,
                                             (jump ? 1.0 : 0.0) - pj, jump, to});
                        for (int j = 0; j < D_; ++j) {
                            double v = j == i ? 0.0 : -chain.rate(i, j) * dt;
                            if (j == to && to != i) v += 1.0;
                            dphi_[slot * D_ + j] = v;
                        }
                    }
                }
            }
        }
        step_.assign(static_cast<std::size_t>(D_ * D_), 0.0);
        for (int i = 0; i < D_; ++i)
            for (int j = 0; j < D_; ++j) step_[i * D_ + j] = (i == j ? 1.0 : 0.0) + chain.rate(i, j) * dt;
    }

    const TimeGrid& grid() const noexcept { return grid_; }
    const NoiseSpec& spec() const noexcept { return *spec_; }
    const std::shared_ptr<const NoiseSpec>& spec_ptr() const noexcept { return spec_; }
    int states() const noexcept { return D_; }
    int branching() const noexcept { return B_; }
    double path_count() const noexcept { return paths_; }
    double mark() const noexcept { return spec_->jumps.mark_count() ? spec_->jumps.marks()[0].z : 0.0; }

    std::span<const TreeBranch> branches(int regime) const noexcept {
        return {branches_.data() + static_cast<std::size_t>(regime) * B_, static_cast<std::size_t>(B_)};
    }
    /// Delta Phi~_j on branch c out of `regime`.
    double dphi(int regime, int c, int j) const noexcept {
        return dphi_[(static_cast<std::size_t>(regime) * B_ + c) * D_ + j];
    }
    /// One-step transition matrix I + Lambda dt of the tree's chain.
    double step_probability(int i, int j) const noexcept { return step_[i * D_ + j]; }

    /// Visits every root-to-leaf path in lexicographic branch order with its
    /// probability and the branch index chosen at each step.
    template <typename F>
    void for_each_path(int initial, F&& f) const {
        std::vector<int> choice(static_cast<std::size_t>(grid_.steps()));
        walk(0, initial, 1.0, choice, f);
    }

private:
    template <typename F>
    void walk(int k, int regime, double prob, std::vector<int>& choice, F& f) const {
        if (k == grid_.steps()) {
            f(prob, std::span<const int>(choice));
            return;
        }
        const auto br = branches(regime);
        for (int c = 0; c < B_; ++c) {
            choice[static_cast<std::size_t>(k)] = c;
            walk(k + 1, br[c].to, prob * br[c].prob, choice, f);
        }
    }

    std::shared_ptr<const NoiseSpec> spec_;
    TimeGrid grid_;
    int D_ = 1;
    int B_ = 1;
    double paths_ = 1.0;
    std::vector<TreeBranch> branches_;
    std::vector<double> dphi_;
    std::vector<double> step_;
};

inline ScenarioTree build_tree(const RegimeChainSpec& chain, const JumpSpec& jumps, const TimeGrid& grid) {
    return ScenarioTree(std::make_shared<const NoiseSpec>(NoiseSpec{chain, jumps}), grid);
}

namespace detail {

/// Linear data tabulated at tree nodes 0..K-1 and terminal data at K..K+m.
/// Exposes the same interface as DirectLinearSource.
struct LinearTable {
    int D = 1;
    int K = 0;
    int m = 0;
    std::vector<double> b_, b_bar_, sigma_, sigma_bar_, eta_, eta_bar_, l_;
    std::vector<double> gamma_, gamma_bar_;
    std::vector<double> xi_, psi_, zeta_, theta_;

    LinearTable(const LinearABSDEData& d, const TerminalData& term, const ScenarioTree& tree)
        : D(tree.states()), K(tree.grid().steps()), m(tree.grid().delay_steps()) {
        const auto& g = tree.grid();
        const double z = tree.mark();
        const bool has_mark = tree.spec().jumps.mark_count() > 0;
        for (int k = 0; k < K; ++k) {
            const double t = g.time(k);
            for (int a = 0; a < D; ++a) {
                b_.push_back(d.b(t, a));
                b_bar_.push_back(d.b_bar(t, a));
                sigma_.push_back(d.sigma(t, a));
                sigma_bar_.push_back(d.sigma_bar(t, a));
                eta_.push_back(has_mark ? d.eta(t, a, z) : 0.0);
                eta_bar_.push_back(has_mark ? d.eta_bar(t, a, z) : 0.0);
                l_.push_back(d.l(t, a));
                for (int j = 0; j < D; ++j) {
                    gamma_.push_back(d.gamma(t, a, j));
                    gamma_bar_.push_back(d.gamma_bar(t, a, j));
                }
            }
        }
        for (int k = K; k <= K + m; ++k) {
            const double t = g.time(k);
            xi_.push_back(term.xi(t));
            psi_.push_back(term.psi(t));
            zeta_.push_back(has_mark ? term.zeta(t, z) : 0.0);
            for (int j = 0; j < D; ++j) theta_.push_back(term.theta(t, j));
        }
        auto finite = [](const std::vector<double>& v) {
            return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
        };
        for (const auto* v : {&b_, &b_bar_, &sigma_, &sigma_bar_, &eta_, &eta_bar_, &l_, &gamma_, &gamma_bar_})
            if (!finite(*v)) throw InvalidSpec("linear coefficients are not finite on the tree grid");
        for (const auto* v : {&xi_, &psi_, &zeta_, &theta_})
            if (!finite(*v)) throw InvalidSpec("terminal data is not finite on [T, T + delta]");
    }

    std::size_t at(int k, int a) const noexcept { return static_cast<std::size_t>(k) * D + a; }

    double b(int k, int a) const noexcept { return b_[at(k, a)]; }
    double sigma(int k, int a) const noexcept { return sigma_[at(k, a)]; }
    double eta(int k, int a) const noexcept { return eta_[at(k, a)]; }
    double gamma(int k, int a, int j) const noexcept { return gamma_[at(k, a) * D + j]; }

    // Source interface for duality_functional (the mark argument is the single tree mark).
    double l(int k, int a) const noexcept { return l_[at(k, a)]; }
    double b_bar(int k, int a) const noexcept { return b_bar_[at(k, a)]; }
    double sigma_bar(int k, int a) const noexcept { return sigma_bar_[at(k, a)]; }
    double eta_bar(int k, int a, double = 0.0) const noexcept { return eta_bar_[at(k, a)]; }
    double gamma_bar(int k, int a, int j) const noexcept { return gamma_bar_[at(k, a) * D + j]; }
    double xi(int k) const noexcept { return xi_[static_cast<std::size_t>(k - K)]; }
    double psi(int k) const noexcept { return psi_[static_cast<std::size_t>(k - K)]; }
    double zeta(int k, double = 0.0) const noexcept { return zeta_[static_cast<std::size_t>(k - K)]; }
    double theta(int k, int j) const noexcept { return theta_[static_cast<std::size_t>(k - K) * D + j]; }
};

/// future[h][i*D + j] = E[lambda'_j(t_{K+h}) | alpha(t_K) = i] under the tree chain.
inline std::vector<std::vector<double>> future_intensity(const ScenarioTree& tree, int horizon) {
    const int D = tree.states();
    const auto& chain = tree.spec().chain;
    std::vector<double> lam(static_cast<std::size_t>(D * D));
    for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) lam[i * D + j] = chain.intensity_into(j, i);
    std::vector<std::vector<double>> out{lam};
    for (int h = 1; h <= horizon; ++h) {
        const auto& prev = out.back();
        std::vector<double> next(static_cast<std::size_t>(D * D), 0.0);
        for (int i = 0; i < D; ++i)
            for (int j = 0; j < D; ++j)
                for (int r = 0; r < D; ++r) next[i * D + j] += tree.step_probability(i, r) * prev[r * D + j];
        out.push_back(std::move(next));
    }
    return out;
}

/// Prefix depth at which subtrees are handed to workers; depends only on the
/// tree shape so the summation order is fixed.
inline int split_depth(const ScenarioTree& tree) {
    int d = 0;
    double n = 1.0;
    while (d < tree.grid().steps() && n < 64.0) {
        n *= tree.branching();
        ++d;
    }
    return d;
}

inline std::uint64_t ipow(std::uint64_t b, int e) {
    std::uint64_t r = 1;
    while (e-- > 0) r *= b;
    return r;
}

} // namespace detail

// -----------------------------------------------------------------------------
// Forward side
// -----------------------------------------------------------------------------

/// Exact tree expectation of the duality functional. The dual equation is
/// stepped with the tree increments; lambda'_j at nodes beyond T is replaced
/// by its conditional expectation given the leaf.
inline double evaluate_duality_on_tree(const LinearABSDEData& data, const TerminalData& terminal,
                                       const ScenarioTree& tree, int initial_regime, const Execution& exec = {}) {
    const int D = tree.states();
    if (initial_regime < 0 || initial_regime >= D) throw InvalidArgument("initial regime out of range");
    const detail::LinearTable tab(data, terminal, tree);
    const auto& g = tree.grid();
    const int K = g.steps();
    const int m = g.delay_steps();
    const double dt = g.dt();
    const int B = tree.branching();
    const auto future = detail::future_intensity(tree, m);
    const auto& jumps = tree.spec().jumps;

    struct State {
        std::vector<double> x;
        std::vector<int> a;
    };
    auto step = [&](State& s, int k, int c) {
        const auto& br = tree.branches(s.a[k])[c];
        const int a = s.a[k];
        const double x = s.x[k];
        const int q = k - m;
        const double xl = q >= 0 ? s.x[q] : 0.0;
        const int aq = q >= 0 ? s.a[q] : 0;
        double inc = (tab.b(k, a) * x + (q >= 0 ? tab.b_bar(q, aq) * xl : 0.0)) * dt;
        inc += (tab.sigma(k, a) * x + (q >= 0 ? tab.sigma_bar(q, aq) * xl : 0.0)) * br.dW;
        inc += (tab.eta(k, a) * x + (q >= 0 ? tab.eta_bar(q, aq) * xl : 0.0)) * br.dN;
        for (int j = 0; j < D; ++j)
            inc += (tab.gamma(k, a, j) * x + (q >= 0 ? tab.gamma_bar(q, aq, j) * xl : 0.0)) * tree.dphi(a, c, j);
        s.x[k + 1] = x + inc;
        s.a[k + 1] = br.to;
        return br.prob;
    };
    auto leaf_value = [&](const State& s) {
        const int aK = s.a[K];
        return duality_functional(
            tab, jumps, K, m, dt, D, [&](int k) { return s.x[k]; }, [&](int k) { return s.a[k]; },
            [&](int k, int j) { return future[static_cast<std::size_t>(k - K)][aK * D + j]; });
    };

    const int d = detail::split_depth(tree);
    const std::uint64_t tasks = detail::ipow(static_cast<std::uint64_t>(B), d);
    std::vector<double> partial(tasks, 0.0);
    parallel_for(tasks, exec, [&](std::size_t p) {
        State s{std::vector<double>(static_cast<std::size_t>(K) + 1, 0.0),
                std::vector<int>(static_cast<std::size_t>(K) + 1, initial_regime)};
        s.x[0] = 1.0;
        double prob = 1.0;
        std::uint64_t rest = p;
        for (int k = 0; k < d; ++k) {
            const std::uint64_t place = detail::ipow(static_cast<std::uint64_t>(B), d - 1 - k);
            const int c = static_cast<int>(rest / place);
            rest %= place;
            prob *= step(s, k, c);
        }
        double acc = 0.0;
        auto dfs = [&](auto&& self, int k, double pr) -> void {
            if (k == K) {
                acc += pr * leaf_value(s);
                return;
            }
            for (int c = 0; c < B; ++c) {
                const double pc = step(s, k, c);
                self(self, k + 1, pr * pc);
            }
        };
        dfs(dfs, d, prob);
        partial[p] = acc;
    });
    double total = 0.0;
    for (double v : partial) total += v;
    return total;
}

/// Monte Carlo noise with the tree's cell-Bernoulli dynamics on `grid`
/// (same dt as the tree, any number of steps): transitions and jumps happen
/// at the right end of a cell, Brownian increments are +-sqrt(dt).
inline NoiseBundle sample_tree_noise(const ScenarioTree& tree, const TimeGrid& grid, int initial_regime,
                                     std::uint64_t seed, std::uint64_t path) {
    if (grid.dt() != tree.grid().dt() || grid.t0() != tree.grid().t0())
        throw InvalidArgument("tree noise grid must share t0 and dt with the tree");
    auto chain_rng = make_engine(seed, path, Stream::chain);
    auto jump_rng = make_engine(seed, path, Stream::jumps);
    auto w_rng = make_engine(seed, path, Stream::brownian);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    const auto& chain = tree.spec().chain;
    const double dt = grid.dt();
    const double pj = tree.spec().jumps.rate() * dt;
    std::vector<Transition> transitions;
    std::vector<JumpEvent> events;
    std::vector<double> dW(static_cast<std::size_t>(grid.steps()));
    int state = initial_regime;
    for (int k = 0; k < grid.steps(); ++k) {
        const double right = k + 1 == grid.steps() ? grid.T() : grid.time(k + 1);
        dW[static_cast<std::size_t>(k)] = coin(w_rng) ? std::sqrt(dt) : -std::sqrt(dt);
        if (pj > 0.0 && unit(jump_rng) < pj) events.push_back({right, 0, tree.mark()});
        double u = unit(chain_rng);
        int to = state;
        for (int j = 0; j < chain.states(); ++j) {
            if (j == state) continue;
            const double p = chain.rate(state, j) * dt;
            if (u < p) {
                to = j;
                break;
            }
            u -= p;
        }
        if (to != state) {
            transitions.push_back({right, state, to});
            state = to;
        }
    }
    ChainPath cp(grid, chain.states(), initial_regime, std::move(transitions));
    JumpPath jp(grid, std::move(events));
    return assemble_noise(tree.spec_ptr(), std::move(cp), std::move(jp), std::move(dW));
}

// -----------------------------------------------------------------------------
// Backward side
// -----------------------------------------------------------------------------

/// Which intensity multiplies E[V^j(s + delta) | F_s] in the anticipated
/// switching term of the driver.
enum class AnticipatedIntensity {
    /// E[V^j(s + delta) lambda'_j(s + delta) | F_s]: the form the duality
    /// formula actually solves.
    conditional,
    /// lambda'_j(s) E[V^j(s + delta) | F_s], the driver taken at face value.
    /// Kept for comparison; it does not match the forward side.
    current,
};

struct BackwardOptions {
    AnticipatedIntensity intensity = AnticipatedIntensity::conditional;
    bool store_nodes = false; ///< keep (Y, Z, Q, V) at every node (small trees only)
};

struct NodeValues {
    double Y = 0.0;
    double Z = 0.0;
    double Q = 0.0;
    std::vector<double> V;
};

class BackwardSolution {
public:
    NodeValues root;
    double max_orthogonality_residual = 0.0;
    double min_implicit_denominator = 1.0;

    bool stores_nodes() const noexcept { return !levels_.empty(); }

    /// Node `index` of level k; children of node n at level k are n*B + c.
    NodeValues node(int k, std::uint64_t index) const {
        if (!stores_nodes()) throw InvalidArgument("backward solution was computed without node storage");
        const std::size_t S = static_cast<std::size_t>(3 + D_);
        const auto& lv = levels_.at(static_cast<std::size_t>(k));
        if (index * S >= lv.size()) throw InvalidArgument("tree node index out of range");
        const double* p = lv.data() + index * S;
        return {p[0], p[1], p[2], std::vector<double>(p + 3, p + S)};
    }

    std::uint64_t level_size(int k) const { return levels_.at(static_cast<std::size_t>(k)).size() / (3 + D_); }

private:
    friend BackwardSolution solve_absde_backward(const ScenarioTree&, const LinearABSDEData&, const TerminalData&,
                                                 int, const BackwardOptions&, const Execution&);
    int D_ = 1;
    std::vector<std::vector<double>> levels_;
};

inline constexpr double kMaxStoredNodes = 4.2e6;

/// Exact backward induction on the tree: implicit in Y, explicit in the
/// projection-extracted (Z, Q, V). Every node carries the conditional
/// expectations E[(Y, Z, Q, V, V lambda')_{k+h} | node] for h = 0..m so the
/// anticipated terms are exact iterated sums.
inline BackwardSolution solve_absde_backward(const ScenarioTree& tree, const LinearABSDEData& data,
                                             const TerminalData& terminal, int initial_regime,
                                             const BackwardOptions& options = {}, const Execution& exec = {}) {
    const int D = tree.states();
    if (initial_regime < 0 || initial_regime >= D) throw InvalidArgument("initial regime out of range");
    const detail::LinearTable tab(data, terminal, tree);
    const auto& g = tree.grid();
    const int K = g.steps();
    const int m = g.delay_steps();
    const double dt = g.dt();
    const int B = tree.branching();
    const double lamN = tree.spec().jumps.rate();
    const double varN = lamN * dt * (1.0 - lamN * dt);
    const auto& chain = tree.spec().chain;
    const auto future = detail::future_intensity(tree, m);

    // Per-node array: (m+1) blocks of [Y, Z, Q, V_0..V_{D-1}, VL_0..VL_{D-1}].
    const std::size_t S = static_cast<std::size_t>(3 + 2 * D);
    const std::size_t A = S * static_cast<std::size_t>(m + 1);
    const std::size_t NS = static_cast<std::size_t>(3 + D);

    BackwardSolution sol;
    sol.D_ = D;
    if (options.store_nodes) {
        double total = 0.0;
        for (int k = 0; k <= K; ++k) total += std::pow(static_cast<double>(B), k);
        if (total > kMaxStoredNodes) throw ResourceLimit("tree too large to store every node");
        for (int k = 0; k <= K; ++k) sol.levels_.emplace_back(detail::ipow(B, k) * NS, 0.0);
    }

    // Leaves depend on the regime only.
    std::vector<std::vector<double>> leaf(static_cast<std::size_t>(D), std::vector<double>(A));
    for (int a = 0; a < D; ++a) {
        for (int h = 0; h <= m; ++h) {
            double* v = leaf[a].data() + S * h;
            const int k = K + h;
            v[0] = tab.xi(k);
            v[1] = tab.psi(k);
            v[2] = tab.zeta(k);
            for (int j = 0; j < D; ++j) {
                v[3 + j] = tab.theta(k, j);
                v[3 + D + j] = tab.theta(k, j) * future[static_cast<std::size_t>(h)][a * D + j];
            }
        }
    }

    auto store = [&](int k, std::uint64_t index, const double* v) {
        if (!options.store_nodes) return;
        std::copy(v, v + NS, sol.levels_[static_cast<std::size_t>(k)].data() + index * NS);
    };

    struct Stats {
        double orth = 0.0;
        double denom = 1.0;
    };

    // children: B consecutive arrays of size A. Writes the node's array into out.
    auto combine = [&](int k, int a, const double* children, double* out, Stats& st) {
        const auto br = tree.branches(a);
        double EY = 0.0, Zs = 0.0, Qs = 0.0;
        double Vs[64] = {};
        for (int c = 0; c < B; ++c) {
            const double y = children[c * A];
            const double p = br[c].prob;
            EY += p * y;
            Zs += p * y * br[c].dW;
            Qs += p * y * br[c].dN;
            for (int j = 0; j < D; ++j) Vs[j] += p * y * tree.dphi(a, c, j);
        }
        const double Z = Zs / dt;
        const double Q = varN > 0.0 ? Qs / varN : 0.0;
        double V[64] = {};
        for (int j = 0; j < D; ++j) {
            const double lam = chain.intensity_into(j, a) * dt;
            V[j] = j == a ? 0.0 : Vs[j] / (lam * (1.0 - lam));
        }
        double orth = 0.0;
        for (int c = 0; c < B; ++c) {
            double r = children[c * A] - EY - Z * br[c].dW - Q * br[c].dN;
            for (int j = 0; j < D; ++j) r -= V[j] * tree.dphi(a, c, j);
            orth += br[c].prob * r;
        }
        st.orth = std::max(st.orth, std::abs(orth));

        // Anticipated blocks h = 1..m are child blocks h-1.
        for (std::size_t h = 1; h <= static_cast<std::size_t>(m); ++h) {
            double* o = out + S * h;
            std::fill(o, o + S, 0.0);
            for (int c = 0; c < B; ++c) {
                const double* ch = children + c * A + S * (h - 1);
                for (std::size_t e = 0; e < S; ++e) o[e] += br[c].prob * ch[e];
            }
        }
        double lamj[64];
        for (int j = 0; j < D; ++j) lamj[j] = chain.intensity_into(j, a);

        double drive = tab.sigma(k, a) * Z + lamN * tab.eta(k, a) * Q + tab.l(k, a);
        for (int j = 0; j < D; ++j) drive += lamj[j] * tab.gamma(k, a, j) * V[j];
        double denom = 1.0 - tab.b(k, a) * dt;
        if (m > 0) {
            const double* e = out + S * m;
            drive += tab.b_bar(k, a) * e[0] + tab.sigma_bar(k, a) * e[1] + lamN * tab.eta_bar(k, a) * e[2];
            for (int j = 0; j < D; ++j) {
                const double ant = options.intensity == AnticipatedIntensity::conditional ? e[3 + D + j]
                                                                                         : lamj[j] * e[3 + j];
                drive += tab.gamma_bar(k, a, j) * ant;
            }
        } else {
            // Anticipated values are the node's own; b_bar joins the implicit part.
            denom -= tab.b_bar(k, a) * dt;
            drive += tab.sigma_bar(k, a) * Z + lamN * tab.eta_bar(k, a) * Q;
            for (int j = 0; j < D; ++j) drive += tab.gamma_bar(k, a, j) * lamj[j] * V[j];
        }
        st.denom = std::min(st.denom, denom);
        if (!(denom > 0.0))
            throw DtTooLarge("implicit backward step loses positivity (1 - b dt = " + std::to_string(denom) + ")");
        double* o = out;
        o[0] = (EY + dt * drive) / denom;
        o[1] = Z;
        o[2] = Q;
        for (int j = 0; j < D; ++j) {
            o[3 + j] = V[j];
            o[3 + D + j] = V[j] * lamj[j];
        }
        if (!std::isfinite(o[0])) throw NumericalBlowup("backward value is not finite", k);
    };

    if (D > 64) throw InvalidArgument("backward solver supports at most 64 regimes");

    // Subtree solve below the split depth; one buffer of B arrays per level.
    const int d = detail::split_depth(tree);
    const std::uint64_t tasks = detail::ipow(static_cast<std::uint64_t>(B), d);
    std::vector<double> task_out(tasks * A);
    std::vector<Stats> task_stats(tasks);
    std::vector<int> task_regime(tasks);
    for (std::uint64_t p = 0; p < tasks; ++p) {
        int a = initial_regime;
        for (int k = 0; k < d; ++k) {
            const std::uint64_t place = detail::ipow(static_cast<std::uint64_t>(B), d - 1 - k);
            a = tree.branches(a)[static_cast<int>((p / place) % B)].to;
        }
        task_regime[p] = a;
    }

    parallel_for(tasks, exec, [&](std::size_t p) {
        std::vector<std::vector<double>> buf(static_cast<std::size_t>(K + 1), std::vector<double>(B * A));
        Stats st;
        auto solve = [&](auto&& self, int k, int a, std::uint64_t index, double* out) -> void {
            if (k == K) {
                std::copy(leaf[a].begin(), leaf[a].end(), out);
                store(k, index, out);
                return;
            }
            double* children = buf[static_cast<std::size_t>(k)].data();
            const auto br = tree.branches(a);
            for (int c = 0; c < B; ++c)
                self(self, k + 1, br[c].to, index * B + c, children + c * A);
            combine(k, a, children, out, st);
            store(k, index, out);
        };
        solve(solve, d, task_regime[p], p, task_out.data() + p * A);
        task_stats[p] = st;
    });

    Stats top;
    for (const auto& st : task_stats) {
        top.orth = std::max(top.orth, st.orth);
        top.denom = std::min(top.denom, st.denom);
    }
    std::vector<double> root(A);
    auto upper = [&](auto&& self, int k, int a, std::uint64_t index, double* out) -> void {
        if (k == d) {
            std::copy_n(task_out.data() + index * A, A, out);
            return;
        }
        std::vector<double> children(B * A);
        const auto br = tree.branches(a);
        for (int c = 0; c < B; ++c) self(self, k + 1, br[c].to, index * B + c, children.data() + c * A);
        combine(k, a, children.data(), out, top);
        store(k, index, out);
    };
    upper(upper, 0, initial_regime, 0, root.data());

    sol.root = {root[0], root[1], root[2], std::vector<double>(root.begin() + 3, root.begin() + 3 + D)};
    sol.max_orthogonality_residual = top.orth;
    sol.min_implicit_denominator = top.denom;
    return sol;
}

struct GapReport {
    double y_forward = 0.0;
    double y_backward = 0.0;
    double gap = 0.0;
    int K = 0;
    double dt = 0.0;
    double paths = 0.0;
};

inline GapReport duality_gap(const ScenarioTree& tree, const LinearABSDEData& data, const TerminalData& terminal,
                             int initial_regime, const BackwardOptions& options = {}, const Execution& exec = {}) {
    GapReport r;
    r.y_forward = evaluate_duality_on_tree(data, terminal, tree, initial_regime, exec);
    r.y_backward = solve_absde_backward(tree, data, terminal, initial_regime, options, exec).root.Y;
    r.gap = std::abs(r.y_forward - r.y_backward);
    r.K = tree.grid().steps();
    r.dt = tree.grid().dt();
    r.paths = tree.path_count();
    return r;
}

} // namespace sdjr
