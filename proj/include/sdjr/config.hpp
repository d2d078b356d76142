#pragma once

// Scenario files: JSON with a fixed schema (see README). Coefficients are
// built from named presets; unknown keys are rejected with their key path.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdjr/checks.hpp"
#include "sdjr/duality.hpp"
#include "sdjr/errors.hpp"
#include "sdjr/noise.hpp"
#include "sdjr/oracle.hpp"
#include "sdjr/sdde.hpp"

namespace sdjr {

using Json = nlohmann::json;

/// One additive coefficient term, f(t, x, y, regime) = weight(regime) * factor.
struct CoefficientTerm {
    enum class Factor { one, x, lag };
    Factor factor = Factor::one;
    std::vector<double> values; ///< one entry (all regimes) or one per regime

    double weight(int regime) const { return values.size() == 1 ? values[0] : values[static_cast<std::size_t>(regime)]; }
    double operator()(double x, double y, int regime) const {
        const double w = weight(regime);
        switch (factor) {
        case Factor::x: return w * x;
        case Factor::lag: return w * y;
        default: return w;
        }
    }
};

using CoefficientSum = std::vector<CoefficientTerm>;

struct ModelConfig {
    double x0 = 1.0;
    double lipschitz_C = 1.0;
    CoefficientSum drift, diffusion, jump, switching;

    SDDECoefficients coefficients() const {
        auto eval = [](const CoefficientSum& s, double x, double y, int a) {
            double v = 0.0;
            for (const auto& t : s) v += t(x, y, a);
            return v;
        };
        return {[d = drift, eval](double, double x, double y, int a) { return eval(d, x, y, a); },
                [d = diffusion, eval](double, double x, double y, int a) { return eval(d, x, y, a); },
                [d = jump, eval](double, double x, double y, int a, double) { return eval(d, x, y, a); },
                [d = switching, eval](double, double x, double y, int a, int) { return eval(d, x, y, a); },
                lipschitz_C};
    }
};

struct ScenarioConfig {
    Json effective;                ///< canonical config after defaults and overrides
    std::shared_ptr<const NoiseSpec> noise;
    int initial_regime = 0;
    double t0 = 0.0, T = 1.0;
    int K = 64;
    double delta = 0.0;
    double L = 1.0;
    ModelConfig model;
    std::optional<ModelConfig> model_b;
    LinearABSDEData linear = LinearABSDEData::zero();
    TerminalData terminal = TerminalData::constants(1.0, 0.0, 0.0, 0.0);
    std::string test_function = "square";
    std::vector<double> regime_values;
    std::vector<int> refinements{1, 2, 4};
    std::uint64_t seed = 0;
    std::uint64_t n_paths = 1000;
    double tol = 1e-8;
    int max_iter = 50;
    unsigned workers = 1;
    AnticipatedIntensity intensity = AnticipatedIntensity::conditional;
    std::string prefix;

    TimeGrid grid() const {
        const TimeGrid base(t0, T, K);
        return TimeGrid(t0, T, K, aligned_delay_steps(delta, base.dt()));
    }
    DelayFunctions delays() const { return DelayFunctions::uniform(delta, L); }
    TestFunction test() const {
        if (test_function == "identity") return TestFunction::identity();
        if (test_function == "regime-values") return TestFunction::regime_values(regime_values);
        return TestFunction::square();
    }
};

namespace detail {

inline void reject_unknown(const Json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw InvalidSpec(path + ": expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* a : allowed) known = known || it.key() == a;
        if (!known) throw InvalidSpec(path + "." + it.key() + ": unknown key");
    }
}

inline double number(const Json& obj, const std::string& path, const char* key, double fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number()) throw InvalidSpec(path + "." + key + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw InvalidSpec(path + "." + key + ": must be finite");
    return d;
}

inline std::int64_t integer(const Json& obj, const std::string& path, const char* key, std::int64_t fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number_integer()) throw InvalidSpec(path + "." + key + ": expected an integer");
    return v.get<std::int64_t>();
}

inline std::vector<double> numbers(const Json& v, const std::string& path) {
    if (!v.is_array()) throw InvalidSpec(path + ": expected an array of numbers");
    std::vector<double> out;
    for (std::size_t n = 0; n < v.size(); ++n) {
        if (!v[n].is_number()) throw InvalidSpec(path + "[" + std::to_string(n) + "]: expected a number");
        out.push_back(v[n].get<double>());
    }
    return out;
}

inline CoefficientTerm parse_term(const Json& v, const std::string& path, int D) {
    CoefficientTerm t;
    if (v.is_number()) {
        t.values = {v.get<double>()};
        return t;
    }
    if (!v.is_object() || !v.contains("preset") || !v.at("preset").is_string())
        throw InvalidSpec(path + ": expected a number or an object with a \"preset\"");
    const std::string preset = v.at("preset").get<std::string>();
    if (preset == "constant") {
        reject_unknown(v, path, {"preset", "value"});
        t.values = {number(v, path, "value", 0.0)};
    } else if (preset == "linear-in-x" || preset == "linear-in-lag") {
        reject_unknown(v, path, {"preset", "coef"});
        t.factor = preset == "linear-in-x" ? CoefficientTerm::Factor::x : CoefficientTerm::Factor::lag;
        t.values = {number(v, path, "coef", 0.0)};
    } else if (preset == "regime-table") {
        reject_unknown(v, path, {"preset", "values", "of"});
        if (!v.contains("values")) throw InvalidSpec(path + ".values: required for regime-table");
        t.values = numbers(v.at("values"), path + ".values");
        if (static_cast<int>(t.values.size()) != D)
            throw InvalidSpec(path + ".values: expected " + std::to_string(D) + " entries (one per regime)");
        const std::string of = v.value("of", std::string("one"));
        if (of == "x") t.factor = CoefficientTerm::Factor::x;
        else if (of == "lag") t.factor = CoefficientTerm::Factor::lag;
        else if (of != "one") throw InvalidSpec(path + ".of: expected \"one\", \"x\" or \"lag\"");
    } else {
        throw InvalidSpec(path + ".preset: unknown preset \"" + preset + "\"");
    }
    for (double w : t.values)
        if (!std::isfinite(w)) throw InvalidSpec(path + ": coefficient values must be finite");
    return t;
}

inline CoefficientSum parse_sum(const Json& obj, const std::string& path, const char* key, int D) {
    if (!obj.contains(key)) return {};
    const auto& v = obj.at(key);
    CoefficientSum s;
    if (v.is_array()) {
        for (std::size_t n = 0; n < v.size(); ++n)
            s.push_back(parse_term(v[n], path + "." + key + "[" + std::to_string(n) + "]", D));
    } else {
        s.push_back(parse_term(v, path + "." + key, D));
    }
    return s;
}

inline ModelConfig parse_model(const Json& v, const std::string& path, int D) {
    reject_unknown(v, path, {"x0", "lipschitz_C", "drift", "diffusion", "jump", "switching"});
    ModelConfig m;
    m.x0 = number(v, path, "x0", 1.0);
    m.lipschitz_C = number(v, path, "lipschitz_C", 1.0);
    if (!(m.lipschitz_C > 0.0)) throw InvalidSpec(path + ".lipschitz_C: must be positive");
    m.drift = parse_sum(v, path, "drift", D);
    m.diffusion = parse_sum(v, path, "diffusion", D);
    m.jump = parse_sum(v, path, "jump", D);
    m.switching = parse_sum(v, path, "switching", D);
    return m;
}

/// Regime-dependent constant of the linear driver: a number, a constant
/// preset or a regime-table.
inline std::vector<double> parse_regime_constant(const Json& obj, const std::string& path, const char* key, int D) {
    if (!obj.contains(key)) return std::vector<double>(static_cast<std::size_t>(D), 0.0);
    const CoefficientTerm t = parse_term(obj.at(key), path + "." + key, D);
    if (t.factor != CoefficientTerm::Factor::one)
        throw InvalidSpec(path + "." + key + ": linear driver coefficients must be constants or regime tables");
    std::vector<double> out(static_cast<std::size_t>(D));
    for (int a = 0; a < D; ++a) out[static_cast<std::size_t>(a)] = t.weight(a);
    return out;
}

inline LinearABSDEData parse_linear(const Json& v, const std::string& path, int D) {
    reject_unknown(v, path, {"b", "b_bar", "sigma", "sigma_bar", "eta", "eta_bar", "gamma", "gamma_bar", "l"});
    auto r = [&](const char* key) { return parse_regime_constant(v, path, key, D); };
    const auto b = r("b"), bb = r("b_bar"), s = r("sigma"), sb = r("sigma_bar"), e = r("eta"), eb = r("eta_bar"),
               g = r("gamma"), gb = r("gamma_bar"), l = r("l");
    double B = 0.0;
    for (const auto* tab : {&b, &bb, &s, &sb, &e, &eb, &g, &gb, &l})
        for (double x : *tab) B = std::max(B, std::abs(x));
    auto fn = [](std::vector<double> t) { return [t](double, int a) { return t[static_cast<std::size_t>(a)]; }; };
    auto mk = [](std::vector<double> t) {
        return [t](double, int a, double) { return t[static_cast<std::size_t>(a)]; };
    };
    auto vec = [](std::vector<double> t) { return [t](double, int a, int) { return t[static_cast<std::size_t>(a)]; }; };
    return {fn(b), fn(bb), fn(s), fn(sb), mk(e), mk(eb), vec(g), vec(gb), fn(l), B};
}

inline std::pair<int, int> line_column(const std::string& text, std::size_t byte) {
    int line = 1, col = 1;
    for (std::size_t n = 0; n < byte && n < text.size(); ++n) {
        if (text[n] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

} // namespace detail

/// Builds and validates a scenario from parsed JSON.
inline ScenarioConfig config_from_json(const Json& root) {
    using namespace detail;
    reject_unknown(root, "config",
                   {"chain", "jumps", "grid", "delay", "model", "model_b", "linear", "terminal", "checks", "run",
                    "output"});
    ScenarioConfig c;

    // chain
    std::vector<std::vector<double>> gen{{0.0}};
    if (root.contains("chain")) {
        const auto& ch = root.at("chain");
        reject_unknown(ch, "config.chain", {"generator", "initial_regime"});
        if (ch.contains("generator")) {
            const auto& rows = ch.at("generator");
            if (!rows.is_array() || rows.empty()) throw InvalidSpec("config.chain.generator: expected a matrix");
            gen.clear();
            for (std::size_t i = 0; i < rows.size(); ++i)
                gen.push_back(numbers(rows[i], "config.chain.generator[" + std::to_string(i) + "]"));
        }
        c.initial_regime = static_cast<int>(integer(ch, "config.chain", "initial_regime", 0));
    }
    RegimeChainSpec chain(gen);
    const int D = chain.states();
    if (c.initial_regime < 0 || c.initial_regime >= D)
        throw InvalidSpec("config.chain.initial_regime: out of range");

    // jumps
    JumpSpec jumps;
    if (root.contains("jumps")) {
        const auto& j = root.at("jumps");
        reject_unknown(j, "config.jumps", {"rate", "marks", "weights"});
        const double rate = number(j, "config.jumps", "rate", 0.0);
        std::vector<double> z = j.contains("marks") ? numbers(j.at("marks"), "config.jumps.marks") : std::vector<double>{};
        std::vector<double> w = j.contains("weights") ? numbers(j.at("weights"), "config.jumps.weights")
                                                      : std::vector<double>(z.size(), z.empty() ? 0.0 : 1.0 / z.size());
        if (w.size() != z.size()) throw InvalidSpec("config.jumps.weights: expected one weight per mark");
        std::vector<Mark> marks;
        for (std::size_t n = 0; n < z.size(); ++n) marks.push_back({z[n], w[n]});
        if (rate > 0.0 || !marks.empty()) jumps = JumpSpec(rate, std::move(marks));
    }
    c.noise = std::make_shared<const NoiseSpec>(NoiseSpec{chain, jumps});

    // grid and delay
    if (root.contains("grid")) {
        const auto& g = root.at("grid");
        reject_unknown(g, "config.grid", {"t0", "T", "K"});
        c.t0 = number(g, "config.grid", "t0", 0.0);
        c.T = number(g, "config.grid", "T", 1.0);
        c.K = static_cast<int>(integer(g, "config.grid", "K", 64));
    }
    if (root.contains("delay")) {
        const auto& d = root.at("delay");
        reject_unknown(d, "config.delay", {"delta", "L"});
        c.delta = number(d, "config.delay", "delta", 0.0);
        c.L = number(d, "config.delay", "L", 1.0);
        if (c.delta < 0.0 || !(c.L > 0.0)) throw InvalidSpec("config.delay: need delta >= 0 and L > 0");
    }

    if (root.contains("model")) c.model = parse_model(root.at("model"), "config.model", D);
    if (root.contains("model_b")) c.model_b = parse_model(root.at("model_b"), "config.model_b", D);
    if (root.contains("linear")) c.linear = parse_linear(root.at("linear"), "config.linear", D);
    if (root.contains("terminal")) {
        const auto& t = root.at("terminal");
        reject_unknown(t, "config.terminal", {"xi", "psi", "zeta", "theta"});
        c.terminal = TerminalData::constants(number(t, "config.terminal", "xi", 1.0),
                                             number(t, "config.terminal", "psi", 0.0),
                                             number(t, "config.terminal", "zeta", 0.0),
                                             number(t, "config.terminal", "theta", 0.0));
    }
    if (root.contains("checks")) {
        const auto& ck = root.at("checks");
        reject_unknown(ck, "config.checks", {"test_function", "regime_values", "refinements"});
        c.test_function = ck.value("test_function", std::string("square"));
        if (c.test_function != "square" && c.test_function != "identity" && c.test_function != "regime-values")
            throw InvalidSpec("config.checks.test_function: expected \"square\", \"identity\" or \"regime-values\"");
        if (ck.contains("regime_values")) c.regime_values = numbers(ck.at("regime_values"), "config.checks.regime_values");
        if (c.test_function == "regime-values" && static_cast<int>(c.regime_values.size()) != D)
            throw InvalidSpec("config.checks.regime_values: expected one value per regime");
        if (ck.contains("refinements")) {
            c.refinements.clear();
            for (double r : numbers(ck.at("refinements"), "config.checks.refinements")) {
                if (r < 1 || r != std::floor(r)) throw InvalidSpec("config.checks.refinements: positive integers only");
                c.refinements.push_back(static_cast<int>(r));
            }
            if (c.refinements.empty()) throw InvalidSpec("config.checks.refinements: must not be empty");
        }
    }

    if (!root.contains("run") || !root.at("run").contains("seed"))
        throw InvalidSpec("config.run.seed: required (runs must be reproducible)");
    {
        const auto& r = root.at("run");
        reject_unknown(r, "config.run", {"seed", "n_paths", "tol", "max_iter", "workers", "intensity"});
        if (!r.at("seed").is_number_unsigned() && !(r.at("seed").is_number_integer() && r.at("seed").get<std::int64_t>() >= 0))
            throw InvalidSpec("config.run.seed: expected a nonnegative integer");
        c.seed = r.at("seed").get<std::uint64_t>();
        const auto n = integer(r, "config.run", "n_paths", 1000);
        if (n < 1) throw InvalidSpec("config.run.n_paths: must be positive");
        c.n_paths = static_cast<std::uint64_t>(n);
        c.tol = number(r, "config.run", "tol", 1e-8);
        c.max_iter = static_cast<int>(integer(r, "config.run", "max_iter", 50));
        const auto w = integer(r, "config.run", "workers", 1);
        if (w < 1) throw InvalidSpec("config.run.workers: must be positive");
        c.workers = static_cast<unsigned>(w);
        const std::string mode = r.value("intensity", std::string("conditional"));
        if (mode == "current") c.intensity = AnticipatedIntensity::current;
        else if (mode != "conditional") throw InvalidSpec("config.run.intensity: expected \"conditional\" or \"current\"");
    }
    if (root.contains("output")) {
        const auto& o = root.at("output");
        reject_unknown(o, "config.output", {"prefix"});
        c.prefix = o.value("prefix", std::string());
    }

    try {
        (void)TimeGrid(c.t0, c.T, c.K);
    } catch (const InvalidArgument& e) {
        throw InvalidSpec(std::string("config.grid: ") + e.what());
    }
    try {
        (void)c.grid();
    } catch (const InvalidArgument& e) {
        throw InvalidSpec(std::string("config.delay.delta: ") + e.what());
    }
    c.effective = root;
    return c;
}

/// Applies command-line overrides to the raw JSON before validation.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> paths;
    std::optional<int> grid_k;
    std::optional<unsigned> workers;
};

inline Json apply_overrides(Json root, const Overrides& o) {
    if (!root.is_object()) throw InvalidSpec("config: expected a JSON object");
    if (o.seed) root["run"]["seed"] = *o.seed;
    if (o.paths) root["run"]["n_paths"] = *o.paths;
    if (o.grid_k) root["grid"]["K"] = *o.grid_k;
    if (o.workers) root["run"]["workers"] = *o.workers;
    return root;
}

inline Json parse_config_text(const std::string& text, const std::string& origin = "config") {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        const auto [line, col] = detail::line_column(text, e.byte > 0 ? e.byte - 1 : 0);
        throw InvalidSpec(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": parse error");
    }
}

inline ScenarioConfig load_config(const std::string& path, const Overrides& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw InvalidSpec("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(apply_overrides(parse_config_text(ss.str(), path), overrides));
}

} // namespace sdjr
