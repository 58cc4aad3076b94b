#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "chemobs/control.hpp"
#include "chemobs/dynamics.hpp"
#include "chemobs/errors.hpp"
#include "chemobs/kinetics.hpp"
#include "chemobs/observability.hpp"
#include "chemobs/observer.hpp"

namespace chemobs {

using json = nlohmann::ordered_json;

enum class ScenarioKind { simulate, observe, closed_loop, analyze, singular };

inline const char* to_string(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::simulate: return "simulate";
        case ScenarioKind::observe: return "observe";
        case ScenarioKind::closed_loop: return "closed_loop";
        case ScenarioKind::analyze: return "analyze";
        case ScenarioKind::singular: return "singular";
    }
    return "?";
}

/// A fully validated scenario document.
struct Scenario {
    ScenarioKind kind = ScenarioKind::simulate;

    struct SpeciesCfg {
        double a = 0.0, k = 0.0, b = 0.0, K = 1.0;  // K only used in k_mu mode
    };
    std::vector<SpeciesCfg> species;
    bool yield_scaled = false;  // g = K mu instead of g = mu
    bool bounded_domain = false;

    struct InputCfg {
        bool constant = true;
        double value = 0.0;
        double table_h = 0.0;
        std::vector<double> values;
    };
    std::optional<InputCfg> input_D, input_s_in;

    std::vector<double> x0;
    double s0 = 0.0;

    double h = 1e-3;
    double t_span = 0.0;

    struct ObserverCfg {
        double r = 0.0;
        std::vector<double> z0;
        double noise_std = 0.0;
    };
    std::optional<ObserverCfg> observer;

    struct FeedbackCfg {
        double D_star = 0.0, s_star = 0.0, x_star = 0.0, L = 0.0;
    };
    std::optional<FeedbackCfg> feedback;

    struct AnalyzeCfg {
        std::optional<double> s_in;   // absent: half-line only
        std::optional<double> D_max;
        double s_max = 0.0;
    };
    std::optional<AnalyzeCfg> analyze;

    struct SingularCfg {
        double s0 = 0.0;
        double t_max = 0.0;
        std::optional<double> s_in;  // present: domain (0, s_in)
    };
    std::optional<SingularCfg> singular;

    std::optional<std::uint64_t> seed;

    json echo;  // the parsed document, echoed into reports

    std::vector<SpeciesParams> build_species() const {
        std::vector<SpeciesParams> out;
        out.reserve(species.size());
        for (const auto& sc : species)
            out.push_back(yield_scaled ? monod_species_yield(sc.a, sc.k, sc.b, sc.K)
                                       : monod_species(sc.a, sc.k, sc.b));
        return out;
    }
};

namespace detail {

[[noreturn]] inline void cfg_fail(const std::string& path, const std::string& msg) {
    throw ConfigError(path.empty() ? msg : path + ": " + msg, path);
}

inline const json& need(const json& j, const char* key, const std::string& path) {
    if (!j.is_object()) cfg_fail(path, "expected an object");
    auto it = j.find(key);
    if (it == j.end()) cfg_fail(path.empty() ? key : path + "." + key, "missing field");
    return *it;
}

inline const json* opt(const json& j, const char* key) {
    if (!j.is_object()) return nullptr;
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

inline double num(const json& j, const std::string& path) {
    if (!j.is_number()) cfg_fail(path, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) cfg_fail(path, "must be finite");
    return v;
}

inline std::string join(const std::string& a, const std::string& b) {
    return a.empty() ? b : a + "." + b;
}

inline bool integer_multiple(double span, double h) {
    const double raw = span / h;
    return std::fabs(raw - std::round(raw)) <= 1e-9 * std::max(1.0, raw) &&
           std::round(raw) >= 1.0;
}

inline Scenario::InputCfg parse_input(const json& j, const std::string& path, double h_sim) {
    Scenario::InputCfg cfg;
    if (j.is_number()) {
        cfg.constant = true;
        cfg.value = num(j, path);
        if (cfg.value < 0.0) cfg_fail(path, "must be >= 0");
        return cfg;
    }
    if (!j.is_object()) cfg_fail(path, "expected a number or {h, values}");
    cfg.constant = false;
    cfg.table_h = num(need(j, "h", path), join(path, "h"));
    if (!(cfg.table_h > 0.0)) cfg_fail(join(path, "h"), "must be > 0");
    if (!integer_multiple(cfg.table_h, h_sim))
        cfg_fail(join(path, "h"), "must be an integer multiple of numerics.h");
    const json& vals = need(j, "values", path);
    if (!vals.is_array() || vals.empty()) cfg_fail(join(path, "values"), "expected a non-empty array");
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double v = num(vals[i], join(path, "values[" + std::to_string(i) + "]"));
        if (v < 0.0) cfg_fail(join(path, "values"), "samples must be >= 0");
        cfg.values.push_back(v);
    }
    return cfg;
}

/// Expand a per-table input to the per-step simulation grid convention.
inline std::vector<double> expand_input(const Scenario::InputCfg& cfg, double h_sim,
                                        std::size_t steps) {
    if (cfg.constant) return {cfg.value};
    const std::size_t stride = (std::size_t)std::round(cfg.table_h / h_sim);
    std::vector<double> out(steps);
    for (std::size_t j = 0; j < steps; ++j) {
        const std::size_t idx = j / stride;
        out[j] = cfg.values[idx < cfg.values.size() ? idx : cfg.values.size() - 1];
    }
    return out;
}

inline std::string fmt(double v) {
    std::array<char, 64> buf;
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

/// Numbers destined for report.json must be finite; anything else is a bug
/// upstream and is reported as a structured error instead.
inline json jnum(double v) {
    if (!std::isfinite(v)) throw EvaluationError("report: non-finite value");
    return v;
}

}  // namespace detail

/// Parse and validate a scenario from a JSON document.
inline Scenario parse_scenario_json(const json& doc) {
    using detail::cfg_fail;
    using detail::join;
    using detail::need;
    using detail::num;
    using detail::opt;

    Scenario sc;
    sc.echo = doc;

    const std::string kind = [&] {
        const json& k = need(doc, "kind", "");
        if (!k.is_string()) cfg_fail("kind", "expected a string");
        return k.get<std::string>();
    }();
    if (kind == "simulate") sc.kind = ScenarioKind::simulate;
    else if (kind == "observe") sc.kind = ScenarioKind::observe;
    else if (kind == "closed_loop") sc.kind = ScenarioKind::closed_loop;
    else if (kind == "analyze") sc.kind = ScenarioKind::analyze;
    else if (kind == "singular") sc.kind = ScenarioKind::singular;
    else cfg_fail("kind", "unknown kind '" + kind + "'");

    // --- model ---
    const json& model = need(doc, "model", "");
    const json& species = need(model, "species", "model");
    if (!species.is_array() || species.empty())
        cfg_fail("model.species", "expected a non-empty array");
    if (const json* gm = opt(model, "g_mode")) {
        if (!gm->is_string() ||
            (gm->get<std::string>() != "mu" && gm->get<std::string>() != "k_mu"))
            cfg_fail("model.g_mode", "expected \"mu\" or \"k_mu\"");
        sc.yield_scaled = gm->get<std::string>() == "k_mu";
    }
    std::vector<double> yields;
    if (sc.yield_scaled) {
        const json& K = need(model, "K", "model");
        if (K.is_number()) {
            yields.assign(species.size(), num(K, "model.K"));
        } else if (K.is_array() && K.size() == species.size()) {
            for (std::size_t i = 0; i < K.size(); ++i)
                yields.push_back(num(K[i], "model.K[" + std::to_string(i) + "]"));
        } else {
            cfg_fail("model.K", "expected a number or an array matching the species count");
        }
        for (double k : yields)
            if (!(k > 0.0)) cfg_fail("model.K", "yield constants must be > 0");
    }
    for (std::size_t i = 0; i < species.size(); ++i) {
        const std::string p = "model.species[" + std::to_string(i) + "]";
        Scenario::SpeciesCfg scfg;
        scfg.a = num(need(species[i], "a", p), join(p, "a"));
        scfg.k = num(need(species[i], "k", p), join(p, "k"));
        scfg.b = num(need(species[i], "b", p), join(p, "b"));
        if (!(scfg.a > 0.0)) cfg_fail(join(p, "a"), "must be > 0");
        if (!(scfg.k > 0.0)) cfg_fail(join(p, "k"), "must be > 0");
        if (!(scfg.b >= 0.0)) cfg_fail(join(p, "b"), "must be >= 0");
        if (sc.yield_scaled) scfg.K = yields[i];
        sc.species.push_back(scfg);
    }
    if (const json* dom = opt(model, "domain")) {
        if (!dom->is_string() ||
            (dom->get<std::string>() != "open" && dom->get<std::string>() != "bounded"))
            cfg_fail("model.domain", "expected \"open\" or \"bounded\"");
        sc.bounded_domain = dom->get<std::string>() == "bounded";
    }

    // --- numerics ---
    if (const json* nm = opt(doc, "numerics")) {
        if (const json* hh = opt(*nm, "h")) {
            sc.h = num(*hh, "numerics.h");
            if (!(sc.h > 0.0)) cfg_fail("numerics.h", "must be > 0");
        }
        if (const json* ts = opt(*nm, "t_span")) sc.t_span = num(*ts, "numerics.t_span");
    }

    const bool needs_dynamics = sc.kind == ScenarioKind::simulate ||
                                sc.kind == ScenarioKind::observe ||
                                sc.kind == ScenarioKind::closed_loop;

    if (needs_dynamics) {
        if (!(sc.t_span > 0.0)) cfg_fail("numerics.t_span", "missing or not > 0");
        if (!detail::integer_multiple(sc.t_span, sc.h))
            cfg_fail("numerics.t_span", "must be an integer multiple of numerics.h");

        const json& inputs = need(doc, "inputs", "");
        sc.input_s_in = detail::parse_input(need(inputs, "s_in", "inputs"), "inputs.s_in", sc.h);
        if (sc.kind == ScenarioKind::closed_loop) {
            if (opt(inputs, "D"))
                cfg_fail("inputs.D", "closed_loop scenarios compute D from the feedback law");
            if (!sc.input_s_in->constant)
                cfg_fail("inputs.s_in", "closed_loop scenarios require constant s_in");
        } else {
            sc.input_D = detail::parse_input(need(inputs, "D", "inputs"), "inputs.D", sc.h);
        }
        if (sc.bounded_domain && !sc.input_s_in->constant)
            cfg_fail("inputs.s_in", "bounded substrate domain requires constant s_in");

        const json& initial = need(doc, "initial", "");
        const json& x0 = need(initial, "x", "initial");
        if (!x0.is_array() || x0.size() != sc.species.size())
            cfg_fail("initial.x", "expected an array matching the species count");
        for (std::size_t i = 0; i < x0.size(); ++i) {
            const double v = num(x0[i], "initial.x[" + std::to_string(i) + "]");
            if (!(v > 0.0)) cfg_fail("initial.x", "biomass must be > 0");
            sc.x0.push_back(v);
        }
        sc.s0 = num(need(initial, "s", "initial"), "initial.s");
        if (!(sc.s0 > 0.0)) cfg_fail("initial.s", "must be > 0");
    }

    // --- observer block ---
    if (sc.kind == ScenarioKind::observe || sc.kind == ScenarioKind::closed_loop) {
        const json& ob = need(doc, "observer", "");
        Scenario::ObserverCfg ocfg;
        ocfg.r = num(need(ob, "r", "observer"), "observer.r");
        if (!(ocfg.r > 0.0)) cfg_fail("observer.r", "must be > 0");
        if (!detail::integer_multiple(ocfg.r, sc.h))
            cfg_fail("observer.r", "must be an integer multiple of numerics.h");
        if (const json* z0 = opt(ob, "z0")) {
            if (!z0->is_array() || z0->size() != sc.species.size())
                cfg_fail("observer.z0", "expected an array matching the species count");
            for (std::size_t i = 0; i < z0->size(); ++i) {
                const double v = num((*z0)[i], "observer.z0[" + std::to_string(i) + "]");
                if (!(v > 0.0)) cfg_fail("observer.z0", "must be > 0");
                ocfg.z0.push_back(v);
            }
        } else {
            ocfg.z0.assign(sc.species.size(), 1.0);
        }
        if (const json* ns = opt(ob, "noise_std")) {
            ocfg.noise_std = num(*ns, "observer.noise_std");
            if (!(ocfg.noise_std >= 0.0)) cfg_fail("observer.noise_std", "must be >= 0");
        }
        sc.observer = std::move(ocfg);
    }

    // --- feedback block ---
    if (sc.kind == ScenarioKind::closed_loop) {
        const json& fb = need(doc, "feedback", "");
        Scenario::FeedbackCfg fc;
        fc.D_star = num(need(fb, "D_star", "feedback"), "feedback.D_star");
        fc.s_star = num(need(fb, "s_star", "feedback"), "feedback.s_star");
        fc.x_star = num(need(fb, "x_star", "feedback"), "feedback.x_star");
        fc.L = num(need(fb, "L", "feedback"), "feedback.L");
        sc.feedback = fc;
        if (sc.species.size() != 1)
            cfg_fail("model.species", "closed_loop scenarios require exactly one species");
    }

    // --- analyze block ---
    if (sc.kind == ScenarioKind::analyze) {
        if (sc.species.size() != 2)
            cfg_fail("model.species", "analyze scenarios require exactly two species");
        Scenario::AnalyzeCfg ac;
        if (const json* az = opt(doc, "analyze")) {
            if (const json* si = opt(*az, "s_in")) {
                ac.s_in = num(*si, "analyze.s_in");
                if (!(*ac.s_in > 0.0)) cfg_fail("analyze.s_in", "must be > 0");
            }
            if (const json* dm = opt(*az, "D_max")) {
                ac.D_max = num(*dm, "analyze.D_max");
                if (!(*ac.D_max >= 0.0)) cfg_fail("analyze.D_max", "must be >= 0");
            }
            if (const json* sm = opt(*az, "s_max")) {
                ac.s_max = num(*sm, "analyze.s_max");
                if (!(ac.s_max > 0.0)) cfg_fail("analyze.s_max", "must be > 0");
            }
        }
        if (ac.s_max == 0.0) {
            double kmax = 0.0;
            for (const auto& s : sc.species) kmax = std::max(kmax, s.k);
            ac.s_max = ac.s_in ? *ac.s_in : 10.0 * kmax;
        }
        sc.analyze = ac;
    }

    // --- singular block ---
    if (sc.kind == ScenarioKind::singular) {
        if (sc.species.size() != 2)
            cfg_fail("model.species", "singular scenarios require exactly two species");
        const json& sg = need(doc, "singular", "");
        Scenario::SingularCfg scfg;
        scfg.s0 = num(need(sg, "s0", "singular"), "singular.s0");
        scfg.t_max = num(need(sg, "t_max", "singular"), "singular.t_max");
        if (!(scfg.s0 > 0.0)) cfg_fail("singular.s0", "must be > 0");
        if (!(scfg.t_max > 0.0)) cfg_fail("singular.t_max", "must be > 0");
        if (const json* si = opt(sg, "s_in")) {
            scfg.s_in = num(*si, "singular.s_in");
            if (!(*scfg.s_in > 0.0)) cfg_fail("singular.s_in", "must be > 0");
            if (!(scfg.s0 < *scfg.s_in)) cfg_fail("singular.s0", "must be < singular.s_in");
        }
        sc.singular = scfg;
    }

    // --- seed ---
    if (const json* sd = opt(doc, "seed")) {
        if (!sd->is_number_integer() ||
            (sd->is_number_integer() && !sd->is_number_unsigned() && sd->get<std::int64_t>() < 0))
            cfg_fail("seed", "expected a nonnegative integer");
        sc.seed = sd->get<std::uint64_t>();
    }
    if (sc.observer && sc.observer->noise_std > 0.0 && !sc.seed)
        cfg_fail("seed", "required whenever observer.noise_std > 0");

    if (sc.bounded_domain && needs_dynamics && sc.input_s_in->constant &&
        !(sc.s0 < sc.input_s_in->value))
        cfg_fail("initial.s", "must be below the inflow concentration for a bounded domain");

    return sc;
}

inline Scenario parse_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario file: " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("scenario is not valid JSON: ") + e.what());
    }
    return parse_scenario_json(doc);
}

/// Outcome of one scenario run. Exit codes: 0 success, 3 every observer
/// window singular in an observe run, 4 the state left its domain.
/// (Configuration and I/O errors are thrown as ConfigError / IoError and map
/// to exit codes 2 and 5 in the command-line tool.)
struct RunResult {
    int exit_code = 0;
    json report;
    std::filesystem::path report_path;
    std::filesystem::path csv_path;
};

namespace detail {

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << content;
    if (!out) throw IoError("write failed for " + p.string());
}

inline std::string trajectory_csv(const Trajectory& traj,
                                  const std::vector<std::vector<double>>* z,
                                  bool applied_D_column) {
    const std::size_t n = traj.states.empty() ? 0 : traj.states[0].x.size();
    std::string out = "t";
    for (std::size_t i = 1; i <= n; ++i) out += ",x" + std::to_string(i);
    out += ",s,D,s_in";
    if (z)
        for (std::size_t i = 1; i <= n; ++i) out += ",z" + std::to_string(i);
    if (applied_D_column) out += ",D_applied";
    out += '\n';
    for (std::size_t j = 0; j < traj.states.size(); ++j) {
        const std::size_t step = j < traj.steps() ? j : traj.steps() - 1;
        out += fmt(traj.time_at(j));
        for (double xi : traj.states[j].x) out += ',' + fmt(xi);
        out += ',' + fmt(traj.states[j].s);
        out += ',' + fmt(traj.D[step]);
        out += ',' + fmt(traj.s_in[step]);
        if (z)
            for (double zi : (*z)[j]) out += ',' + fmt(zi);
        if (applied_D_column) out += ',' + fmt(traj.D[step]);
        out += '\n';
    }
    return out;
}

inline json condition_entry_json(const ConditionEntry& e) {
    json j;
    j["holds"] = e.holds;
    j["best_c"] = e.best_c ? json(jnum(*e.best_c)) : json(nullptr);
    j["best_a"] = e.best_a ? json(jnum(*e.best_a)) : json(nullptr);
    j["r_min"] = e.r_min ? json(jnum(*e.r_min)) : json(nullptr);
    if (!e.reason.empty()) j["reason"] = e.reason;
    return j;
}

inline json gram_windows_json(const std::vector<GramRecord>& windows, double r) {
    json arr = json::array();
    for (std::size_t i = 0; i < windows.size(); ++i) {
        json w;
        w["index"] = i;
        w["t_reset"] = jnum(r * (double)(i + 1));
        w["det_normalized"] = jnum(windows[i].det_normalized);
        w["singular"] = windows[i].singular;
        arr.push_back(std::move(w));
    }
    return arr;
}

}  // namespace detail

/// Execute a scenario, writing trajectory.csv (for kinds that produce one)
/// and report.json into out_dir.
inline RunResult run_scenario(const Scenario& sc, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir))
        throw IoError("cannot create output directory " + out_dir.string());

    RunResult result;
    result.report_path = out_dir / "report.json";
    json& rep = result.report;
    rep["kind"] = to_string(sc.kind);
    rep["scenario"] = sc.echo;

    const auto finalize = [&](int code) {
        rep["exit_code"] = code;
        detail::write_file(result.report_path, rep.dump(2) + "\n");
        result.exit_code = code;
        return result;
    };

    const auto write_csv = [&](const std::string& body) {
        result.csv_path = out_dir / "trajectory.csv";
        detail::write_file(result.csv_path, body);
    };

    const auto terminal_state_json = [](const Trajectory& traj) {
        json t;
        json xs = json::array();
        for (double xi : traj.states.back().x) xs.push_back(detail::jnum(xi));
        t["x"] = std::move(xs);
        t["s"] = detail::jnum(traj.states.back().s);
        t["t"] = detail::jnum(traj.time_at(traj.states.size() - 1));
        return t;
    };

    try {
        switch (sc.kind) {
            case ScenarioKind::simulate: {
                const auto species = sc.build_species();
                const ChemostatModel model(
                    species, sc.bounded_domain
                                 ? SubstrateDomain::bounded_by_inflow(sc.input_s_in->value)
                                 : SubstrateDomain::open_half_line());
                const InputSignal inputs(
                    sc.h, detail::expand_input(*sc.input_D, sc.h, (std::size_t)std::round(sc.t_span / sc.h)),
                    detail::expand_input(*sc.input_s_in, sc.h, (std::size_t)std::round(sc.t_span / sc.h)));
                const Trajectory traj = integrate(model, State{sc.x0, sc.s0}, inputs, sc.t_span);
                write_csv(detail::trajectory_csv(traj, nullptr, false));
                rep["terminal_state"] = terminal_state_json(traj);
                rep["clamp_count"] = traj.clamp_count;
                return finalize(0);
            }

            case ScenarioKind::observe: {
                const auto species = sc.build_species();
                const ChemostatModel model(
                    species, sc.bounded_domain
                                 ? SubstrateDomain::bounded_by_inflow(sc.input_s_in->value)
                                 : SubstrateDomain::open_half_line());
                const std::size_t steps = (std::size_t)std::round(sc.t_span / sc.h);
                const InputSignal inputs(sc.h, detail::expand_input(*sc.input_D, sc.h, steps),
                                         detail::expand_input(*sc.input_s_in, sc.h, steps));
                std::optional<NoiseSpec> noise;
                const bool noisy = sc.observer->noise_std > 0.0;
                if (noisy) noise = NoiseSpec{sc.observer->noise_std, *sc.seed};
                const Trajectory traj =
                    integrate(model, State{sc.x0, sc.s0}, inputs, sc.t_span, noise);
                const MeasurementView view = MeasurementView::from_trajectory(traj, noisy);
                const ObserverRun run = run_observer(view, species, sc.observer->r,
                                                     sc.observer->z0);
                write_csv(detail::trajectory_csv(traj, &run.z, false));

                const std::size_t first = (std::size_t)std::round(sc.observer->r / sc.h);
                double max_abs = 0.0, max_rel = 0.0;
                for (std::size_t j = first; j < traj.states.size(); ++j)
                    for (std::size_t i = 0; i < species.size(); ++i) {
                        const double err = std::fabs(run.z[j][i] - traj.states[j].x[i]);
                        max_abs = std::max(max_abs, err);
                        max_rel = std::max(max_rel, err / (1.0 + traj.states[j].x[i]));
                    }

                json ob;
                ob["r"] = detail::jnum(sc.observer->r);
                ob["noise_std"] = detail::jnum(sc.observer->noise_std);
                ob["windows"] = detail::gram_windows_json(run.windows, sc.observer->r);
                ob["skipped_resets"] = run.skipped_resets;
                ob["clamped_estimates"] = run.clamped_estimates;
                ob["max_abs_est_error_after_r"] = detail::jnum(max_abs);
                ob["max_rel_est_error_after_r"] = detail::jnum(max_rel);
                json zfin = json::array();
                for (double zi : run.z.back()) zfin.push_back(detail::jnum(zi));
                ob["final_z"] = std::move(zfin);
                rep["observer"] = std::move(ob);
                rep["terminal_state"] = terminal_state_json(traj);
                rep["clamp_count"] = traj.clamp_count;

                const bool all_singular =
                    !run.windows.empty() && run.skipped_resets == run.windows.size();
                return finalize(all_singular ? 3 : 0);
            }

            case ScenarioKind::closed_loop: {
                const auto species = sc.build_species();
                const ChemostatModel model(species,
                                           SubstrateDomain::bounded_by_inflow(sc.input_s_in->value));
                FeedbackParams fp;
                fp.D_star = sc.feedback->D_star;
                fp.s_star = sc.feedback->s_star;
                fp.x_star = sc.feedback->x_star;
                fp.L = sc.feedback->L;
                fp.b = sc.species[0].b;
                fp.K = sc.yield_scaled ? sc.species[0].K : 1.0;
                const ClosedLoopRun run = closed_loop_simulate(
                    model, fp, sc.input_s_in->value, sc.observer->r,
                    {sc.x0[0], sc.s0, sc.observer->z0[0]}, sc.t_span, sc.h);

                std::vector<std::vector<double>> zcols(run.z.size());
                for (std::size_t j = 0; j < run.z.size(); ++j) zcols[j] = {run.z[j]};
                write_csv(detail::trajectory_csv(run.trajectory, &zcols, true));

                const std::size_t first = (std::size_t)std::round(sc.observer->r / sc.h);
                double max_rel = 0.0;
                for (std::size_t j = first; j < run.z.size(); ++j)
                    max_rel = std::max(max_rel,
                                       std::fabs(run.z[j] - run.trajectory.states[j].x[0]) /
                                           (1.0 + run.trajectory.states[j].x[0]));
                double terminal_err = std::max(
                    std::fabs(run.trajectory.states.back().s - fp.s_star),
                    std::max(std::fabs(run.trajectory.states.back().x[0] - fp.x_star),
                             std::fabs(run.z.back() - fp.x_star)));

                json cl;
                cl["target"] = {{"s_star", detail::jnum(fp.s_star)},
                                {"x_star", detail::jnum(fp.x_star)},
                                {"D_star", detail::jnum(fp.D_star)}};
                cl["terminal_error_inf"] = detail::jnum(terminal_err);
                cl["max_rel_z_vs_x_after_r"] = detail::jnum(max_rel);
                cl["windows"] = detail::gram_windows_json(run.windows, sc.observer->r);
                cl["skipped_resets"] = run.skipped_resets;
                cl["clamped_estimates"] = run.clamped_estimates;
                cl["z_terminal"] = detail::jnum(run.z.back());
                cl["D_terminal"] = detail::jnum(run.trajectory.D.back());
                rep["closed_loop"] = std::move(cl);
                rep["terminal_state"] = terminal_state_json(run.trajectory);
                rep["clamp_count"] = run.trajectory.clamp_count;
                return finalize(0);
            }

            case ScenarioKind::analyze: {
                const auto species = sc.build_species();
                const auto& p1 = species[0];
                const auto& p2 = species[1];

                json an;
                {
                    const CoexistenceResult cx = find_coexistence(p1, p2, sc.analyze->s_max);
                    json c;
                    c["s_max"] = detail::jnum(sc.analyze->s_max);
                    c["kind"] = cx.kind == CoexistenceResult::Kind::none ? "none"
                                : cx.kind == CoexistenceResult::Kind::points ? "points"
                                                                             : "degenerate";
                    json pts = json::array();
                    for (const auto& pt : cx.points) {
                        json p;
                        p["s_star"] = detail::jnum(pt.s_star);
                        p["D"] = detail::jnum(pt.D);
                        p["g1_star"] = detail::jnum(pt.g1_star);
                        p["g2_star"] = detail::jnum(pt.g2_star);
                        p["x_line"] = pt.x_line;
                        pts.push_back(std::move(p));
                    }
                    c["points"] = std::move(pts);
                    an["coexistence"] = std::move(c);
                }
                {
                    json b;
                    try {
                        const BatchIdentifiability bi = check_batch_identifiability(p1, p2);
                        b["supported"] = true;
                        b["strongly_observable"] = bi.strongly_observable;
                        b["reason"] = bi.reason;
                    } catch (const UnsupportedModelError& e) {
                        b["supported"] = false;
                        b["reason"] = e.what();
                    }
                    an["batch_identifiability"] = std::move(b);
                }
                {
                    const ConditionReport cr =
                        check_conditions(p1, p2, sc.analyze->s_in, sc.analyze->D_max);
                    json c;
                    c["s_in"] = sc.analyze->s_in ? json(detail::jnum(*sc.analyze->s_in))
                                                 : json(nullptr);
                    c["D_max"] = sc.analyze->D_max ? json(detail::jnum(*sc.analyze->D_max))
                                                   : json(nullptr);
                    c["used_quadratic"] = cr.used_quadratic;
                    if (cr.quadratic)
                        c["quadratic"] = {{"c2", detail::jnum(cr.quadratic->c2)},
                                          {"c1", detail::jnum(cr.quadratic->c1)},
                                          {"c0", detail::jnum(cr.quadratic->c0)}};
                    c["A1"] = detail::condition_entry_json(cr.a1);
                    c["A2"] = detail::condition_entry_json(cr.a2);
                    c["A3"] = detail::condition_entry_json(cr.a3);
                    c["A4"] = detail::condition_entry_json(cr.a4);
                    if (cr.a2_input_limited)
                        c["A2_input_limited"] =
                            detail::condition_entry_json(*cr.a2_input_limited);
                    an["conditions"] = std::move(c);
                }
                rep["analyze"] = std::move(an);
                return finalize(0);
            }

            case ScenarioKind::singular: {
                const auto species = sc.build_species();
                const SingularTrajectory st =
                    singular_trajectory(species[0], species[1], sc.singular->s0,
                                        sc.singular->t_max, sc.singular->s_in);
                std::string csv = "t,s\n";
                for (std::size_t j = 0; j < st.s.size(); ++j)
                    csv += detail::fmt(st.h * (double)j) + ',' + detail::fmt(st.s[j]) + '\n';
                write_csv(csv);

                json sg;
                sg["s0"] = detail::jnum(sc.singular->s0);
                sg["t_max"] = detail::jnum(sc.singular->t_max);
                sg["domain"] = sc.singular->s_in
                                   ? "(0, " + detail::fmt(*sc.singular->s_in) + ")"
                                   : "(0, +inf)";
                sg["exit_time"] = st.exit_time ? json(detail::jnum(*st.exit_time)) : json(nullptr);
                switch (st.exit_kind) {
                    case SingularTrajectory::Exit::none: sg["exit_kind"] = "none"; break;
                    case SingularTrajectory::Exit::left_boundary:
                        sg["exit_kind"] = "left-boundary";
                        break;
                    case SingularTrajectory::Exit::right_boundary:
                        sg["exit_kind"] = "right-boundary";
                        break;
                    case SingularTrajectory::Exit::blow_up: sg["exit_kind"] = "blow-up"; break;
                }
                sg["nodes_recorded"] = st.s.size();
                rep["singular"] = std::move(sg);
                return finalize(0);
            }
        }
    } catch (const IntegrationDomainError& e) {
        json err;
        err["type"] = "integration_domain_exit";
        err["message"] = e.what();
        err["time"] = detail::jnum(e.time);
        rep["error"] = std::move(err);
        return finalize(4);
    }
    throw Error("run_scenario: unreachable");
}

}  // namespace chemobs
