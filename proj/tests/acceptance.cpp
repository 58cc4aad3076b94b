// Acceptance suite: one pass/fail line per criterion, exit code = number of
// failed criteria. Each check pins its tolerance in code.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "chemobs/control.hpp"
#include "chemobs/dynamics.hpp"
#include "chemobs/observability.hpp"
#include "chemobs/observer.hpp"
#include "chemobs/scenario.hpp"

using namespace chemobs;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    std::vector<std::string> problems;
    std::vector<std::string> notes;

    void require(bool ok, const std::string& what) {
        if (!ok) problems.push_back(what);
    }
    void note(const std::string& what) { notes.push_back(what); }
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

fs::path work_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "chemobs_acceptance" / name;
    fs::remove_all(p);
    return p;
}

json load_report(const fs::path& dir) {
    std::ifstream in(dir / "report.json");
    std::ostringstream ss;
    ss << in.rdbuf();
    return json::parse(ss.str());
}

// ---------------------------------------------------------------------------

void criterion_1_deadbeat_n1(Criterion& c) {
    const std::vector<SpeciesParams> sp = {monod_species(2.0, 1.0, 0.0)};
    const Trajectory traj = integrate(ChemostatModel(sp), State{{1.0}, 0.5},
                                      InputSignal::constant(1e-3, 1.0, 3.0), 5.0);
    const MeasurementView view = MeasurementView::from_trajectory(traj);
    for (double z0 : {0.1, 10.0}) {
        const ObserverRun run = run_observer(view, sp, 1.0, {z0});
        double worst = 0.0;
        for (std::size_t j = 1000; j < traj.states.size(); ++j)
            worst = std::max(worst, std::fabs(run.z[j][0] - traj.states[j].x[0]) /
                                        (1.0 + traj.states[j].x[0]));
        c.note("z0 = " + fmt(z0) + ": max |z-x|/(1+x) on [1,5] = " + fmt(worst));
        c.require(worst <= 1e-4, "z0 = " + fmt(z0) + ": error " + fmt(worst) + " > 1e-4");
    }
}

void criterion_2_deadbeat_batch_n2(Criterion& c) {
    const std::vector<SpeciesParams> sp = {monod_species(2.0, 1.0, 0.05),
                                           monod_species(1.5, 2.0, 0.1)};
    const Trajectory traj = integrate(ChemostatModel(sp), State{{0.5, 0.7}, 2.0},
                                      InputSignal::constant(1e-3, 0.0, 0.0), 2.0);
    const ObserverRun run =
        run_observer(MeasurementView::from_trajectory(traj), sp, 0.5, {1.0, 1.0});
    double worst = 0.0;
    for (std::size_t j = 500; j < traj.states.size(); ++j)
        for (int i = 0; i < 2; ++i)
            worst = std::max(worst, std::fabs(run.z[j][i] - traj.states[j].x[i]));
    c.note("max |z-x|_inf on [0.5,2] = " + fmt(worst));
    c.require(worst <= 1e-3, "estimation error " + fmt(worst) + " > 1e-3");

    // the report surface must expose per-window determinants
    const json doc = json::parse(R"({
      "kind": "observe",
      "model": {"species": [{"a":2.0,"k":1.0,"b":0.05},{"a":1.5,"k":2.0,"b":0.1}]},
      "inputs": {"D": 0.0, "s_in": 0.0},
      "initial": {"x": [0.5, 0.7], "s": 2.0},
      "observer": {"r": 0.5, "z0": [1.0, 1.0]},
      "numerics": {"h": 0.001, "t_span": 2.0}
    })");
    const fs::path dir = work_dir("c2");
    const RunResult res = run_scenario(parse_scenario_json(doc), dir);
    c.require(res.exit_code == 0, "observe run exit code " + std::to_string(res.exit_code));
    const json rep = load_report(dir);
    const auto& windows = rep["observer"]["windows"];
    c.require(windows.size() == 4, "expected 4 windows in report.json");
    for (const auto& w : windows) {
        const double dn = w["det_normalized"].get<double>();
        c.require(dn > 1e-10, "window det_normalized " + fmt(dn) + " <= 1e-10");
    }
}

void criterion_3_coexistence_finder(Criterion& c) {
    const CoexistenceResult res =
        find_coexistence(monod_species(2.0, 1.0, 0.0), monod_species(3.0, 3.0, 0.0), 10.0);
    c.require(res.kind == CoexistenceResult::Kind::points, "no coexistence point found");
    c.require(res.points.size() == 1,
              "expected exactly one point, got " + std::to_string(res.points.size()));
    if (!res.points.empty()) {
        c.note("s* = " + fmt(res.points[0].s_star) + ", D = " + fmt(res.points[0].D));
        c.require(std::fabs(res.points[0].s_star - 3.0) <= 1e-6, "|s* - 3| > 1e-6");
        c.require(std::fabs(res.points[0].D - 1.5) <= 1e-6, "|D - 1.5| > 1e-6");
    }
}

void criterion_4_coexistence_singular_gram(Criterion& c) {
    const std::vector<SpeciesParams> sp = {monod_species(2.0, 1.0, 0.0),
                                           monod_species(3.0, 3.0, 0.0)};
    const ChemostatModel model(sp, SubstrateDomain::bounded_by_inflow(4.0));
    const Trajectory traj = integrate(model, State{{0.4, 0.6}, 3.0},
                                      InputSignal::constant(1e-3, 1.5, 4.0), 3.0);
    const ObserverRun run =
        run_observer(MeasurementView::from_trajectory(traj), sp, 0.5, {1.0, 1.0});
    c.require(!run.windows.empty(), "no observer windows");
    for (const GramRecord& g : run.windows) {
        c.require(g.singular, "window not flagged singular");
        c.require(std::fabs(g.det_normalized) <= 1e-10,
                  "det_normalized " + fmt(g.det_normalized) + " > 1e-10");
    }
    c.require(run.skipped_resets == run.windows.size(), "some reset was not skipped");

    const double err0 =
        std::max(std::fabs(run.z[0][0] - 0.4), std::fabs(run.z[0][1] - 0.6));
    double worst_gain = 0.0;
    for (std::size_t j = 0; j < run.z.size(); ++j) {
        const double err = std::max(std::fabs(run.z[j][0] - traj.states[j].x[0]),
                                    std::fabs(run.z[j][1] - traj.states[j].x[1]));
        worst_gain = std::max(worst_gain, err0 - err);
    }
    c.note("initial error " + fmt(err0) + ", max improvement " + fmt(worst_gain));
    c.require(worst_gain <= 1e-9, "estimate error improved despite singular windows");

    const json doc = json::parse(R"({
      "kind": "observe",
      "model": {"species": [{"a":2.0,"k":1.0,"b":0.0},{"a":3.0,"k":3.0,"b":0.0}],
                 "domain": "bounded"},
      "inputs": {"D": 1.5, "s_in": 4.0},
      "initial": {"x": [0.4, 0.6], "s": 3.0},
      "observer": {"r": 0.5, "z0": [1.0, 1.0]},
      "numerics": {"h": 0.001, "t_span": 3.0}
    })");
    const RunResult res = run_scenario(parse_scenario_json(doc), work_dir("c4"));
    c.require(res.exit_code == 3, "observe run should exit 3 (all windows singular), got " +
                                      std::to_string(res.exit_code));
}

void criterion_5_condition_checker(Criterion& c) {
    const SpeciesParams p1 = monod_species(1.0, 1.0, 0.0);
    const SpeciesParams p2 = monod_species(1.0, 2.0, 0.1);
    const QuadraticCoeffs q = observability_quadratic(p1, p2);
    c.require(std::fabs(q.c2 - 0.1) <= 1e-12, "c2 != 0.1");
    c.require(std::fabs(q.c1 - 1.3) <= 1e-12, "c1 != 1.3");
    c.require(std::fabs(q.c0 - 0.2) <= 1e-12, "c0 != 0.2");

    const ConditionReport rep = check_conditions(p1, p2, 3.0);
    c.require(rep.a2.holds, "A2 does not hold");
    if (rep.a2.holds) {
        c.require(std::fabs(*rep.a2.best_c - 0.2) <= 1e-12, "A2 best_c != 0.2");
        c.require(std::fabs(*rep.a2.r_min - 15.0) <= 1e-12, "A2 r_min != 15");
    }
    c.require(rep.a4.holds, "A4 does not hold");
    if (rep.a4.holds) {
        c.require(std::fabs(*rep.a4.best_a - 0.1) <= 1e-12, "A4 best_a != 0.1");
        c.require(std::fabs(*rep.a4.best_c - 0.2) <= 1e-12, "A4 best_c != 0.2");
        c.require(std::fabs(*rep.a4.r_min - 15.0) <= 1e-12, "A4 r_min != 15");
    }

    // stated expectation: swapping the species labels flips the verdicts to
    // A1/A3. The ratio is invariant under relabeling (numerator and kappa
    // both change sign), so this cannot hold; kept as stated and left red.
    const ConditionReport swp = check_conditions(p2, p1, 3.0);
    c.require(swp.a1.holds, "label-swapped pair: A1 expected but not reported "
                            "(ratio is relabeling-invariant; A2 holds instead)");
    c.require(swp.a3.holds, "label-swapped pair: A3 expected but not reported "
                            "(ratio is relabeling-invariant; A4 holds instead)");
    c.note("swapped-pair quadratic: c2 = " + fmt(observability_quadratic(p2, p1).c2) +
           ", c1 = " + fmt(observability_quadratic(p2, p1).c1) +
           ", c0 = " + fmt(observability_quadratic(p2, p1).c0) +
           " (identical to the unswapped pair)");

    // the A1/A3 machinery itself, demonstrated on a genuinely negative pair
    const ConditionReport neg =
        check_conditions(monod_species(1.0, 1.0, 0.1), monod_species(2.0, 2.0, 0.0), 3.0);
    c.note(std::string("negative-ratio pair (1,1,0.1)/(2,2,0): A1 ") +
           (neg.a1.holds ? "holds" : "fails") + " with c = " +
           (neg.a1.best_c ? fmt(*neg.a1.best_c) : "-") + ", A3 " +
           (neg.a3.holds ? "holds" : "fails"));
}

void criterion_6_singular_mechanism(Criterion& c) {
    const SpeciesParams p1 = monod_species(1.0, 1.0, 0.0);
    const SpeciesParams p2 = monod_species(1.0, 2.0, 0.1);
    const SingularTrajectory st = singular_trajectory(p1, p2, 0.01, 20.0, 3.0);
    c.require(st.exit_kind == SingularTrajectory::Exit::right_boundary,
              "expected right-boundary exit");
    c.require(st.exit_time && *st.exit_time <= 15.0,
              "exit_time " + (st.exit_time ? fmt(*st.exit_time) : "none") + " > 15");
    if (st.exit_time) c.note("exit right at t = " + fmt(*st.exit_time));

    // stated expectation for the label-swapped pair: left-boundary exit from
    // s0 = 2.99. The singular ODE is invariant under relabeling, so the
    // swapped pair drifts right exactly like the original; kept as stated.
    const SingularTrajectory swp = singular_trajectory(p2, p1, 2.99, 20.0, 3.0);
    c.require(swp.exit_kind == SingularTrajectory::Exit::left_boundary,
              std::string("label-swapped pair: left-boundary exit expected, got ") +
                  (swp.exit_kind == SingularTrajectory::Exit::right_boundary
                       ? "right-boundary"
                       : "other") +
                  " (singular ODE is relabeling-invariant)");
    if (swp.exit_time)
        c.note("swapped pair from 2.99 exits at t = " + fmt(*swp.exit_time));

    // left-exit mechanism on a genuinely negative pair
    const SingularTrajectory neg = singular_trajectory(
        monod_species(1.0, 1.0, 0.1), monod_species(2.0, 2.0, 0.0), 2.99, 20.0, 3.0);
    c.note(std::string("negative-ratio pair from 2.99: ") +
           (neg.exit_kind == SingularTrajectory::Exit::left_boundary ? "left exit at t = "
                                                                     : "no left exit, t = ") +
           (neg.exit_time ? fmt(*neg.exit_time) : "none"));
}

void criterion_7_closed_loop(Criterion& c) {
    const auto t_start = std::chrono::steady_clock::now();
    const ChemostatModel model({monod_species(2.0, 1.0, 0.0)},
                               SubstrateDomain::bounded_by_inflow(3.0));
    FeedbackParams fp;
    fp.D_star = 1.0;
    fp.s_star = 1.0;
    fp.x_star = 2.0;
    fp.L = 1.0;
    fp.b = 0.0;
    fp.K = 1.0;
    const double h = 1e-3, r = 0.5;
    const ClosedLoopRun run =
        closed_loop_simulate(model, fp, 3.0, r, {0.3, 0.2, 1.5}, 100.0, h);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    const auto err_at = [&](std::size_t j) {
        return std::max({std::fabs(run.trajectory.states[j].s - 1.0),
                         std::fabs(run.trajectory.states[j].x[0] - 2.0),
                         std::fabs(run.z[j] - 2.0)});
    };
    const double terminal = err_at(run.z.size() - 1);
    c.note("terminal error " + fmt(terminal) + ", runtime " + fmt(elapsed) + " s");
    c.require(terminal <= 1e-2, "terminal error " + fmt(terminal) + " > 1e-2");

    bool monotone = true;
    for (int t = 50; t < 100; ++t) {
        const auto j0 = (std::size_t)std::llround(t / h);
        const auto j1 = (std::size_t)std::llround((t + 1) / h);
        if (err_at(j1) > err_at(j0) * (1.0 + 1e-12) + 1e-300) monotone = false;
    }
    c.require(monotone, "error not monotone decreasing over t in [50,100]");

    double worst_rel = 0.0;
    for (std::size_t j = (std::size_t)std::llround(r / h); j < run.z.size(); ++j) {
        const double x = run.trajectory.states[j].x[0];
        worst_rel = std::max(worst_rel, std::fabs(run.z[j] - x) / (1.0 + x));
    }
    c.note("max |z-x|/(1+x) for t >= r: " + fmt(worst_rel));
    c.require(worst_rel <= 1e-4, "z-x relative error " + fmt(worst_rel) + " > 1e-4");
    c.require(elapsed < 30.0, "runtime " + fmt(elapsed) + " s >= 30 s");
}

void criterion_8_oracle_equivalence(Criterion& c) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const auto logu = [&](double lo, double hi) {
        return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * uni(rng));
    };
    const double h = 1e-3;

    int accepted = 0;
    double worst_agree = 0.0;
    while (accepted < 100) {
        const std::vector<SpeciesParams> sp = {
            monod_species(logu(0.2, 5.0), logu(0.2, 5.0), 0.2 * uni(rng)),
            monod_species(logu(0.2, 5.0), logu(0.2, 5.0), 0.2 * uni(rng))};
        const double r = std::max(1.0, std::round(logu(0.2, 1.0) / h)) * h;
        const double D = 0.5 * uni(rng);
        const double s_in = 1.0 + 4.0 * uni(rng);
        const State init{{logu(0.3, 3.0), logu(0.3, 3.0)}, logu(0.3, 3.0)};
        Trajectory traj;
        try {
            traj = integrate(ChemostatModel(sp), init, InputSignal::constant(h, D, s_in), r);
        } catch (const IntegrationDomainError&) {
            continue;
        }
        const ObserverWindow w =
            MeasurementView::from_trajectory(traj).window(0, traj.steps());
        const ReconstructionResult a = reconstruct_biomass(w, sp);
        if (!a.estimate || std::fabs(a.gram.det_normalized) < 1e-6) continue;
        const ReconstructionResult b = reconstruct_biomass_n2_closed_form(w, sp);
        if (!b.estimate) continue;
        ++accepted;
        for (int i = 0; i < 2; ++i)
            worst_agree = std::max(worst_agree,
                                   std::fabs((*a.estimate)[i] - (*b.estimate)[i]) /
                                       std::fabs((*a.estimate)[i]));
    }
    c.note("worst route disagreement over 100 windows: " + fmt(worst_agree));
    c.require(worst_agree <= 1e-10,
              "route disagreement " + fmt(worst_agree) + " > 1e-10");

    double worst_rec = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::vector<SpeciesParams> sp = {
            monod_species(logu(0.2, 5.0), logu(0.2, 5.0), 0.2 * uni(rng))};
        const double r = std::max(1.0, std::round(logu(0.2, 2.0) / h)) * h;
        const double D = 0.5 * uni(rng);
        const double s_in = 1.0 + 4.0 * uni(rng);
        const State init{{logu(0.3, 3.0)}, logu(0.3, 3.0)};
        const Trajectory traj =
            integrate(ChemostatModel(sp), init, InputSignal::constant(h, D, s_in), r);
        const ReconstructionResult res = reconstruct_biomass(
            MeasurementView::from_trajectory(traj).window(0, traj.steps()), sp);
        if (!res.estimate) {
            c.require(false, "single-species window unexpectedly singular");
            continue;
        }
        const double truth = traj.states.back().x[0];
        worst_rec = std::max(worst_rec, std::fabs((*res.estimate)[0] - truth) / truth);
    }
    c.note("worst recovery error over 50 single-species scenarios: " + fmt(worst_rec));
    c.require(worst_rec <= 1e-3, "recovery error " + fmt(worst_rec) + " > 1e-3");
}

void criterion_9_numerical_order(Criterion& c) {
    // reconstruction error is trapezoid-limited: halving h divides it by ~4
    const std::vector<SpeciesParams> sp = {monod_species(2.0, 1.0, 0.0)};
    const ChemostatModel model(sp);
    const auto est_error = [&](double h) {
        const Trajectory traj = integrate(model, State{{1.0}, 0.5},
                                          InputSignal::constant(h, 1.0, 3.0), 1.0);
        const Trajectory ref = integrate(model, State{{1.0}, 0.5},
                                         InputSignal::constant(h / 16.0, 1.0, 3.0), 1.0);
        const ReconstructionResult res = reconstruct_biomass(
            MeasurementView::from_trajectory(traj).window(0, traj.steps()), sp);
        return std::fabs((*res.estimate)[0] - ref.states.back().x[0]);
    };
    const double p1 = est_error(1e-3), p2 = est_error(5e-4);
    const double pfactor = p1 / p2;
    c.note("reconstruction error " + fmt(p1) + " -> " + fmt(p2) + ", factor " + fmt(pfactor));
    c.require(pfactor >= 3.0 && pfactor <= 5.0,
              "reconstruction error factor " + fmt(pfactor) + " outside [3,5]");

    // RK4 terminal error: halving h divides it by ~16
    const ChemostatModel fast({monod_species(60.0, 0.1, 0.0)});
    const auto terminal = [&](double h) {
        return integrate(fast, State{{0.5}, 3.0}, InputSignal::constant(h, 20.0, 4.0), 0.15)
            .states.back();
    };
    const State ref = terminal(1e-3 / 16.0);
    const auto err = [&](const State& st) {
        return std::max(std::fabs(st.x[0] - ref.x[0]), std::fabs(st.s - ref.s));
    };
    const double r1 = err(terminal(1e-3)), r2 = err(terminal(5e-4));
    const double rfactor = r1 / r2;
    c.note("RK4 terminal error " + fmt(r1) + " -> " + fmt(r2) + ", factor " + fmt(rfactor));
    c.require(rfactor >= 12.0 && rfactor <= 20.0,
              "RK4 error factor " + fmt(rfactor) + " outside [12,20]");
}

void criterion_10_conservation(Criterion& c) {
    const ChemostatModel model({monod_species(2.0, 1.0, 0.0), monod_species(1.5, 2.0, 0.0)});
    const Trajectory traj = integrate(model, State{{0.5, 0.7}, 2.0},
                                      InputSignal::constant(1e-3, 0.0, 0.0), 5.0);
    const double total0 = 0.5 + 0.7 + 2.0;
    double worst = 0.0;
    for (const State& st : traj.states)
        worst = std::max(worst, std::fabs(st.x[0] + st.x[1] + st.s - total0));
    c.note("max conservation drift " + fmt(worst));
    c.require(worst <= 1e-8, "conservation drift " + fmt(worst) + " > 1e-8");
}

}  // namespace

int main() {
    struct Entry {
        const char* name;
        std::function<void(Criterion&)> fn;
    };
    const std::vector<Entry> criteria = {
        {"1 dead-beat observer, one species", criterion_1_deadbeat_n1},
        {"2 dead-beat observer, two-species batch", criterion_2_deadbeat_batch_n2},
        {"3 coexistence finder", criterion_3_coexistence_finder},
        {"4 coexistence forces singular Gram", criterion_4_coexistence_singular_gram},
        {"5 condition checker constants", criterion_5_condition_checker},
        {"6 singular-trajectory mechanism", criterion_6_singular_mechanism},
        {"7 output-feedback closed loop", criterion_7_closed_loop},
        {"8 oracle equivalence", criterion_8_oracle_equivalence},
        {"9 numerical order", criterion_9_numerical_order},
        {"10 batch conservation", criterion_10_conservation},
    };

    int failures = 0;
    for (const Entry& e : criteria) {
        Criterion c;
        try {
            e.fn(c);
        } catch (const std::exception& ex) {
            c.problems.push_back(std::string("exception: ") + ex.what());
        }
        const bool ok = c.problems.empty();
        std::printf("[%s] criterion %s\n", ok ? "PASS" : "FAIL", e.name);
        for (const std::string& n : c.notes) std::printf("        note: %s\n", n.c_str());
        for (const std::string& p : c.problems)
            std::printf("        !!!   %s\n", p.c_str());
        if (!ok) ++failures;
    }
    std::printf("%d/%zu criteria passed\n", (int)criteria.size() - failures,
                criteria.size());
    return failures;
}
