#pragma once
// Command-line front end: verify, design, mati and simulate from one JSON config.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "spncs/config.hpp"

namespace spncs::cli {

enum ExitCode : int { pass = 0, analytic_failure = 1, usage_error = 2 };

struct Context {
    ExperimentConfig cfg;
    std::string out_dir;
    std::ostream* out = &std::cout;
};

inline Json report_header(const Context& c, const char* command) {
    Json j;
    j["tool"] = kToolVersion;
    j["command"] = command;
    j["config_hash"] = config_hash(c.cfg);
    j["config"] = resolved_config(c.cfg);
    return j;
}

inline void write_report(const Context& c, const std::string& name, const Json& j) {
    write_text((std::filesystem::path(c.out_dir) / name).string(), j.dump(2) + "\n");
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

/// Sampled constants pipeline for a design under the config's timing and protocols.
inline ConstantsLedger run_pipeline(const ExperimentConfig& cfg, const DesignResult& d, const ProtocolCertificate& cs,
                                    const ProtocolCertificate& cf) {
    const BoundsContext ctx = BoundsContext::make(cfg.plant, d, cfg.proto_s, cfg.proto_f, cs, cf);
    return epsilon_star_pipeline(ctx, cfg.timing, cfg.pipeline);
}

inline Json verify_to_json(const VerifyReport& v) {
    return {{"hurwitz", v.hurwitz},
            {"bl_lmi_max_eig", finite_or_null(v.bl_max_eig)},
            {"reduced_lmi_max_eig", finite_or_null(v.red_max_eig)},
            {"Pf_min_eig", finite_or_null(v.pf_min_eig)},
            {"Ps_min_eig", finite_or_null(v.ps_min_eig)},
            {"tolerance", tol::lmi},
            {"pass", v.pass}};
}

// ---------------------------------------------------------------- verify

inline int cmd_verify(const Context& c) {
    const ExperimentConfig& cfg = c.cfg;
    const DesignResult d = cfg.design_result();
    const ProtocolCertificate cs = certificate(cfg.proto_s), cf = certificate(cfg.proto_f);
    const VerifyReport v = verify_design(cfg.problem(cs, cf), d);
    const CertificateCheck ks = validate_certificate(cfg.proto_s, cs, 10000, cfg.pipeline.seed);
    const CertificateCheck kf = validate_certificate(cfg.proto_f, cf, 10000, cfg.pipeline.seed + 1);

    Json j = report_header(c, "verify");
    j["lmi"] = verify_to_json(v);
    auto cert = [](const ProtocolCertificate& pc, const CertificateCheck& k) {
        Json r = certificate_to_json(pc);
        r["validation"] = {{"samples", k.samples},
                           {"contraction_failures", k.contraction_failures},
                           {"sandwich_failures", k.sandwich_failures},
                           {"gradient_failures", k.gradient_failures},
                           {"pass", k.ok()}};
        return r;
    };
    j["protocols"] = {{"slow", cert(cs, ks)}, {"fast", cert(cf, kf)}};
    const bool ok = v.pass && ks.ok() && kf.ok();
    j["pass"] = ok;
    write_report(c, "verify.json", j);

    std::ostream& o = *c.out;
    o << "hurwitz A22 - L2f C2f: " << (v.hurwitz ? "yes" : "no") << "\n";
    o << "boundary-layer LMI lambda_max: " << fmt(v.bl_max_eig) << "\n";
    o << "reduced LMI lambda_max: " << fmt(v.red_max_eig) << "\n";
    o << "Pf lambda_min: " << fmt(v.pf_min_eig) << "  Ps lambda_min: " << fmt(v.ps_min_eig) << "\n";
    o << "protocol certificates: slow " << (ks.ok() ? "ok" : "FAIL") << ", fast " << (kf.ok() ? "ok" : "FAIL") << "\n";
    o << "verify: " << (ok ? "PASS" : "FAIL") << "\n";
    return ok ? pass : analytic_failure;
}

// ---------------------------------------------------------------- design

/// Config document with the designed gains and certificates substituted.
inline Json designed_config(const ExperimentConfig& cfg, const DesignResult& d) {
    Json j = cfg.raw;
    j.erase("gain_template");
    j["gains"] = {{"L1s", matrix_to_json(d.gains.L1s)}, {"L1f", matrix_to_json(d.gains.L1f)},
                  {"L2s", matrix_to_json(d.gains.L2s)}, {"L2f", matrix_to_json(d.gains.L2f)}};
    j["design"] = {{"Pf", matrix_to_json(d.fast->P.full())}, {"gamma_f", d.fast->gamma},
                   {"a_rho_f", d.fast->a_rho},                {"Ps", matrix_to_json(d.reduced->P.full())},
                   {"gamma_s", d.reduced->gamma},              {"a_rho_s", d.reduced->a_rho},
                   {"eta1", d.reduced->eta1}};
    return j;
}

inline int cmd_design(const Context& c) {
    const ExperimentConfig& cfg = c.cfg;
    const ProtocolCertificate cs = certificate(cfg.proto_s), cf = certificate(cfg.proto_f);
    const DesignProblem prob = cfg.problem(cs, cf);
    std::ostream& o = *c.out;
    Json j = report_header(c, "design");

    const DesignResult gf = min_gamma(LmiKind::boundary_layer, prob, cfg.search);
    const DesignResult gs = min_gamma(LmiKind::reduced, prob, cfg.search);
    j["min_gamma"] = {{"fast", design_to_json(gf)}, {"reduced", design_to_json(gs)}};
    o << "min gamma_f: " << fmt(gf.fast->gamma) << "  min gamma_s: " << fmt(gs.reduced->gamma) << "\n";

    const MatiObjective obj =
        make_mati_objective(cfg.plant, cfg.proto_s, cfg.proto_f, cs, cf, cfg.timing, cfg.pipeline);
    MaximizeStart start;
    if (cfg.has_design()) {
        start.fast = cfg.design_f;
        start.reduced = cfg.design_s;
    } else {
        start.fast = gf.fast;
        start.reduced = gs.reduced;
    }
    DesignProblem frozen = prob;
    frozen.structure.free.assign(prob.structure.size(), false);
    double reference = std::numeric_limits<double>::quiet_NaN();
    try {
        reference = maximize_mati_objective(frozen, obj, cfg.search, start).objective;
    } catch (const DesignInfeasible&) {
    }
    const DesignResult d = maximize_mati_objective(prob, obj, cfg.search, start);
    const VerifyReport v = verify_design(prob, d);
    j["design"] = design_to_json(d);
    j["design"]["verify"] = verify_to_json(v);
    j["reference_objective_at_initial_gains"] = finite_or_null(reference);
    o << "eps*T* at designed gains: " << fmt(d.objective) << "  at initial gains: " << fmt(reference) << "\n";

    const ConstantsLedger L = run_pipeline(cfg, d, cs, cf);
    j["ledger"] = ledger_to_json(L);
    o << "eps*: " << fmt(L.epsilon_star) << "  tau_mati_f: " << fmt(L.tau_mati_f) << "\n";

    write_report(c, "design.json", j);
    write_text((std::filesystem::path(c.out_dir) / "designed_config.json").string(),
               designed_config(cfg, d).dump(2) + "\n");
    o << "design: " << (v.pass ? "PASS" : "FAIL") << "\n";
    return v.pass ? pass : analytic_failure;
}

// ---------------------------------------------------------------- mati

inline int cmd_mati(const Context& c) {
    const ExperimentConfig& cfg = c.cfg;
    const DesignResult d = cfg.design_result();
    const ProtocolCertificate cs = certificate(cfg.proto_s), cf = certificate(cfg.proto_f);
    const ConstantsLedger L = run_pipeline(cfg, d, cs, cf);
    const bool eps_ok = cfg.plant.epsilon <= L.epsilon_star;
    const bool ok = L.slow_timing.ok() && eps_ok;

    Json j = report_header(c, "mati");
    j["ledger"] = ledger_to_json(L);
    j["preconditions"] = {{"slow_timing", L.slow_timing.ok()}, {"epsilon_below_epsilon_star", eps_ok}, {"pass", ok}};
    write_report(c, "mati.json", j);

    std::ostream& o = *c.out;
    o << "T(L_s, gamma_s, lambda_s): " << fmt(L.T_s) << "\n";
    o << "T*: " << fmt(L.T_star) << "\n";
    o << "eps*: " << fmt(L.epsilon_star) << "\n";
    o << "tau_mati_f: " << fmt(L.tau_mati_f) << "\n";
    o << "gamma_v1: " << fmt(L.gamma_v1) << "  gamma_v2: " << fmt(L.gamma_v2) << "  gamma_dus: " << fmt(L.gamma_dus)
      << "\n";
    o << "slow timing condition: " << (L.slow_timing.ok() ? "ok" : "FAIL") << "  eps <= eps*: " << (eps_ok ? "yes" : "no") << "\n";
    o << "mati: " << (ok ? "PASS" : "FAIL") << "\n";
    return ok ? pass : analytic_failure;
}

// ---------------------------------------------------------------- simulate

struct ScenarioOutcome {
    std::string name;
    HybridTrajectory traj;
    std::string error;  // set when the run threw
};

inline std::size_t thread_count(std::size_t jobs) {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("SPNCS_THREADS")) {
        try {
            n = std::max<long>(1, std::stol(env));
        } catch (const std::exception&) {
            throw InvalidConfig("SPNCS_THREADS must be a positive integer");
        }
    }
    return std::min(n, std::max<std::size_t>(1, jobs));
}

/// First time |xi|_E falls to `fraction` of its initial value and stays there; NaN if never.
inline double settling_time(const HybridTrajectory& tr, double fraction) {
    const double d0 = distance_to_attractor(tr.layout, tr.samples.front().state);
    double t_set = std::numeric_limits<double>::quiet_NaN();
    for (const auto& s : tr.samples) {
        if (distance_to_attractor(tr.layout, s.state) > fraction * d0) t_set = std::numeric_limits<double>::quiet_NaN();
        else if (std::isnan(t_set)) t_set = s.t;
    }
    return t_set;
}

inline std::vector<ScenarioOutcome> run_scenarios(const ExperimentConfig& cfg, const std::vector<ScheduledEvent>& events) {
    const FlowModel m(cfg.plant, cfg.effective_gains());
    std::vector<ScenarioOutcome> res(cfg.scenarios.size());
    SimOptions opt;
    opt.record_stride = cfg.record_stride;
    auto work = [&](std::size_t i) {
        const ScenarioConfig& sc = cfg.scenarios[i];
        res[i].name = sc.name;
        try {
            res[i].traj = simulate(m, cfg.proto_s, cfg.proto_f, cfg.schedule, events, sc.signals,
                                   initial_state(m, cfg.initial, sc.signals), cfg.horizon, opt);
        } catch (const Error& e) {
            res[i].error = e.what();
        }
    };
    const std::size_t nt = thread_count(res.size());
    if (nt <= 1) {
        for (std::size_t i = 0; i < res.size(); ++i) work(i);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nt; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t i = t; i < res.size(); i += nt) work(i);
            });
        for (auto& th : pool) th.join();
    }
    return res;
}

inline int cmd_simulate(const Context& c) {
    const ExperimentConfig& cfg = c.cfg;
    if (cfg.scenarios.empty()) throw InvalidConfig("simulation.scenarios is empty");
    const auto events = generate_schedule(cfg.schedule, cfg.horizon);
    const ScheduleCheck sched = check_schedule(events, cfg.schedule, cfg.horizon);
    std::ostream& o = *c.out;
    Json j = report_header(c, "simulate");
    j["schedule"] = {{"events", events.size()}, {"violations", sched.violations}, {"min_gap", sched.min_cross_gap}};
    if (!sched.ok()) {
        write_report(c, "simulate.json", j);
        o << "schedule violates its gap bounds\nsimulate: FAIL\n";
        return analytic_failure;
    }

    std::optional<ConstantsLedger> ledger;
    std::string ledger_error;
    if (cfg.has_design()) {
        try {
            ledger = run_pipeline(cfg, cfg.design_result(), certificate(cfg.proto_s), certificate(cfg.proto_f));
        } catch (const Error& e) {
            ledger_error = e.what();
        }
    } else {
        ledger_error = "no design block; DISS check skipped";
    }
    if (ledger) j["ledger"] = ledger_to_json(*ledger);
    else j["ledger_error"] = ledger_error;

    const auto results = run_scenarios(cfg, events);
    bool ok = true;
    Json scen = Json::array();
    for (const auto& r : results) {
        Json s{{"name", r.name}};
        if (!r.error.empty()) {
            s["error"] = r.error;
            ok = false;
            o << r.name << ": ERROR " << r.error << "\n";
            scen.push_back(s);
            continue;
        }
        const auto dir = std::filesystem::path(c.out_dir);
        {
            std::ostringstream a, b;
            write_trajectory_csv(a, r.traj);
            write_events_csv(b, r.traj);
            write_text((dir / (r.name + ".csv")).string(), a.str());
            write_text((dir / (r.name + "_events.csv")).string(), b.str());
        }
        const double d0 = distance_to_attractor(r.traj.layout, r.traj.samples.front().state);
        const double d1 = distance_to_attractor(r.traj.layout, r.traj.samples.back().state);
        const double ub = empirical_ultimate_bound(r.traj, cfg.horizon);
        s["samples"] = r.traj.samples.size();
        s["jumps"] = r.traj.events.size();
        s["initial_distance"] = d0;
        s["final_distance"] = d1;
        s["empirical_ultimate_bound"] = ub;
        s["settling_time_1e-3"] = finite_or_null(settling_time(r.traj, 1e-3));
        o << r.name << ": |xi|_E " << fmt(d0) << " -> " << fmt(d1) << ", ultimate bound " << fmt(ub);
        if (ledger) {
            const ScenarioConfig& sc = *std::find_if(cfg.scenarios.begin(), cfg.scenarios.end(),
                                                     [&](const ScenarioConfig& x) { return x.name == r.name; });
            const DissReport dr = check_diss(r.traj, *ledger, sc.signals, ledger->k_overshoot, ledger->rate,
                                             {cfg.plant.epsilon, cfg.schedule.tau_mati_s, cfg.schedule.tau_mati_f});
            s["diss"] = {{"holds", dr.holds},
                         {"min_margin", dr.min_margin},
                         {"violations", dr.violations},
                         {"samples", dr.samples},
                         {"k_overshoot", dr.k_overshoot},
                         {"rate", dr.rate},
                         {"precondition_errors", dr.precondition_errors}};
            ok = ok && dr.holds;
            o << ", DISS " << (dr.holds ? "holds" : "VIOLATED");
            if (!dr.precondition_errors.empty()) o << " (preconditions unmet)";
        }
        o << "\n";
        scen.push_back(s);
    }
    j["scenarios"] = scen;
    j["pass"] = ok;
    write_report(c, "simulate.json", j);
    o << "simulate: " << (ok ? "PASS" : "FAIL") << "\n";
    return ok ? pass : analytic_failure;
}

// ---------------------------------------------------------------- entry point

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Emulation-based observers for singularly perturbed networked control systems"};
    app.require_subcommand(1);
    std::string config, out_dir;
    std::optional<std::uint64_t> seed;
    const char* names[] = {"verify", "design", "mati", "simulate"};
    const char* help[] = {"check LMI certificates and protocol certificates",
                          "search gains and certificates maximizing eps* T*",
                          "compute MATI bounds, eps* and DISS gains",
                          "simulate the configured scenarios and check the DISS bound"};
    std::vector<CLI::App*> subs;
    for (int i = 0; i < 4; ++i) {
        CLI::App* s = app.add_subcommand(names[i], help[i]);
        s->add_option("-c,--config", config, "experiment config (JSON)")->required();
        s->add_option("-o,--out", out_dir, "output directory (default: config output_dir)");
        s->add_option("-s,--seed", seed, "override every random seed in the config");
        subs.push_back(s);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? pass : usage_error;
    }

    try {
        Context c;
        c.cfg = load_config(config);
        if (seed) {
            c.cfg.search.seed = *seed;
            c.cfg.pipeline.seed = *seed;
            c.cfg.schedule.seed = *seed;
        }
        c.out_dir = out_dir.empty() ? c.cfg.output_dir : out_dir;
        c.out = &out;
        std::filesystem::create_directories(c.out_dir);
        if (subs[0]->parsed()) return cmd_verify(c);
        if (subs[1]->parsed()) return cmd_design(c);
        if (subs[2]->parsed()) return cmd_mati(c);
        return cmd_simulate(c);
    } catch (const InvalidConfig& e) {
        err << "config error: " << e.what() << "\n";
        return usage_error;
    } catch (const InvalidInput& e) {
        err << "invalid input: " << e.what() << "\n";
        return usage_error;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "output error: " << e.what() << "\n";
        return usage_error;
    } catch (const Error& e) {
        err << "analytic failure: " << e.what() << "\n";
        return analytic_failure;
    }
}

}  // namespace spncs::cli
