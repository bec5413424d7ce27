#pragma once
// Experiment configuration (JSON) and report serialization.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "spncs/bounds.hpp"
#include "spncs/design.hpp"
#include "spncs/hybridsim.hpp"
#include "spncs/model.hpp"
#include "spncs/protocols.hpp"

namespace spncs {

inline constexpr const char* kToolVersion = "spncs 1.0.0";

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------- primitives

inline Matrix matrix_from_json(const Json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw InvalidConfig(what + ": expected a non-empty array of rows");
    const std::size_t r = j.size();
    if (!j[0].is_array() || j[0].empty()) throw InvalidConfig(what + ": rows must be non-empty arrays");
    const std::size_t c = j[0].size();
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        if (!j[i].is_array() || j[i].size() != c) throw InvalidConfig(what + ": ragged matrix");
        for (std::size_t k = 0; k < c; ++k) {
            if (!j[i][k].is_number()) throw InvalidConfig(what + ": non-numeric entry");
            m(i, k) = j[i][k].get<double>();
        }
    }
    return m;
}

inline Json matrix_to_json(const Matrix& m) {
    Json a = Json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (std::size_t k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
        a.push_back(row);
    }
    return a;
}

inline SymMatrix sym_from_json(const Json& j, const std::string& what) {
    const Matrix m = matrix_from_json(j, what);
    if (m.rows() != m.cols()) throw InvalidConfig(what + ": not square");
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t k = 0; k < i; ++k)
            if (m(i, k) != m(k, i)) throw InvalidConfig(what + ": not symmetric");
    return SymMatrix::from_lower(m);
}

inline double num(const Json& j, const char* key, const std::string& ctx) {
    if (!j.contains(key) || !j[key].is_number()) throw InvalidConfig(ctx + "." + key + ": missing or not a number");
    return j[key].get<double>();
}
inline double num_or(const Json& j, const char* key, double dflt) {
    if (!j.contains(key) || j[key].is_null()) return dflt;
    if (!j[key].is_number()) throw InvalidConfig(std::string(key) + ": not a number");
    return j[key].get<double>();
}
inline std::optional<double> opt_num(const Json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_number()) throw InvalidConfig(std::string(key) + ": not a number");
    return j[key].get<double>();
}

// ---------------------------------------------------------------- config

struct ScenarioConfig {
    std::string name;
    Signals signals;
};

struct ExperimentConfig {
    PlantParams plant;
    std::optional<ObserverGains> gains;
    std::optional<GainTemplate> gain_template;
    ProtocolState proto_s, proto_f;
    std::optional<LmiSide> design_f, design_s;
    SlowTimingCert timing;
    PipelineKnobs pipeline;
    SearchConfig search;
    double horizon = 10.0;
    SchedulePolicy schedule;
    InitialConditions initial;
    std::vector<ScenarioConfig> scenarios;
    std::size_t record_stride = 10;
    std::string output_dir = "out";
    Json raw;  // the document as read

    /// Gains from the explicit block, else from the template's initial parameters.
    ObserverGains effective_gains() const {
        if (gains) return *gains;
        if (gain_template) return gain_template->make(gain_template->initial);
        throw InvalidConfig("config: neither gains nor gain_template given");
    }
    bool has_design() const { return design_f.has_value() && design_s.has_value(); }
    DesignResult design_result() const {
        if (!has_design()) throw InvalidConfig("config: design block (Pf, gamma_f, a_rho_f, Ps, gamma_s, a_rho_s, eta1) required");
        DesignResult d;
        d.gains = effective_gains();
        d.fast = design_f;
        d.reduced = design_s;
        return d;
    }
    DesignProblem problem(const ProtocolCertificate& cs, const ProtocolCertificate& cf) const {
        DesignProblem p;
        p.plant = plant;
        p.structure = gain_template ? *gain_template : GainTemplate::fixed(effective_gains());
        p.cert_s = cs;
        p.cert_f = cf;
        return p;
    }
};

namespace detail {

inline SignalSpec signal_from_json(const Json& j) {
    if (j.is_number()) return SignalSpec::constant(j.get<double>());
    if (!j.is_object() || !j.contains("kind")) throw InvalidConfig("signal: expected object with 'kind'");
    const std::string k = j["kind"].get<std::string>();
    if (k == "zero") return SignalSpec::zero();
    if (k == "constant") return SignalSpec::constant(num(j, "value", "signal"));
    if (k == "ramp") return SignalSpec::ramp(num(j, "slope", "signal"), num_or(j, "offset", 0.0));
    if (k == "sinusoid") return SignalSpec::sinusoid(num(j, "amplitude", "signal"), num(j, "omega", "signal"));
    throw InvalidConfig("signal: unknown kind '" + k + "'");
}

inline Json signal_to_json(const SignalSpec& s) {
    switch (s.kind) {
        case SignalSpec::Kind::zero: return Json{{"kind", "zero"}};
        case SignalSpec::Kind::constant: return Json{{"kind", "constant"}, {"value", s.c}};
        case SignalSpec::Kind::ramp: return Json{{"kind", "ramp"}, {"slope", s.a}, {"offset", s.b}};
        case SignalSpec::Kind::sinusoid: return Json{{"kind", "sinusoid"}, {"amplitude", s.A}, {"omega", s.w}};
    }
    return Json();
}

inline VectorSignal vsignal_from_json(const Json& j, std::size_t n, const std::string& what) {
    VectorSignal v(n);
    if (j.is_null()) return v;
    if (!j.is_array() || j.size() != n) throw InvalidConfig(what + ": expected " + std::to_string(n) + " components");
    for (std::size_t i = 0; i < n; ++i) v[i] = signal_from_json(j[i]);
    return v;
}

inline Json vsignal_to_json(const VectorSignal& v) {
    Json a = Json::array();
    for (const auto& s : v) a.push_back(signal_to_json(s));
    return a;
}

inline ProtocolState protocol_from_json(const Json& j, std::size_t dim, const std::string& what) {
    ProtocolState p;
    p.kind = ProtocolKind::zeroing;
    std::vector<std::size_t> nodes{dim};
    if (!j.is_null()) {
        if (j.contains("kind")) p.kind = protocol_kind_from_string(j["kind"].get<std::string>());
        if (j.contains("nodes")) nodes = j["nodes"].get<std::vector<std::size_t>>();
    }
    try {
        p.partition = NodePartition(nodes);
    } catch (const InvalidInput& e) {
        throw InvalidConfig(what + ": " + e.what());
    }
    if (p.partition.total() != dim) throw InvalidConfig(what + ": node dimensions must sum to " + std::to_string(dim));
    return p;
}

inline Json protocol_to_json(const ProtocolState& p) {
    return Json{{"kind", to_string(p.kind)}, {"nodes", p.partition.dims}};
}

inline std::vector<std::vector<std::string>> string_matrix(const Json& j, const std::string& what) {
    if (!j.is_array()) throw InvalidConfig(what + ": expected array of rows");
    std::vector<std::vector<std::string>> out;
    for (const auto& row : j) {
        if (!row.is_array()) throw InvalidConfig(what + ": expected array of rows");
        std::vector<std::string> r;
        for (const auto& e : row) {
            if (e.is_string()) r.push_back(e.get<std::string>());
            else if (e.is_number()) {
                std::ostringstream os;
                os.precision(17);
                os << e.get<double>();
                r.push_back(os.str());
            } else throw InvalidConfig(what + ": entries must be strings or numbers");
        }
        out.push_back(r);
    }
    return out;
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace detail

inline ExperimentConfig parse_config(const Json& j) {
    if (!j.is_object()) throw InvalidConfig("config: top level must be an object");
    ExperimentConfig c;
    c.raw = j;
    try {
        if (!j.contains("plant")) throw InvalidConfig("config: missing 'plant'");
        const Json& p = j["plant"];
        c.plant.A11 = matrix_from_json(p.at("A11"), "plant.A11");
        c.plant.A12 = matrix_from_json(p.at("A12"), "plant.A12");
        c.plant.A21 = matrix_from_json(p.at("A21"), "plant.A21");
        c.plant.A22 = matrix_from_json(p.at("A22"), "plant.A22");
        c.plant.B1 = matrix_from_json(p.at("B1"), "plant.B1");
        c.plant.B2 = matrix_from_json(p.at("B2"), "plant.B2");
        c.plant.C1s = matrix_from_json(p.at("C1s"), "plant.C1s");
        c.plant.C2s = matrix_from_json(p.at("C2s"), "plant.C2s");
        c.plant.C2f = matrix_from_json(p.at("C2f"), "plant.C2f");
        c.plant.epsilon = num(p, "epsilon", "plant");
        try {
            c.plant.validate();
        } catch (const InvalidInput& e) {
            throw InvalidConfig(e.what());
        }
        const PlantParams& pl = c.plant;

        if (j.contains("gains")) {
            const Json& g = j["gains"];
            ObserverGains og{matrix_from_json(g.at("L1s"), "gains.L1s"), matrix_from_json(g.at("L1f"), "gains.L1f"),
                             matrix_from_json(g.at("L2s"), "gains.L2s"), matrix_from_json(g.at("L2f"), "gains.L2f")};
            try {
                og.validate(pl);
            } catch (const InvalidInput& e) {
                throw InvalidConfig(e.what());
            }
            c.gains = og;
        }
        if (j.contains("gain_template")) {
            const Json& t = j["gain_template"];
            GainTemplate gt;
            gt.names = t.at("params").get<std::vector<std::string>>();
            gt.initial = t.at("initial").get<std::vector<double>>();
            if (gt.initial.size() != gt.names.size()) throw InvalidConfig("gain_template: initial/params length mismatch");
            gt.free.assign(gt.names.size(), true);
            if (t.contains("free")) {
                const auto fr = t["free"].get<std::vector<bool>>();
                if (fr.size() != gt.names.size()) throw InvalidConfig("gain_template: free/params length mismatch");
                gt.free = fr;
            }
            gt.L1s = gt.parse_shape(detail::string_matrix(t.at("L1s"), "gain_template.L1s"));
            gt.L1f = gt.parse_shape(detail::string_matrix(t.at("L1f"), "gain_template.L1f"));
            gt.L2s = gt.parse_shape(detail::string_matrix(t.at("L2s"), "gain_template.L2s"));
            gt.L2f = gt.parse_shape(detail::string_matrix(t.at("L2f"), "gain_template.L2f"));
            try {
                gt.make(gt.initial).validate(pl);
            } catch (const InvalidInput& e) {
                throw InvalidConfig(std::string("gain_template: ") + e.what());
            }
            c.gain_template = gt;
        }
        if (!c.gains && !c.gain_template) throw InvalidConfig("config: need 'gains' or 'gain_template'");

        const Json prot = j.value("protocols", Json::object());
        c.proto_s = detail::protocol_from_json(prot.value("slow", Json()), pl.nys() + pl.nu(), "protocols.slow");
        c.proto_f = detail::protocol_from_json(prot.value("fast", Json()), pl.nyf(), "protocols.fast");
        if (c.proto_s.kind != ProtocolKind::zeroing)
            for (std::size_t k = 0, o = 0; k < c.proto_s.partition.nodes(); o += c.proto_s.partition.dims[k], ++k)
                if (o < pl.nys() && o + c.proto_s.partition.dims[k] > pl.nys())
                    throw InvalidConfig("protocols.slow: a node straddles the output/input boundary");

        if (j.contains("design")) {
            const Json& d = j["design"];
            LmiSide f, s;
            f.P = sym_from_json(d.at("Pf"), "design.Pf");
            f.gamma = num(d, "gamma_f", "design");
            f.a_rho = num(d, "a_rho_f", "design");
            s.P = sym_from_json(d.at("Ps"), "design.Ps");
            s.gamma = num(d, "gamma_s", "design");
            s.a_rho = num(d, "a_rho_s", "design");
            s.eta1 = num(d, "eta1", "design");
            if (f.P.dim() != pl.nz() || s.P.dim() != pl.nx()) throw InvalidConfig("design: P dimensions");
            if (!(f.gamma > 0 && s.gamma > 0)) throw InvalidConfig("design: gamma must be positive");
            if (!(f.a_rho > 0 && s.a_rho > 0) || s.eta1 < 0) throw InvalidConfig("design: a_rho > 0, eta1 >= 0 required");
            c.design_f = f;
            c.design_s = s;
        }

        const Json tm = j.value("timing", Json::object());
        c.timing.tau_mati_s = num_or(tm, "tau_mati_s", 0.15);
        c.timing.tau_miati_s = num_or(tm, "tau_miati_s", 1.49e-4);
        c.timing.lambda_s_star = num_or(tm, "lambda_s_star", 0.33);
        c.timing.lambda_f_star = num_or(tm, "lambda_f_star", 0.456);
        std::vector<double> eta{0.1, 0.1, 0.5};
        if (tm.contains("eta_s")) eta = tm["eta_s"].get<std::vector<double>>();
        if (eta.size() != 3) throw InvalidConfig("timing.eta_s: expected three values");
        c.timing.eta_s1 = eta[0];
        c.timing.eta_s2 = eta[1];
        c.timing.eta_s3 = eta[2];

        const Json pk = j.value("pipeline", Json::object());
        c.pipeline.mu_frac = num_or(pk, "mu_frac", 0.6);
        c.pipeline.mu1_frac = num_or(pk, "mu1_frac", 0.4);
        c.pipeline.lambda_tilde = opt_num(pk, "lambda_tilde");
        c.pipeline.lambda_final = opt_num(pk, "lambda_final");
        c.pipeline.eta1_split = num_or(pk, "eta1_split", 0.5);
        c.pipeline.completion_weight = num_or(pk, "completion_weight", 0.1);
        c.pipeline.samples = static_cast<std::size_t>(num_or(pk, "samples", 100000));
        c.pipeline.validation_samples = static_cast<std::size_t>(num_or(pk, "validation_samples", 1000000));
        c.pipeline.seed = static_cast<std::uint64_t>(num_or(pk, "seed", 1));

        const Json sc = j.value("search", Json::object());
        c.search.restarts = static_cast<int>(num_or(sc, "restarts", 32));
        c.search.sweeps = static_cast<int>(num_or(sc, "sweeps", 200));
        c.search.bisection_tol = num_or(sc, "bisection_tol", 1e-3);
        c.search.gamma_max = num_or(sc, "gamma_max", 100.0);
        c.search.seed = static_cast<std::uint64_t>(num_or(sc, "seed", 7));
        c.search.a_rho_floor = num_or(sc, "a_rho_floor", 1e-6);
        c.search.eta1_floor = num_or(sc, "eta1_floor", 1e-6);
        c.search.cma_restarts = static_cast<int>(num_or(sc, "cma_restarts", 4));
        c.search.max_evals = static_cast<std::size_t>(num_or(sc, "max_evals", 200000));

        const Json sim = j.value("simulation", Json::object());
        c.horizon = num_or(sim, "horizon", 10.0);
        c.record_stride = static_cast<std::size_t>(num_or(sim, "record_stride", 10));
        if (c.record_stride == 0) throw InvalidConfig("simulation.record_stride must be positive");
        const Json sch = sim.value("schedule", Json::object());
        const std::string mode = sch.value("mode", std::string("periodic"));
        if (mode == "periodic") c.schedule.mode = SchedulePolicy::Mode::periodic;
        else if (mode == "uniform_random") c.schedule.mode = SchedulePolicy::Mode::uniform_random;
        else throw InvalidConfig("simulation.schedule.mode: unknown '" + mode + "'");
        c.schedule.tau_mati_s = num_or(sch, "tau_mati_s", c.timing.tau_mati_s);
        c.schedule.tau_miati_s = num_or(sch, "tau_miati_s", c.timing.tau_miati_s);
        c.schedule.tau_mati_f = num_or(sch, "tau_mati_f", 0.007);
        c.schedule.tau_miati_f = num_or(sch, "tau_miati_f", 0.1 * c.schedule.tau_mati_f);
        c.schedule.seed = static_cast<std::uint64_t>(num_or(sch, "seed", 1));
        const Json ini = sim.value("initial", Json::object());
        auto vec = [&](const char* key, std::size_t n) {
            if (!ini.contains(key)) return Vector(n, 0.0);
            Vector v = ini[key].get<std::vector<double>>();
            if (v.size() != n) throw InvalidConfig(std::string("simulation.initial.") + key + ": wrong length");
            return v;
        };
        c.initial = {vec("x_p", pl.nx()), vec("z_p", pl.nz()), vec("x_o", pl.nx()), vec("z_o", pl.nz())};
        if (sim.contains("scenarios")) {
            for (const auto& s : sim["scenarios"]) {
                ScenarioConfig sc2;
                sc2.name = s.at("name").get<std::string>();
                sc2.signals.u_s = detail::vsignal_from_json(s.value("u_s", Json()), pl.nu(), sc2.name + ".u_s");
                sc2.signals.v1 = detail::vsignal_from_json(s.value("v1", Json()), pl.nys(), sc2.name + ".v1");
                sc2.signals.v2 = detail::vsignal_from_json(s.value("v2", Json()), pl.nyf(), sc2.name + ".v2");
                c.scenarios.push_back(sc2);
            }
        }
        c.output_dir = j.value("output_dir", std::string("out"));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(std::string("config: ") + e.what());
    }
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidConfig("cannot open config file: " + path);
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

/// Fully resolved configuration with every default made explicit.
inline Json resolved_config(const ExperimentConfig& c) {
    Json j;
    const PlantParams& p = c.plant;
    j["plant"] = {{"A11", matrix_to_json(p.A11)}, {"A12", matrix_to_json(p.A12)}, {"A21", matrix_to_json(p.A21)},
                  {"A22", matrix_to_json(p.A22)}, {"B1", matrix_to_json(p.B1)},   {"B2", matrix_to_json(p.B2)},
                  {"C1s", matrix_to_json(p.C1s)}, {"C2s", matrix_to_json(p.C2s)}, {"C2f", matrix_to_json(p.C2f)},
                  {"epsilon", p.epsilon}};
    if (c.gains)
        j["gains"] = {{"L1s", matrix_to_json(c.gains->L1s)}, {"L1f", matrix_to_json(c.gains->L1f)},
                      {"L2s", matrix_to_json(c.gains->L2s)}, {"L2f", matrix_to_json(c.gains->L2f)}};
    if (c.gain_template) j["gain_template"] = c.raw.at("gain_template");
    j["protocols"] = {{"slow", detail::protocol_to_json(c.proto_s)}, {"fast", detail::protocol_to_json(c.proto_f)}};
    if (c.has_design())
        j["design"] = {{"Pf", matrix_to_json(c.design_f->P.full())}, {"gamma_f", c.design_f->gamma},
                       {"a_rho_f", c.design_f->a_rho},                {"Ps", matrix_to_json(c.design_s->P.full())},
                       {"gamma_s", c.design_s->gamma},                {"a_rho_s", c.design_s->a_rho},
                       {"eta1", c.design_s->eta1}};
    j["timing"] = {{"tau_mati_s", c.timing.tau_mati_s},
                   {"tau_miati_s", c.timing.tau_miati_s},
                   {"lambda_s_star", c.timing.lambda_s_star},
                   {"eta_s", {c.timing.eta_s1, c.timing.eta_s2, c.timing.eta_s3}},
                   {"lambda_f_star", c.timing.lambda_f_star}};
    j["pipeline"] = {{"mu_frac", c.pipeline.mu_frac},
                     {"mu1_frac", c.pipeline.mu1_frac},
                     {"lambda_tilde", c.pipeline.lambda_tilde ? Json(*c.pipeline.lambda_tilde) : Json("geometric_midpoint")},
                     {"lambda_final", c.pipeline.lambda_final ? Json(*c.pipeline.lambda_final) : Json("midpoint")},
                     {"eta1_split", c.pipeline.eta1_split},
                     {"completion_weight", c.pipeline.completion_weight},
                     {"samples", c.pipeline.samples},
                     {"validation_samples", c.pipeline.validation_samples},
                     {"seed", c.pipeline.seed}};
    j["search"] = {{"restarts", c.search.restarts},       {"sweeps", c.search.sweeps},
                   {"bisection_tol", c.search.bisection_tol}, {"gamma_max", c.search.gamma_max},
                   {"seed", c.search.seed},               {"a_rho_floor", c.search.a_rho_floor},
                   {"eta1_floor", c.search.eta1_floor},   {"cma_restarts", c.search.cma_restarts},
                   {"max_evals", c.search.max_evals}};
    Json scen = Json::array();
    for (const auto& s : c.scenarios)
        scen.push_back({{"name", s.name},
                        {"u_s", detail::vsignal_to_json(s.signals.u_s)},
                        {"v1", detail::vsignal_to_json(s.signals.v1)},
                        {"v2", detail::vsignal_to_json(s.signals.v2)}});
    j["simulation"] = {
        {"horizon", c.horizon},
        {"record_stride", c.record_stride},
        {"schedule",
         {{"mode", c.schedule.mode == SchedulePolicy::Mode::periodic ? "periodic" : "uniform_random"},
          {"tau_mati_s", c.schedule.tau_mati_s},
          {"tau_miati_s", c.schedule.tau_miati_s},
          {"tau_mati_f", c.schedule.tau_mati_f},
          {"tau_miati_f", c.schedule.tau_miati_f},
          {"seed", c.schedule.seed}}},
        {"initial", {{"x_p", c.initial.x_p}, {"z_p", c.initial.z_p}, {"x_o", c.initial.x_o}, {"z_o", c.initial.z_o}}},
        {"scenarios", scen}};
    j["output_dir"] = c.output_dir;
    return j;
}

inline std::string config_hash(const ExperimentConfig& c) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << detail::fnv1a(resolved_config(c).dump());
    return os.str();
}

// ---------------------------------------------------------------- report pieces

inline Json certificate_to_json(const ProtocolCertificate& c) {
    return {{"aW_lower", c.aW_lower}, {"aW_upper", c.aW_upper}, {"lambda", c.lambda}, {"M", c.M},
            {"empirically_validated", c.empirical}};
}

inline Json side_to_json(const LmiSide& s, bool reduced) {
    Json j{{"P", matrix_to_json(s.P.full())}, {"gamma", s.gamma}, {"a_rho", s.a_rho}};
    if (reduced) j["eta1"] = s.eta1;
    j["lmi_max_eig"] = s.max_eig;
    return j;
}

inline Json design_to_json(const DesignResult& d) {
    Json j;
    j["gains"] = {{"L1s", matrix_to_json(d.gains.L1s)}, {"L1f", matrix_to_json(d.gains.L1f)},
                  {"L2s", matrix_to_json(d.gains.L2s)}, {"L2f", matrix_to_json(d.gains.L2f)}};
    j["params"] = d.params;
    if (d.fast) j["fast"] = side_to_json(*d.fast, false);
    if (d.reduced) j["reduced"] = side_to_json(*d.reduced, true);
    j["objective"] = std::isfinite(d.objective) ? Json(d.objective) : Json(nullptr);
    j["search"] = {{"restarts", d.config.restarts},
                   {"sweeps", d.config.sweeps},
                   {"bisection_tol", d.config.bisection_tol},
                   {"gamma_max", d.config.gamma_max},
                   {"seed", d.config.seed},
                   {"evaluations", d.evaluations}};
    return j;
}

inline Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json ledger_to_json(const ConstantsLedger& L) {
    Json j = Json::object();
    Json ent = Json::array();
    for (const auto& e : L.entries()) ent.push_back({{"name", e.name}, {"value", finite_or_null(e.value)}, {"formula", e.formula}});
    j["constants"] = ent;
    j["slow_timing"] = {{"T_s", L.slow_timing.T_s},
                   {"phi_transit_time", L.slow_timing.transit},
                   {"phi_at_tau_mati_s", finite_or_null(L.slow_timing.phi_at_mati)},
                   {"tau_mati_s_below_T", L.slow_timing.mati_below_T},
                   {"lambda_star_in_range", L.slow_timing.lambda_star_range},
                   {"phi_condition", L.slow_timing.phi_ok}};
    j["sampling"] = {{"lambdas_method", L.lambdas_meta.method},
                     {"lambdas_samples", L.lambdas_meta.samples},
                     {"lambdas_seed", L.lambdas_meta.seed},
                     {"lambdas_margin", L.lambdas_meta.margin},
                     {"lambda_validation_samples", L.lambda_validation.samples},
                     {"lambda_validation_failures", L.lambda_validation.failures},
                     {"interconnection_validation_samples", L.interconnection_validation.slow.samples},
                     {"interconnection_validation_failures",
                      L.interconnection_validation.slow.failures + L.interconnection_validation.fast.failures}};
    return j;
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidConfig("cannot write " + path);
    out << text;
}

}  // namespace spncs
